#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "tsa/error.hpp"
#include "tsa/io.hpp"
#include "tsa/optim.hpp"
#include "tsa/train.hpp"

using namespace tsa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tsa_train_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig tiny_experiment(Task task = Task::regression) {
  ExperimentConfig cfg;
  cfg.synth.videos = 8;
  cfg.synth.frames = 40;
  cfg.synth.frame_width = 64;
  cfg.synth.frame_height = 64;
  cfg.synth.grid_h = 4;
  cfg.synth.grid_w = 4;
  cfg.synth.clips = 3;
  cfg.synth.clip_length = 8;
  cfg.synth.channels = 4;
  cfg.synth.bins = 21;
  cfg.synth.task = task;
  cfg.model.hidden = {8};
  cfg.train.epochs = 4;
  cfg.train.batch_size = 2;
  cfg.train.optimizer.lr = 3e-3;
  cfg.set_seed(1);
  return cfg;
}

LoadedDataset make_data(const ExperimentConfig& cfg, const std::string& name) {
  const fs::path dir = scratch("data_" + name);
  return load_dataset(load_manifest(gen_synthetic(cfg.synth, dir)));
}

}  // namespace

TEST_CASE("adam with zero gradient and no decay keeps parameters") {
  MatrixXd w = MatrixXd::Constant(2, 3, 0.7);
  MatrixXd g = MatrixXd::Zero(2, 3);
  std::vector<MatrixXd*> params{&w};
  std::vector<MatrixXd> grads{g};
  AdamState state = AdamState::zeros(params);
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  for (int k = 0; k < 5; ++k) adam_step(params, grads, state, cfg);
  CHECK((w.array() == 0.7).all());
  CHECK(state.step == 5);
}

TEST_CASE("first adam step moves each weight by the learning rate") {
  MatrixXd w(1, 3);
  w << 1.0, -2.0, 0.5;
  const MatrixXd start = w;
  MatrixXd g(1, 3);
  g << 3.0, -0.01, 100.0;
  std::vector<MatrixXd*> params{&w};
  AdamState state = AdamState::zeros(params);
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  adam_step(params, std::vector<MatrixXd>{g}, state, cfg);
  for (Index k = 0; k < 3; ++k) CHECK(start(0, k) - w(0, k) == doctest::Approx(1e-4 * (g(0, k) > 0 ? 1 : -1)).epsilon(1e-4));

  MatrixXd still = start;
  std::vector<MatrixXd*> p2{&still};
  AdamState s2 = AdamState::zeros(p2);
  OptimizerConfig frozen;
  frozen.lr = 0.0;
  adam_step(p2, std::vector<MatrixXd>{g}, s2, frozen);
  CHECK(still == start);
}

TEST_CASE("adam minimizes a quadratic") {
  MatrixXd w = MatrixXd::Constant(1, 1, 5.0);
  std::vector<MatrixXd*> params{&w};
  AdamState state = AdamState::zeros(params);
  OptimizerConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const MatrixXd g = 2.0 * (w.array() - 1.5).matrix();
    adam_step(params, std::vector<MatrixXd>{g}, state, cfg);
  }
  CHECK(w(0, 0) == doctest::Approx(1.5).epsilon(1e-3));
  CHECK_THROWS_AS(adam_step(params, std::vector<MatrixXd>{MatrixXd::Zero(2, 1)}, state, cfg), ShapeError);
}

TEST_CASE("training is deterministic and resumable") {
  const ExperimentConfig cfg = tiny_experiment();
  const LoadedDataset data = make_data(cfg, "det");
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  const TrainResult ra = train(cfg, data, a);
  train(cfg, data, b);
  CHECK(slurp(ra.last_checkpoint / "weights.bin") == slurp(b / "checkpoints" / "train" / "last" / "weights.bin"));
  CHECK(slurp(a / "logs" / "train.jsonl") == slurp(b / "logs" / "train.jsonl"));

  ExperimentConfig half = cfg;
  half.train.epochs = 2;
  const TrainResult first = train(half, data, c);
  const TrainResult rest = train(cfg, data, c, first.last_checkpoint);
  CHECK(rest.log.size() == 2);
  CHECK(rest.log.front().epoch == 3);
  CHECK(slurp(rest.last_checkpoint / "weights.bin") == slurp(ra.last_checkpoint / "weights.bin"));
  CHECK(slurp(c / "logs" / "train.jsonl") == slurp(a / "logs" / "train.jsonl"));
  for (const fs::path& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("loss falls and a tiny set can be fit") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.train.epochs = 40;
  cfg.train.optimizer.lr = 1e-2;
  const LoadedDataset data = make_data(cfg, "fit");
  const fs::path out = scratch("fit");
  const TrainResult r = train(cfg, data, out);
  REQUIRE(r.log.size() == 40);
  CHECK(r.log[4].train_loss < r.log[0].train_loss);
  const Checkpoint ck = load_checkpoint(r.last_checkpoint);
  const auto report = evaluate(ck.net, data, "train");
  CHECK(report["spearman"].get<double>() > 0.9);
  fs::remove_all(out);
}

TEST_CASE("evaluation does not depend on sample order") {
  const ExperimentConfig cfg = tiny_experiment();
  LoadedDataset data = make_data(cfg, "order");
  const TsaNet net(model_config_for(cfg, data));
  const auto a = evaluate(net, data, "test");
  std::reverse(data.test.begin(), data.test.end());
  const auto b = evaluate(net, data, "test");
  CHECK(a == b);
  CHECK(a["count"] == data.test.size());
}

TEST_CASE("distribution reports multiply by the difficulty") {
  const ExperimentConfig cfg = tiny_experiment(Task::distribution);
  const LoadedDataset data = make_data(cfg, "dist");
  const TsaNet net(model_config_for(cfg, data));
  const auto report = evaluate(net, data, "test");
  const VectorXd support = data.manifest.distribution.support();
  for (const auto& p : report["predictions"]) {
    const auto it = std::find_if(data.test.begin(), data.test.end(), [&](const LoadedSample& s) { return s.id == p["id"]; });
    REQUIRE(it != data.test.end());
    const VectorXd probs = net.forward_features(it->input, it->tube);
    const double dd = *it->label.difficulty;
    CHECK(p["dd"].get<double>() == dd);
    CHECK(p["predicted"].get<double>() == doctest::Approx(dd * support.dot(probs)).epsilon(1e-12));
    CHECK(p["truth"].get<double>() == *it->label.score);
  }
}

TEST_CASE("checkpoints reject unknown versions") {
  const ExperimentConfig cfg = tiny_experiment();
  const LoadedDataset data = make_data(cfg, "ckpt");
  TsaNet net(model_config_for(cfg, data));
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir, net, nullptr);
  const Checkpoint back = load_checkpoint(dir);
  auto a = back.net.parameter_values();
  auto b = net.parameter_values();
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k] == *b[k]);

  auto doc = read_json_file(dir / "model.json");
  doc["version"] = kCheckpointVersion + 1;
  write_json_file(dir / "model.json", doc);
  CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("experiment config parsing") {
  const auto doc = to_json(tiny_experiment());
  CHECK(to_json(parse_experiment_config(doc)) == doc);
  auto bad = doc;
  bad["train"]["learning_rate"] = 0.1;
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
  bad = doc;
  bad["train"]["depth"] = 7;
  CHECK_THROWS_AS(
      [&] {
        const ExperimentConfig c = parse_experiment_config(bad);
        const LoadedDataset data = make_data(c, "bad");
        TsaNet net(model_config_for(c, data));
      }(),
      ConfigError);
}
