#include "tsa/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "tsa/config_reader.hpp"
#include "tsa/error.hpp"
#include "tsa/geometry.hpp"
#include "tsa/io.hpp"
#include "tsa/metrics.hpp"
#include "tsa/rng.hpp"

namespace tsa {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  optimizer.validate();
}

void ExperimentConfig::set_seed(std::uint64_t seed) {
  synth.seed = seed;
  train.seed = seed;
}

ExperimentConfig parse_experiment_config(const json& doc) {
  ExperimentConfig cfg;
  ConfigReader top(doc, "");
  if (top.has("synth")) cfg.synth = parse_synth_config(top.raw("synth"));

  if (top.has("model")) {
    ConfigReader r(top.raw("model"), "model");
    r.read("reduction_factor", cfg.model.reduction_factor);
    r.read("stage2_channels", cfg.model.stage2_channels);
    r.read("trainable_backbone", cfg.model.trainable_backbone);
    if (r.has("channels")) {
      Index c = 0;
      r.read("channels", c);
      cfg.model.channels = c;
    }
    r.finish();
    if (cfg.model.reduction_factor < 1) throw ConfigError("model.reduction_factor", "must be >= 1");
    if (cfg.model.stage2_channels < 1) throw ConfigError("model.stage2_channels", "must be >= 1");
    if (cfg.model.channels && *cfg.model.channels < 1) throw ConfigError("model.channels", "must be >= 1");
  }

  if (top.has("head")) {
    ConfigReader r(top.raw("head"), "head");
    if (r.has("hidden")) {
      const json& h = r.raw("hidden");
      if (!h.is_array()) throw ConfigError("head.hidden", "expected an array of layer sizes");
      cfg.model.hidden.clear();
      for (const json& v : h) {
        if (!v.is_number_integer() || v.get<Index>() < 1) {
          throw ConfigError("head.hidden", "layer sizes must be integers >= 1");
        }
        cfg.model.hidden.push_back(v.get<Index>());
      }
    }
    r.finish();
  }

  if (top.has("train")) {
    ConfigReader r(top.raw("train"), "train");
    r.read("epochs", cfg.train.epochs);
    r.read("batch_size", cfg.train.batch_size);
    r.read("depth", cfg.model.depth);
    r.read("seed", cfg.train.seed);
    r.read("flip", cfg.train.flip);
    r.read("temporal_offset", cfg.train.temporal_offset);
    r.read("lr", cfg.train.optimizer.lr);
    r.read("beta1", cfg.train.optimizer.beta1);
    r.read("beta2", cfg.train.optimizer.beta2);
    r.read("eps", cfg.train.optimizer.eps);
    r.read("weight_decay", cfg.train.optimizer.weight_decay);
    r.finish();
    if (cfg.model.depth < 0 || cfg.model.depth > kMaxStackDepth) {
      throw ConfigError("train.depth", "must be in [0, " + std::to_string(kMaxStackDepth) + "]");
    }
  }
  top.finish();
  cfg.train.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config", "file does not exist: " + path.string());
  json doc;
  try {
    doc = read_json_file(path);
  } catch (const FormatError& e) {
    throw ConfigError("config", e.what());
  }
  return parse_experiment_config(doc);
}

json to_json(const ExperimentConfig& cfg) {
  json model = {{"reduction_factor", cfg.model.reduction_factor},
                {"stage2_channels", cfg.model.stage2_channels},
                {"trainable_backbone", cfg.model.trainable_backbone}};
  if (cfg.model.channels) model["channels"] = *cfg.model.channels;
  const OptimizerConfig& o = cfg.train.optimizer;
  return {{"synth", to_json(cfg.synth)},
          {"model", model},
          {"head", {{"hidden", cfg.model.hidden}}},
          {"train",
           {{"epochs", cfg.train.epochs},
            {"batch_size", cfg.train.batch_size},
            {"depth", cfg.model.depth},
            {"seed", cfg.train.seed},
            {"flip", cfg.train.flip},
            {"temporal_offset", cfg.train.temporal_offset},
            {"lr", o.lr},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"weight_decay", o.weight_decay}}}};
}

const std::vector<LoadedSample>& LoadedDataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  throw UsageError("unknown split '" + name + "' (expected train or test)");
}

LoadedDataset load_dataset(const DatasetManifest& manifest) {
  LoadedDataset data;
  data.manifest = manifest;
  const GridSpec& spec = manifest.geometry;
  const TubeGrid grid = spec.tube_grid();
  for (const SampleRecord& rec : manifest.samples) {
    LoadedSample s;
    s.id = rec.id;
    s.category = rec.category;
    s.label = rec.label;
    s.raw = !rec.clip.empty();
    s.input = read_ft1(s.raw ? rec.clip : rec.features);
    const std::vector<TrackBox> boxes = read_boxes(rec.boxes);
    s.tube = build_tube(boxes, spec, manifest.tau);
    std::vector<TrackBox> reflected;
    reflected.reserve(boxes.size());
    for (const TrackBox& b : boxes) reflected.push_back(reflect_x(b, spec.frame_width));
    s.tube_flipped = build_tube(reflected, spec, manifest.tau);

    const Dims5& d = s.input.dims();
    if (s.raw) {
      if (d.n != grid.n || d.t != spec.layout.clip_length) {
        throw DataError("sample '" + rec.id + "': raw clips have dims " + to_string(d) + ", geometry expects " +
                        std::to_string(grid.n) + " clips of " + std::to_string(spec.layout.clip_length) +
                        " frames");
      }
    } else if (d.n != grid.n || d.t != grid.t || d.h != grid.h || d.w != grid.w) {
      throw DataError("sample '" + rec.id + "': features have dims " + to_string(d) + ", tube grid is " +
                      to_string(grid));
    }
    (rec.split == "train" ? data.train : data.test).push_back(std::move(s));
  }
  return data;
}

ModelConfig model_config_for(const ExperimentConfig& cfg, const LoadedDataset& data) {
  const std::vector<LoadedSample>& any = data.train.empty() ? data.test : data.train;
  if (any.empty()) throw DataError("dataset has no samples");
  const DatasetManifest& m = data.manifest;
  ModelConfig mc;
  BackboneConfig& b = mc.backbone;
  b.clip_frames = m.geometry.layout.clip_length;
  b.stride = m.geometry.stride;
  b.grid_h = m.geometry.grid_h;
  b.grid_w = m.geometry.grid_w;
  b.stage2_channels = cfg.model.stage2_channels;
  b.trainable = cfg.model.trainable_backbone;
  b.seed = derive_seed(cfg.train.seed, "backbone");
  const Dims5& d = any.front().input.dims();
  if (any.front().raw) {
    b.input_h = d.h;
    b.input_w = d.w;
    b.input_channels = d.c;
    if (!cfg.model.channels) throw ConfigError("model.channels", "required for raw-clip datasets");
    b.channels = *cfg.model.channels;
  } else {
    b.input_h = d.h;
    b.input_w = d.w;
    b.input_channels = d.c;
    if (cfg.model.channels && *cfg.model.channels != d.c) {
      throw ConfigError("model.channels", "is " + std::to_string(*cfg.model.channels) + " but the features carry " +
                                              std::to_string(d.c) + " channels");
    }
    b.channels = d.c;
  }
  mc.head.task = m.task;
  mc.head.hidden = cfg.model.hidden;
  switch (m.task) {
    case Task::regression: mc.head.outputs = 1; break;
    case Task::classification: mc.head.outputs = m.classes; break;
    case Task::distribution: mc.head.outputs = m.distribution.bins; break;
  }
  mc.depth = cfg.model.depth;
  mc.reduction_factor = cfg.model.reduction_factor;
  mc.seed = derive_seed(cfg.train.seed, "init");
  mc.validate();
  return mc;
}

namespace {

VectorXd run_forward(const TsaNet& net, const FeatureTensorXd& input, bool raw, const TubeIndex& tube,
                     TsaNet::Cache* cache) {
  return raw ? net.forward_clips(input, tube, cache) : net.forward_features(input, tube, cache);
}

double difficulty(const Label& l) { return l.difficulty.value_or(1.0); }

struct LossEval {
  double value = 0.0;
  VectorXd grad;
};

LossEval task_loss(const VectorXd& out, const Label& label, const DatasetManifest& m) {
  LossEval e;
  switch (m.task) {
    case Task::regression: {
      const ScalarLoss l = loss_mse(out(0), m.normalization.normalize(*label.score));
      e.value = l.value;
      e.grad = VectorXd::Constant(1, l.grad);
      break;
    }
    case Task::classification: {
      e.grad = VectorXd::Zero(out.size());
      for (Index k = 0; k < out.size(); ++k) {
        const ScalarLoss l = loss_bce(out(k), *label.cls == k ? 1.0 : 0.0);
        e.value += l.value;
        e.grad(k) = l.grad;
      }
      break;
    }
    case Task::distribution: {
      const VectorXd support = m.distribution.support();
      const ScoreDistribution target =
          gt_distribution(*label.score / difficulty(label), m.distribution.sigma, support);
      const VectorLoss l = loss_kl(target, ScoreDistribution{support, out});
      e.value = l.value;
      e.grad = l.grad;
      break;
    }
  }
  return e;
}

double truth_value(const LoadedSample& s, Task task) {
  return task == Task::classification ? static_cast<double>(*s.label.cls) : *s.label.score;
}

struct Predictions {
  std::vector<std::size_t> order;  // sample indices sorted by id
  std::vector<double> predicted;
  std::vector<double> truth;
};

Predictions predict_split(const TsaNet& net, const std::vector<LoadedSample>& samples, const DatasetManifest& m) {
  Predictions p;
  p.order.resize(samples.size());
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  std::sort(p.order.begin(), p.order.end(),
            [&](std::size_t a, std::size_t b) { return samples[a].id < samples[b].id; });
  for (std::size_t k : p.order) {
    const LoadedSample& s = samples[k];
    const VectorXd out = run_forward(net, s.input, s.raw, s.tube, nullptr);
    p.predicted.push_back(predict(net, out, s, m));
    p.truth.push_back(truth_value(s, m.task));
  }
  return p;
}

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double selection_value(const Predictions& p, Task task) {
  if (task == Task::classification) {
    std::vector<int> pred(p.predicted.begin(), p.predicted.end());
    std::vector<int> truth(p.truth.begin(), p.truth.end());
    return accuracy(pred, truth);
  }
  try {
    return spearman(ScoreSeries{p.predicted, p.truth});
  } catch (const NumericError&) {
    return nan_value();
  }
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what);
}

}  // namespace

double predict(const TsaNet&, const VectorXd& output, const LoadedSample& s, const DatasetManifest& m) {
  switch (m.task) {
    case Task::regression: return m.normalization.denormalize(output(0));
    case Task::classification: {
      Index best = 0;
      output.maxCoeff(&best);
      return static_cast<double>(best);
    }
    case Task::distribution: {
      const ScoreDistribution dist{m.distribution.support(), output};
      return final_score(dist.expectation(), difficulty(s.label));
    }
  }
  return 0.0;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"train_loss", train_loss}, {"test_metric", number_or_null(test_metric)}, {"metric", metric}};
}

std::string selection_metric(Task task) { return task == Task::classification ? "accuracy" : "spearman"; }

TrainResult train(const ExperimentConfig& cfg, const LoadedDataset& data, const fs::path& out_dir,
                  const std::optional<fs::path>& resume, const std::string& run) {
  cfg.train.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.test.empty()) throw DataError("test split is empty");
  const DatasetManifest& m = data.manifest;

  TsaNet net(model_config_for(cfg, data));
  std::vector<MatrixXd*> trainable;
  std::vector<std::size_t> trainable_slots;
  {
    const std::vector<NamedParam> params = net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!params[k].trainable) continue;
      trainable.push_back(params[k].value);
      trainable_slots.push_back(k);
    }
  }
  TrainingState state;
  state.adam = AdamState::zeros(trainable);

  if (resume) {
    Checkpoint ck = load_checkpoint(*resume);
    if (!ck.state) throw FormatError(resume->string() + ": checkpoint carries no training state");
    if (to_json(ck.net.config()) != to_json(net.config())) {
      throw FormatError(resume->string() + ": checkpoint model does not match the configured model");
    }
    std::vector<NamedParam> from = ck.net.parameters();
    std::vector<NamedParam> to = net.parameters();
    for (std::size_t k = 0; k < to.size(); ++k) *to[k].value = *from[k].value;
    state = std::move(*ck.state);
    if (state.adam.m.size() != trainable.size()) throw FormatError(resume->string() + ": optimizer state mismatch");
  }

  const fs::path log_dir = out_dir / "logs";
  const fs::path ckpt_dir = out_dir / "checkpoints" / run;
  fs::create_directories(log_dir);
  fs::create_directories(ckpt_dir);
  const fs::path log_path = log_dir / (run + ".jsonl");
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());

  TrainResult result;
  result.best_checkpoint = ckpt_dir / "best";
  result.last_checkpoint = ckpt_dir / "last";
  const std::string metric_name = selection_metric(m.task);
  const std::size_t count = data.train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.train.batch_size);

  for (std::int64_t epoch = state.epoch + 1; epoch <= cfg.train.epochs; ++epoch) {
    const auto epoch_index = static_cast<std::uint64_t>(epoch);
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.train.seed, "shuffle", epoch_index));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng aug_rng(derive_seed(cfg.train.seed, "augment", epoch_index));
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<int> offset_dist(-1, 1);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < count; start += batch) {
      const std::size_t stop = std::min(count, start + batch);
      std::vector<MatrixXd> grads;
      for (MatrixXd* p : trainable) grads.push_back(MatrixXd::Zero(p->rows(), p->cols()));
      for (std::size_t k = start; k < stop; ++k) {
        const LoadedSample& s = data.train[order[k]];
        const bool flip = cfg.train.flip && coin(aug_rng);
        const int offset = cfg.train.temporal_offset ? offset_dist(aug_rng) : 0;
        FeatureTensorXd input = flip ? mirror_w(s.input) : s.input;
        TubeIndex tube = flip ? s.tube_flipped : s.tube;
        if (offset != 0) {
          const Index shift = s.raw ? offset * m.geometry.stride : offset;
          input = shift_time(input, shift);
          tube = tube.shifted_time(offset);
        }
        TsaNet::Cache cache;
        const VectorXd out = run_forward(net, input, s.raw, tube, &cache);
        const LossEval loss = task_loss(out, s.label, m);
        require_finite(loss.value, "non-finite loss at epoch " + std::to_string(epoch) + " on sample '" + s.id + "'");
        loss_sum += loss.value;
        const std::vector<MatrixXd> g = net.backward(cache, tube, loss.grad);
        for (std::size_t t = 0; t < trainable.size(); ++t) grads[t] += g[trainable_slots[t]];
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (MatrixXd& g : grads) {
        g *= scale;
        if (!g.allFinite()) throw NumericError("non-finite gradient at epoch " + std::to_string(epoch));
      }
      adam_step(trainable, grads, state.adam, cfg.train.optimizer);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(count);
    rec.metric = metric_name;
    rec.test_metric = selection_value(predict_split(net, data.test, m), m.task);
    log << rec.to_json().dump() << '\n';
    log.flush();
    result.log.push_back(rec);

    state.epoch = epoch;
    const bool better = state.best_epoch == 0 ||
                        (std::isfinite(rec.test_metric) &&
                         (!std::isfinite(state.best_metric) || rec.test_metric > state.best_metric));
    if (better) {
      state.best_metric = rec.test_metric;
      state.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, net, &state);
    }
    save_checkpoint(result.last_checkpoint, net, &state);
  }
  if (!fs::exists(result.last_checkpoint / "model.json")) save_checkpoint(result.last_checkpoint, net, &state);
  if (!fs::exists(result.best_checkpoint / "model.json")) save_checkpoint(result.best_checkpoint, net, &state);
  result.best_metric = state.best_metric;
  result.best_epoch = state.best_epoch;
  return result;
}

json evaluate(const TsaNet& net, const LoadedDataset& data, const std::string& split) {
  const std::vector<LoadedSample>& samples = data.split(split);
  const DatasetManifest& m = data.manifest;
  if (samples.empty()) throw DataError(split + " split is empty");
  if (net.config().head.task != m.task) {
    throw FormatError("checkpoint task '" + to_string(net.config().head.task) + "' does not match dataset task '" +
                      to_string(m.task) + "'");
  }
  const Predictions p = predict_split(net, samples, m);

  json report = {{"task", to_string(m.task)}, {"split", split}, {"count", samples.size()},
                 {"metric", selection_metric(m.task)}};
  json predictions = json::array();
  for (std::size_t k = 0; k < p.order.size(); ++k) {
    const LoadedSample& s = samples[p.order[k]];
    json entry = {{"id", s.id}, {"category", s.category}, {"predicted", p.predicted[k]}, {"truth", p.truth[k]}};
    if (s.label.difficulty) entry["dd"] = *s.label.difficulty;
    predictions.push_back(std::move(entry));
  }

  if (m.task == Task::classification) {
    report["accuracy"] = selection_value(p, m.task);
  } else {
    report["spearman"] = number_or_null(selection_value(p, m.task));
    report["mse"] = mean_squared_error(p.predicted, p.truth);

    std::map<std::string, ScoreSeries> by_category;
    for (std::size_t k = 0; k < p.order.size(); ++k) {
      ScoreSeries& series = by_category[samples[p.order[k]].category];
      series.predicted.push_back(p.predicted[k]);
      series.truth.push_back(p.truth[k]);
    }
    json per_category = json::object();
    std::vector<double> rhos;
    std::vector<std::string> warnings;
    for (const auto& [category, series] : by_category) {
      try {
        const double rho = spearman(series);
        per_category[category] = rho;
        rhos.push_back(rho);
      } catch (const Error& e) {
        per_category[category] = nullptr;
        warnings.push_back("category '" + category + "': " + e.what());
      }
    }
    report["per_category"] = per_category;
    if (!rhos.empty()) {
      const FisherAverage fz = fisher_z_average(rhos);
      warnings.insert(warnings.end(), fz.warnings.begin(), fz.warnings.end());
      report["fisher_z"] = {{"value", fz.value}, {"warnings", warnings}};
    } else {
      report["fisher_z"] = {{"value", nullptr}, {"warnings", warnings}};
    }
  }
  report["predictions"] = predictions;
  return report;
}

}  // namespace tsa
