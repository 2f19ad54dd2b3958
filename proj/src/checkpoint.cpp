#include "tsa/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "tsa/error.hpp"
#include "tsa/io.hpp"

namespace tsa {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const ModelConfig& cfg) {
  const BackboneConfig& b = cfg.backbone;
  return {{"backbone",
           {{"clip_frames", b.clip_frames},
            {"input_h", b.input_h},
            {"input_w", b.input_w},
            {"input_channels", b.input_channels},
            {"stride", b.stride},
            {"grid_h", b.grid_h},
            {"grid_w", b.grid_w},
            {"channels", b.channels},
            {"stage2_channels", b.stage2_channels},
            {"seed", b.seed},
            {"trainable", b.trainable}}},
          {"head", {{"task", to_string(cfg.head.task)}, {"hidden", cfg.head.hidden}, {"outputs", cfg.head.outputs}}},
          {"depth", cfg.depth},
          {"reduction_factor", cfg.reduction_factor},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& doc) {
  try {
    ModelConfig cfg;
    const json& b = doc.at("backbone");
    cfg.backbone.clip_frames = b.at("clip_frames").get<Index>();
    cfg.backbone.input_h = b.at("input_h").get<Index>();
    cfg.backbone.input_w = b.at("input_w").get<Index>();
    cfg.backbone.input_channels = b.at("input_channels").get<Index>();
    cfg.backbone.stride = b.at("stride").get<Index>();
    cfg.backbone.grid_h = b.at("grid_h").get<Index>();
    cfg.backbone.grid_w = b.at("grid_w").get<Index>();
    cfg.backbone.channels = b.at("channels").get<Index>();
    cfg.backbone.stage2_channels = b.at("stage2_channels").get<Index>();
    cfg.backbone.seed = b.at("seed").get<std::uint64_t>();
    cfg.backbone.trainable = b.at("trainable").get<bool>();
    const json& h = doc.at("head");
    cfg.head.task = parse_task(h.at("task").get<std::string>());
    cfg.head.hidden = h.at("hidden").get<std::vector<Index>>();
    cfg.head.outputs = h.at("outputs").get<Index>();
    cfg.depth = doc.at("depth").get<Index>();
    cfg.reduction_factor = doc.at("reduction_factor").get<Index>();
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

namespace {

json blob_entry(const std::string& name, const MatrixXd& m, std::size_t& offset) {
  json e = {{"name", name},
            {"shape", {m.rows(), m.cols()}},
            {"offset", offset},
            {"count", static_cast<std::size_t>(m.size())}};
  offset += static_cast<std::size_t>(m.size());
  return e;
}

void write_blob(std::ostream& out, const MatrixXd& m) {
  write_le_doubles(out, m.data(), static_cast<std::size_t>(m.size()));
}

// Reads the entries of `table` in order into `targets`, checking names,
// shapes and offsets against what the reader expects.
void read_blobs(std::istream& in, const json& table, std::span<MatrixXd* const> targets,
                std::span<const std::string> names, std::size_t& offset, const std::string& source) {
  if (!table.is_array() || table.size() != targets.size()) {
    throw FormatError(source + ": expected " + std::to_string(targets.size()) + " blob entries");
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const json& e = table[k];
    MatrixXd& m = *targets[k];
    if (e.at("name").get<std::string>() != names[k]) {
      throw FormatError(source + ": blob " + std::to_string(k) + " is '" + e.at("name").get<std::string>() +
                        "', expected '" + names[k] + "'");
    }
    const Index rows = e.at("shape").at(0).get<Index>();
    const Index cols = e.at("shape").at(1).get<Index>();
    if (rows != m.rows() || cols != m.cols()) {
      throw FormatError(source + ": blob '" + names[k] + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", model expects " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()));
    }
    if (e.at("offset").get<std::size_t>() != offset) throw FormatError(source + ": blob offsets out of order");
    read_le_doubles(in, m.data(), static_cast<std::size_t>(m.size()), source);
    offset += static_cast<std::size_t>(m.size());
  }
}

void expect_end(std::istream& in, const std::string& source) {
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(source + ": trailing bytes after last blob");
}

void check_header(const json& doc, const char* format, const std::string& source) {
  if (!doc.is_object() || doc.value("format", "") != format) {
    throw FormatError(source + ": not a " + std::string(format) + " file");
  }
  const int version = doc.value("version", 0);
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (doc.value("dtype", "") != "f64") throw FormatError(source + ": only f64 checkpoints are supported");
}

}  // namespace

void save_checkpoint(const fs::path& dir, const TsaNet& net, const TrainingState* state) {
  fs::create_directories(dir);
  auto& mutable_net = const_cast<TsaNet&>(net);
  const std::vector<NamedParam> params = mutable_net.parameters();

  std::size_t offset = 0;
  json table = json::array();
  for (const NamedParam& p : params) table.push_back(blob_entry(p.name, *p.value, offset));

  json doc = {{"format", "tsa-checkpoint"},
              {"version", kCheckpointVersion},
              {"dtype", "f64"},
              {"task", to_string(net.config().head.task)},
              {"seed", net.config().seed},
              {"reduction_factor", net.config().reduction_factor},
              {"depth", net.config().depth},
              {"model", to_json(net.config())},
              {"params", table}};

  const fs::path blob_path = dir / "weights.bin";
  std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + blob_path.string());
  for (const NamedParam& p : params) write_blob(out, *p.value);

  if (state) {
    json moments = json::array();
    std::size_t slot = 0;
    for (const NamedParam& p : params) {
      if (!p.trainable) continue;
      if (slot >= state->adam.m.size()) throw ShapeError("save_checkpoint: optimizer state is missing moments");
      moments.push_back(blob_entry(p.name + ".m", state->adam.m[slot], offset));
      moments.push_back(blob_entry(p.name + ".v", state->adam.v[slot], offset));
      write_blob(out, state->adam.m[slot]);
      write_blob(out, state->adam.v[slot]);
      ++slot;
    }
    if (slot != state->adam.m.size()) throw ShapeError("save_checkpoint: optimizer state has extra moments");
    doc["training"] = {{"epoch", state->epoch},
                       {"best_metric", std::isfinite(state->best_metric) ? json(state->best_metric) : json(nullptr)},
                       {"best_epoch", state->best_epoch},
                       {"adam_step", state->adam.step},
                       {"moments", moments}};
  }
  out.close();
  if (!out) throw DataError("failed writing " + blob_path.string());
  write_json_file(dir / "model.json", doc);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path json_path = dir / "model.json";
  const fs::path blob_path = dir / "weights.bin";
  if (!fs::exists(json_path)) throw FormatError("checkpoint is missing " + json_path.string());
  if (!fs::exists(blob_path)) throw FormatError("checkpoint is missing " + blob_path.string());
  const json doc = read_json_file(json_path);
  const std::string source = blob_path.string();
  check_header(doc, "tsa-checkpoint", json_path.string());

  try {
    Checkpoint ck{TsaNet(model_config_from_json(doc.at("model"))), std::nullopt};
    std::vector<NamedParam> params = ck.net.parameters();
    std::vector<MatrixXd*> targets;
    std::vector<std::string> names;
    for (const NamedParam& p : params) {
      targets.push_back(p.value);
      names.push_back(p.name);
    }
    std::ifstream in(blob_path, std::ios::binary);
    std::size_t offset = 0;
    read_blobs(in, doc.at("params"), targets, names, offset, source);

    if (doc.contains("training")) {
      const json& t = doc.at("training");
      TrainingState state;
      state.epoch = t.at("epoch").get<std::int64_t>();
      state.best_metric = t.at("best_metric").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                        : t.at("best_metric").get<double>();
      state.best_epoch = t.at("best_epoch").get<std::int64_t>();
      std::vector<MatrixXd*> trainable;
      for (const NamedParam& p : params) {
        if (p.trainable) trainable.push_back(p.value);
      }
      state.adam = AdamState::zeros(trainable);
      state.adam.step = t.at("adam_step").get<std::int64_t>();
      std::vector<MatrixXd*> moment_targets;
      std::vector<std::string> moment_names;
      std::size_t slot = 0;
      for (const NamedParam& p : params) {
        if (!p.trainable) continue;
        moment_targets.push_back(&state.adam.m[slot]);
        moment_targets.push_back(&state.adam.v[slot]);
        moment_names.push_back(p.name + ".m");
        moment_names.push_back(p.name + ".v");
        ++slot;
      }
      read_blobs(in, t.at("moments"), moment_targets, moment_names, offset, source);
      ck.state = std::move(state);
    }
    expect_end(in, source);
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
}

void save_attention(const fs::path& dir, std::span<const AttentionParams<double>> modules, std::uint64_t seed,
                    Index reduction_factor) {
  fs::create_directories(dir);
  const fs::path blob_path = dir / "attention.bin";
  std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + blob_path.string());
  std::size_t offset = 0;
  json table = json::array();
  for (std::size_t k = 0; k < modules.size(); ++k) {
    const AttentionParams<double>& p = modules[k];
    p.validate();
    const std::string base = "tsa" + std::to_string(k) + ".";
    for (const auto& [name, m] : {std::pair{"theta", &p.theta}, {"phi", &p.phi}, {"g", &p.g}, {"wz", &p.wz}}) {
      table.push_back(blob_entry(base + name, *m, offset));
      write_blob(out, *m);
    }
  }
  out.close();
  if (!out) throw DataError("failed writing " + blob_path.string());
  write_json_file(dir / "attention.json", {{"format", "tsa-attention"},
                                           {"version", kCheckpointVersion},
                                           {"dtype", "f64"},
                                           {"seed", seed},
                                           {"reduction_factor", reduction_factor},
                                           {"modules", modules.size()},
                                           {"params", table}});
}

std::vector<AttentionParams<double>> load_attention(const fs::path& dir) {
  const fs::path json_path = dir / "attention.json";
  const fs::path blob_path = dir / "attention.bin";
  if (!fs::exists(json_path) || !fs::exists(blob_path)) {
    throw FormatError("attention checkpoint incomplete in " + dir.string());
  }
  const json doc = read_json_file(json_path);
  check_header(doc, "tsa-attention", json_path.string());
  try {
    const std::size_t count = doc.at("modules").get<std::size_t>();
    const json& table = doc.at("params");
    if (table.size() != 4 * count) throw FormatError(json_path.string() + ": params table size mismatch");
    std::vector<AttentionParams<double>> modules(count);
    std::vector<MatrixXd*> targets;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < count; ++k) {
      const std::string base = "tsa" + std::to_string(k) + ".";
      AttentionParams<double>& p = modules[k];
      MatrixXd* slots[] = {&p.theta, &p.phi, &p.g, &p.wz};
      const char* labels[] = {"theta", "phi", "g", "wz"};
      for (int s = 0; s < 4; ++s) {
        const json& e = table[4 * k + static_cast<std::size_t>(s)];
        slots[s]->resize(e.at("shape").at(0).get<Index>(), e.at("shape").at(1).get<Index>());
        targets.push_back(slots[s]);
        names.push_back(base + labels[s]);
      }
    }
    std::ifstream in(blob_path, std::ios::binary);
    std::size_t offset = 0;
    read_blobs(in, table, targets, names, offset, blob_path.string());
    expect_end(in, blob_path.string());
    for (const auto& p : modules) p.validate();
    return modules;
  } catch (const json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
}

}  // namespace tsa
