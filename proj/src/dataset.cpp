#include "tsa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "tsa/config_reader.hpp"
#include "tsa/error.hpp"
#include "tsa/rng.hpp"

namespace tsa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json label_json(const Label& l) {
  json out = json::object();
  if (l.score) out["score"] = *l.score;
  if (l.cls) out["class"] = *l.cls;
  if (l.difficulty) out["dd"] = *l.difficulty;
  return out;
}

Label parse_label(const json& doc, const std::string& where) {
  if (!doc.is_object()) throw DataError(where + ": label must be an object");
  Label l;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() == "score" && it->is_number()) {
      l.score = it->get<double>();
    } else if (it.key() == "class" && it->is_number_integer()) {
      l.cls = it->get<int>();
    } else if (it.key() == "dd" && it->is_number()) {
      l.difficulty = it->get<double>();
    } else {
      throw DataError(where + ": bad label field '" + it.key() + "'");
    }
  }
  return l;
}

void check_label(const Label& l, Task task, Index classes, const std::string& where) {
  switch (task) {
    case Task::regression:
      if (!l.score) throw DataError(where + ": regression sample needs a score label");
      break;
    case Task::classification:
      if (!l.cls || *l.cls < 0 || *l.cls >= classes) {
        throw DataError(where + ": classification sample needs a class in [0, " + std::to_string(classes) + ")");
      }
      break;
    case Task::distribution:
      if (!l.score) throw DataError(where + ": distribution sample needs a score label");
      if (l.difficulty && !(*l.difficulty > 0.0)) throw DataError(where + ": difficulty degree must be positive");
      break;
  }
}

fs::path resolve_existing(const fs::path& root, const std::string& rel, const std::string& where) {
  const fs::path p = root / rel;
  if (!fs::exists(p)) throw DataError(where + ": referenced file does not exist: " + p.string());
  return p;
}

}  // namespace

json DatasetManifest::to_json() const {
  json samples_doc = json::array();
  for (const SampleRecord& s : samples) {
    json rec;
    rec["id"] = s.id;
    if (!s.features.empty()) rec["features"] = fs::relative(s.features, root).generic_string();
    if (!s.clip.empty()) rec["clip"] = fs::relative(s.clip, root).generic_string();
    rec["boxes"] = fs::relative(s.boxes, root).generic_string();
    rec["label"] = label_json(s.label);
    rec["split"] = s.split;
    rec["category"] = s.category;
    samples_doc.push_back(std::move(rec));
  }
  json geometry_doc = {{"frame", {geometry.frame_width, geometry.frame_height}},
                       {"grid", {geometry.grid_h, geometry.grid_w}},
                       {"stride", geometry.stride},
                       {"video_length", geometry.layout.video_length},
                       {"clip_length", geometry.layout.clip_length},
                       {"clip_starts", geometry.layout.starts},
                       {"tau", tau}};
  return {{"format", "tsa-dataset"},
          {"version", 1},
          {"task", to_string(task)},
          {"classes", classes},
          {"normalization", {{"score_min", normalization.score_min}, {"score_max", normalization.score_max}}},
          {"distribution",
           {{"bin_min", distribution.bin_min},
            {"bin_max", distribution.bin_max},
            {"bins", distribution.bins},
            {"sigma", distribution.sigma}}},
          {"geometry", geometry_doc},
          {"samples", samples_doc}};
}

DatasetManifest parse_manifest(const json& doc, const fs::path& root) {
  const std::string src = (root / "manifest.json").string();
  auto need = [&](const json& obj, const char* key) -> const json& {
    if (!obj.is_object() || !obj.contains(key)) throw FormatError(src + ": missing field '" + key + "'");
    return obj.at(key);
  };
  try {
    if (doc.value("format", "") != "tsa-dataset") throw FormatError(src + ": not a tsa-dataset manifest");
    if (doc.value("version", 0) != 1) throw FormatError(src + ": unsupported manifest version");
    DatasetManifest m;
    m.root = root;
    m.task = parse_task(need(doc, "task").get<std::string>());
    m.classes = doc.value("classes", Index{2});
    if (doc.contains("normalization")) {
      const json& n = doc["normalization"];
      m.normalization.score_min = need(n, "score_min").get<double>();
      m.normalization.score_max = need(n, "score_max").get<double>();
      if (!(m.normalization.score_max > m.normalization.score_min)) {
        throw FormatError(src + ": normalization needs score_max > score_min");
      }
    }
    if (doc.contains("distribution")) {
      const json& d = doc["distribution"];
      m.distribution.bin_min = need(d, "bin_min").get<double>();
      m.distribution.bin_max = need(d, "bin_max").get<double>();
      m.distribution.bins = need(d, "bins").get<Index>();
      m.distribution.sigma = need(d, "sigma").get<double>();
    }
    const json& g = need(doc, "geometry");
    m.geometry.frame_width = need(g, "frame").at(0).get<double>();
    m.geometry.frame_height = need(g, "frame").at(1).get<double>();
    m.geometry.grid_h = need(g, "grid").at(0).get<Index>();
    m.geometry.grid_w = need(g, "grid").at(1).get<Index>();
    m.geometry.stride = need(g, "stride").get<Index>();
    m.geometry.layout.video_length = need(g, "video_length").get<Index>();
    m.geometry.layout.clip_length = need(g, "clip_length").get<Index>();
    m.geometry.layout.starts = need(g, "clip_starts").get<std::vector<Index>>();
    m.tau = g.value("tau", kDefaultTau);
    m.geometry.validate();

    for (const json& rec : need(doc, "samples")) {
      SampleRecord s;
      s.id = need(rec, "id").get<std::string>();
      const std::string where = src + " sample '" + s.id + "'";
      if (rec.contains("features")) s.features = resolve_existing(root, rec["features"].get<std::string>(), where);
      if (rec.contains("clip")) s.clip = resolve_existing(root, rec["clip"].get<std::string>(), where);
      if (s.features.empty() == s.clip.empty()) throw DataError(where + ": needs exactly one of features / clip");
      s.boxes = resolve_existing(root, need(rec, "boxes").get<std::string>(), where);
      s.label = parse_label(need(rec, "label"), where);
      check_label(s.label, m.task, m.classes, where);
      s.split = need(rec, "split").get<std::string>();
      if (s.split != "train" && s.split != "test") throw DataError(where + ": split must be train or test");
      s.category = rec.value("category", std::string("all"));
      m.samples.push_back(std::move(s));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(src + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(src + ": " + e.what());
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("manifest does not exist: " + path.string());
  return parse_manifest(read_json_file(path), path.parent_path());
}

void SynthConfig::validate() const {
  if (videos < 2) throw ConfigError("synth.videos", "need at least 2 videos for a train/test split");
  if (frames < 1) throw ConfigError("synth.frames", "must be >= 1");
  if (!(frame_width > 0) || !(frame_height > 0)) throw ConfigError("synth.frame_size", "must be positive");
  if (grid_h < 1 || grid_w < 1) throw ConfigError("synth.grid", "must be at least 1x1");
  if (clips < 1) throw ConfigError("synth.clips", "must be >= 1");
  if (clip_length < 1 || clip_length > frames) throw ConfigError("synth.clip_length", "must be in [1, frames]");
  if (stride < 1) throw ConfigError("synth.stride", "must be >= 1");
  if (channels < 2) throw ConfigError("synth.channels", "must be >= 2");
  if (trajectory != "linear" && trajectory != "parabolic" && trajectory != "scale-varying" && trajectory != "mixed") {
    throw ConfigError("synth.trajectory", "expected linear, parabolic, scale-varying or mixed");
  }
  if (!(occupancy_min > 0.0) || occupancy_max > 1.0 || occupancy_min > occupancy_max) {
    throw ConfigError("synth.occupancy", "range must satisfy 0 < min <= max <= 1");
  }
  if (!(contrast >= 0.0)) throw ConfigError("synth.contrast", "must be >= 0");
  if (!(noise >= 0.0)) throw ConfigError("synth.noise", "must be >= 0");
  if (label_rule != "linear" && label_rule != "smoothstep") {
    throw ConfigError("synth.label_rule", "expected linear or smoothstep");
  }
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("synth.tau", "must lie in (0, 1]");
  if (bins < 2) throw ConfigError("synth.bins", "must be >= 2");
  if (!(sigma > 0.0)) throw ConfigError("synth.sigma", "must be positive");
}

GridSpec SynthConfig::grid_spec() const {
  GridSpec g;
  g.frame_width = frame_width;
  g.frame_height = frame_height;
  g.grid_h = grid_h;
  g.grid_w = grid_w;
  g.stride = stride;
  g.layout = ClipLayout::uniform(frames, clips, clip_length);
  return g;
}

SynthConfig parse_synth_config(const json& section) {
  SynthConfig cfg;
  ConfigReader r(section, "synth");
  r.read("videos", cfg.videos);
  r.read("frames", cfg.frames);
  if (r.has("frame_size")) {
    const json& fsz = r.raw("frame_size");
    if (!fsz.is_array() || fsz.size() != 2 || !fsz[0].is_number() || !fsz[1].is_number()) {
      throw ConfigError("synth.frame_size", "expected [width, height]");
    }
    cfg.frame_width = fsz[0].get<double>();
    cfg.frame_height = fsz[1].get<double>();
  }
  if (r.has("grid")) {
    const json& g = r.raw("grid");
    if (!g.is_array() || g.size() != 2 || !g[0].is_number_integer() || !g[1].is_number_integer()) {
      throw ConfigError("synth.grid", "expected [H, W]");
    }
    cfg.grid_h = g[0].get<Index>();
    cfg.grid_w = g[1].get<Index>();
  }
  r.read("clips", cfg.clips);
  r.read("clip_length", cfg.clip_length);
  r.read("stride", cfg.stride);
  r.read("channels", cfg.channels);
  r.read("trajectory", cfg.trajectory);
  if (r.has("occupancy")) {
    const json& o = r.raw("occupancy");
    if (!o.is_array() || o.size() != 2 || !o[0].is_number() || !o[1].is_number()) {
      throw ConfigError("synth.occupancy", "expected [min, max]");
    }
    cfg.occupancy_min = o[0].get<double>();
    cfg.occupancy_max = o[1].get<double>();
  }
  r.read("contrast", cfg.contrast);
  r.read("noise", cfg.noise);
  r.read("label_rule", cfg.label_rule);
  if (r.has("task")) {
    std::string task;
    r.read("task", task);
    try {
      cfg.task = parse_task(task);
    } catch (const ConfigError&) {
      throw ConfigError("synth.task", "expected classification, regression or distribution");
    }
  }
  r.read("tau", cfg.tau);
  r.read("bins", cfg.bins);
  r.read("sigma", cfg.sigma);
  if (r.has("dtype")) {
    std::string dt;
    r.read("dtype", dt);
    if (dt != "f32" && dt != "f64") throw ConfigError("synth.dtype", "expected f32 or f64");
    cfg.dtype = parse_dtype(dt);
  }
  r.read("seed", cfg.seed);
  r.finish();
  cfg.validate();
  return cfg;
}

json to_json(const SynthConfig& cfg) {
  return {{"videos", cfg.videos},
          {"frames", cfg.frames},
          {"frame_size", {cfg.frame_width, cfg.frame_height}},
          {"grid", {cfg.grid_h, cfg.grid_w}},
          {"clips", cfg.clips},
          {"clip_length", cfg.clip_length},
          {"stride", cfg.stride},
          {"channels", cfg.channels},
          {"trajectory", cfg.trajectory},
          {"occupancy", {cfg.occupancy_min, cfg.occupancy_max}},
          {"contrast", cfg.contrast},
          {"noise", cfg.noise},
          {"label_rule", cfg.label_rule},
          {"task", to_string(cfg.task)},
          {"tau", cfg.tau},
          {"bins", cfg.bins},
          {"sigma", cfg.sigma},
          {"dtype", to_string(cfg.dtype)},
          {"seed", cfg.seed}};
}

double synth_score(const std::string& rule, double quality) {
  const double span = kSynthScoreMax - kSynthScoreMin;
  if (rule == "linear") return kSynthScoreMin + span * quality;
  if (rule == "smoothstep") return kSynthScoreMin + span * quality * quality * (3.0 - 2.0 * quality);
  throw UsageError("unknown label rule '" + rule + "'");
}

namespace {

constexpr double kDifficultyMin = 2.0;
constexpr double kDifficultyMax = 3.6;

std::vector<TrackBox> synth_track(const SynthConfig& cfg, Index index, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  static const char* kFamilies[] = {"linear", "parabolic", "scale-varying"};
  const std::string family = cfg.trajectory == "mixed" ? kFamilies[index % 3] : cfg.trajectory;

  const double fw = cfg.frame_width, fh = cfg.frame_height;
  const double occupancy = uni(cfg.occupancy_min, cfg.occupancy_max);
  const double aspect = uni(0.75, 1.33);
  const double area = occupancy * fw * fh;
  const double bw = std::sqrt(area * aspect);
  const double bh = area / bw;
  const double cx0 = uni(0.3, 0.7) * fw, cx1 = uni(0.3, 0.7) * fw;
  const double cy0 = uni(0.35, 0.65) * fh, cy1 = uni(0.35, 0.65) * fh;
  const double angle0 = uni(-0.35, 0.35);
  const double spin = uni(-0.004, 0.004);
  const double arc = uni(0.1, 0.25) * fh;
  const double phase = uni(0.0, 2.0 * std::numbers::pi);
  const bool full_frame = occupancy >= 1.0;

  std::vector<TrackBox> boxes;
  for (Index l = 0; l < cfg.frames; ++l) {
    TrackBox box;
    box.frame = l;
    if (full_frame) {
      box.pts = {Point2(0, 0), Point2(fw, 0), Point2(fw, fh), Point2(0, fh)};
      boxes.push_back(box);
      continue;
    }
    const double u = cfg.frames > 1 ? static_cast<double>(l) / static_cast<double>(cfg.frames - 1) : 0.0;
    double cx = cx0 + (cx1 - cx0) * u;
    double cy = cy0 + (cy1 - cy0) * u;
    double scale = 1.0;
    if (family == "parabolic") cy -= arc * 4.0 * u * (1.0 - u);
    if (family == "scale-varying") scale = 1.0 + 0.25 * std::sin(3.0 * std::numbers::pi * u + phase);
    const double angle = angle0 + spin * static_cast<double>(l);
    const double hx = 0.5 * scale * bw, hy = 0.5 * scale * bh;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double corners[4][2] = {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
    for (int k = 0; k < 4; ++k) {
      const double x = corners[k][0], y = corners[k][1];
      box.pts[static_cast<std::size_t>(k)] = Point2(cx + ca * x - sa * y, cy + sa * x + ca * y);
    }
    boxes.push_back(box);
  }
  return boxes;
}

}  // namespace

SynthSample synth_sample(const SynthConfig& cfg, Index index) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "dataset", static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthSample s;
  s.quality = unit(rng);
  s.boxes = synth_track(cfg, index, rng);
  const GridSpec spec = cfg.grid_spec();
  const TubeIndex tube = build_tube(s.boxes, spec, cfg.tau);

  // Channel 0 carries the quality amplitude inside the tube and an unrelated
  // distractor level outside it; the remaining channels are noise.
  const double distractor = 0.5 + unit(rng);
  const double amplitude = 0.5 + s.quality;
  const TubeGrid g = spec.tube_grid();
  s.features = FeatureTensorXd(Dims5{g.n, g.t, g.h, g.w, cfg.channels});
  for (Index r = 0; r < s.features.positions(); ++r) {
    auto row = s.features.data().row(r);
    const double bg_noise = normal(rng);
    for (Index c = 1; c < cfg.channels; ++c) row(c) = cfg.noise * normal(rng);
    if (tube.masks()[static_cast<std::size_t>(r)]) {
      row(0) = cfg.contrast * amplitude;
    } else {
      row(0) = cfg.contrast * distractor + 0.5 * cfg.noise * bg_noise;
    }
  }

  const double score = synth_score(cfg.label_rule, s.quality);
  switch (cfg.task) {
    case Task::regression:
      s.label.score = score;
      break;
    case Task::classification:
      s.label.cls = s.quality >= 0.5 ? 1 : 0;
      break;
    case Task::distribution: {
      const double dd = std::round(10.0 * (kDifficultyMin + (kDifficultyMax - kDifficultyMin) * unit(rng))) / 10.0;
      s.label.difficulty = dd;
      s.label.score = dd * score;
      break;
    }
  }
  return s;
}

fs::path gen_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const GridSpec spec = cfg.grid_spec();
  try {
    fs::create_directories(out_dir / "features");
    fs::create_directories(out_dir / "boxes");
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("cannot create dataset directories: ") + e.what());
  }

  std::vector<Index> order(static_cast<std::size_t>(cfg.videos));
  std::iota(order.begin(), order.end(), Index{0});
  Rng split_rng(derive_seed(cfg.seed, "split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<std::string> split(order.size(), "test");
  for (std::size_t k = 0; k < order.size() / 2; ++k) split[static_cast<std::size_t>(order[k])] = "train";

  DatasetManifest m;
  m.root = out_dir;
  m.task = cfg.task;
  m.classes = 2;
  m.normalization = {kSynthScoreMin, kSynthScoreMax};
  m.distribution = {kSynthScoreMin, kSynthScoreMax, cfg.bins, cfg.sigma};
  m.geometry = spec;
  m.tau = cfg.tau;
  for (Index v = 0; v < cfg.videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "v%04lld", static_cast<long long>(v));
    const SynthSample sample = synth_sample(cfg, v);
    SampleRecord rec;
    rec.id = id;
    rec.features = out_dir / "features" / (rec.id + ".ft1");
    rec.boxes = out_dir / "boxes" / (rec.id + ".jsonl");
    rec.label = sample.label;
    rec.split = split[static_cast<std::size_t>(v)];
    rec.category = "synthetic";
    write_ft1(rec.features, sample.features, cfg.dtype);
    write_boxes(rec.boxes, sample.boxes);
    m.samples.push_back(std::move(rec));
  }
  const fs::path manifest = out_dir / "manifest.json";
  write_json_file(manifest, m.to_json());
  return manifest;
}

}  // namespace tsa
