// tsa: synthetic data, tube masks, cost reports, training and evaluation.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
// failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tsa/checkpoint.hpp"
#include "tsa/dataset.hpp"
#include "tsa/error.hpp"
#include "tsa/flops.hpp"
#include "tsa/geometry.hpp"
#include "tsa/io.hpp"
#include "tsa/rng.hpp"
#include "tsa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tsa;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::pair<Index, Index> parse_pair(const std::string& text, const char* flag) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used_a = 0, used_b = 0;
    const long long a = std::stoll(text.substr(0, x), &used_a);
    const long long b = std::stoll(text.substr(x + 1), &used_b);
    if (used_a != x || used_b != text.size() - x - 1 || a < 1 || b < 1) throw std::invalid_argument(text);
    return {a, b};
  } catch (const std::exception&) {
    throw ConfigError(flag, "expected AxB with positive integers, got '" + text + "'");
  }
}

// Output directories must be empty unless --force is given.
void prepare_out(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out)) throw DataError(out.string() + " exists and is not a directory");
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    throw DataError("output directory " + out.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(out);
}

struct GeometryFlags {
  std::string grid = "14x14";
  std::string frame = "224x224";
  Index stride = 4;
  double tau = kDefaultTau;
  Index clips = 10;
  Index clip_length = 16;
  Index frames = 103;

  void add_to(CLI::App* app) {
    app->add_option("--grid", grid, "feature grid HxW")->capture_default_str();
    app->add_option("--frame", frame, "frame size WxH in box coordinates")->capture_default_str();
    app->add_option("--stride", stride, "raw frames per feature time step")->capture_default_str();
    app->add_option("--tau", tau, "coverage threshold in (0, 1]")->capture_default_str();
    app->add_option("--clips", clips, "clips per video")->capture_default_str();
    app->add_option("--clip-len", clip_length, "frames per clip")->capture_default_str();
    app->add_option("--frames", frames, "frames per video")->capture_default_str();
  }

  GridSpec spec() const {
    GridSpec g;
    const auto [gh, gw] = parse_pair(grid, "--grid");
    const auto [fw, fh] = parse_pair(frame, "--frame");
    g.grid_h = gh;
    g.grid_w = gw;
    g.frame_width = static_cast<double>(fw);
    g.frame_height = static_cast<double>(fh);
    g.stride = stride;
    if (clips < 1 || clip_length < 1 || frames < 1) throw ConfigError("--clips", "clip layout counts must be >= 1");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("--tau", "must lie in (0, 1]");
    g.layout = ClipLayout::uniform(frames, clips, clip_length);
    try {
      g.validate();
    } catch (const Error& e) {
      throw ConfigError("--grid", e.what());
    }
    return g;
  }
};

// Run lengths along the row, alternating unselected/selected and always
// starting with an unselected run (possibly 0).
json mask_row_rle(const TubeIndex& tube, Index n, Index t, Index i) {
  json runs = json::array();
  bool current = false;
  Index run = 0;
  for (Index j = 0; j < tube.grid().w; ++j) {
    if (tube.mask(n, t, i, j) != current) {
      runs.push_back(run);
      current = !current;
      run = 0;
    }
    ++run;
  }
  runs.push_back(run);
  return runs;
}

int cmd_gen_synth(const std::string& config_path, const fs::path& out, bool force, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed) cfg.synth.seed = *seed;
  prepare_out(out, force);
  for (const char* stale : {"features", "boxes", "manifest.json"}) fs::remove_all(out / stale);
  const fs::path manifest = gen_synthetic(cfg.synth, out);
  std::cout << manifest.string() << '\n';
  return kOk;
}

int cmd_masks(const fs::path& boxes_path, const GeometryFlags& geo, const std::optional<fs::path>& out) {
  const GridSpec spec = geo.spec();
  const std::vector<TrackBox> boxes = read_boxes(boxes_path);
  const TubeIndex tube = build_tube(boxes, spec, geo.tau);
  const TubeGrid& g = tube.grid();

  json slices = json::array();
  std::ostringstream text;
  for (Index n = 0; n < g.n; ++n) {
    for (Index t = 0; t < g.t; ++t) {
      json rows = json::array();
      for (Index i = 0; i < g.h; ++i) rows.push_back(mask_row_rle(tube, n, t, i));
      slices.push_back({{"clip", n}, {"step", t}, {"count", tube.count(n, t)}, {"rows", rows}});
      text << "clip " << n << " step " << t << ": " << tube.count(n, t) << " cells\n";
    }
  }
  const json doc = {{"grid", {{"clips", g.n}, {"steps", g.t}, {"h", g.h}, {"w", g.w}}},
                    {"tau", geo.tau},
                    {"total", tube.total()},
                    {"positions", g.positions()},
                    {"occupancy", tube.occupancy()},
                    {"encoding", "rle-rows"},
                    {"slices", slices}};
  text << "total " << tube.total() << " of " << g.positions() << " positions, occupancy " << tube.occupancy() << '\n';
  if (out) {
    write_json_file(*out, doc);
  } else {
    std::cout << doc.dump(2) << '\n';
  }
  std::cout << text.str();
  return kOk;
}

CostReport measured_report(const TubeIndex& tube, Index channels, Index reduction, std::uint64_t seed) {
  const TubeGrid& g = tube.grid();
  FeatureTensorXd x(Dims5{g.n, g.t, g.h, g.w, channels});
  Rng rng(derive_seed(seed, "flops"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index k = 0; k < x.data().size(); ++k) x.data().data()[k] = normal(rng);
  const auto p = AttentionParams<double>::init(channels, reduction, derive_seed(seed, "flops.params"));
  return measure_kernel_flops(x, tube, p);
}

TubeIndex constructed_tube(const std::string& dims_text, double occupancy) {
  std::vector<Index> dims;
  std::stringstream ss(dims_text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--dims", "expected N,T,H,W integers, got '" + dims_text + "'");
    }
  }
  if (dims.size() != 4) throw ConfigError("--dims", "expected four values N,T,H,W");
  for (Index d : dims) {
    if (d < 1) throw ConfigError("--dims", "every dimension must be >= 1");
  }
  if (!(occupancy >= 0.0 && occupancy <= 1.0)) throw ConfigError("--occupancy", "must lie in [0, 1]");
  const TubeGrid grid{dims[0], dims[1], dims[2], dims[3]};
  const auto positions = static_cast<std::size_t>(grid.positions());
  const auto selected = static_cast<std::size_t>(std::llround(occupancy * static_cast<double>(positions)));
  std::vector<std::uint8_t> masks(positions, 0);
  std::fill_n(masks.begin(), selected, std::uint8_t{1});
  return TubeIndex(grid, std::move(masks));
}

int cmd_flops(const std::optional<fs::path>& boxes_path, const std::optional<fs::path>& manifest_path,
              const std::optional<std::string>& dims, double occupancy, const GeometryFlags& geo, Index channels,
              Index reduction, bool measure, std::uint64_t seed, const std::optional<fs::path>& out) {
  if (static_cast<int>(boxes_path.has_value()) + static_cast<int>(manifest_path.has_value()) +
          static_cast<int>(dims.has_value()) != 1) {
    throw UsageError("flops needs exactly one of --boxes, --manifest or --dims");
  }
  if (channels < 1 || reduction < 1 || channels / reduction < 1) {
    throw ConfigError("--reduction", "C / k must leave at least one reduced channel");
  }
  if (!(geo.tau > 0.0 && geo.tau <= 1.0)) throw ConfigError("--tau", "must lie in (0, 1]");
  const auto reduced = static_cast<std::uint64_t>(channels / reduction);
  auto report_for = [&](const TubeIndex& tube) {
    return measure ? measured_report(tube, channels, reduction, seed)
                   : model_report(tube, static_cast<std::uint64_t>(channels), reduced);
  };

  json doc;
  std::string table;
  if (manifest_path) {
    const DatasetManifest m = load_manifest(*manifest_path);
    json samples = json::array();
    double sum_nl = 0.0, sum_tsa = 0.0, sum_red = 0.0;
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %16s %16s %12s\n", "Sample", "NL-Net MACs", "TSA-Net MACs", "Comp. Dec.");
    table += line;
    for (const SampleRecord& s : m.samples) {
      const TubeIndex tube = build_tube(read_boxes(s.boxes), m.geometry, m.tau);
      const CostReport r = report_for(tube);
      json entry = r.to_json();
      entry["id"] = s.id;
      samples.push_back(entry);
      sum_nl += static_cast<double>(r.flops_nl);
      sum_tsa += static_cast<double>(r.flops_tsa);
      sum_red += r.reduction;
      std::snprintf(line, sizeof line, "%-12s %16llu %16llu %11.2f%%\n", s.id.c_str(),
                    static_cast<unsigned long long>(r.flops_nl), static_cast<unsigned long long>(r.flops_tsa),
                    -100.0 * r.reduction);
      table += line;
    }
    const double count = static_cast<double>(std::max<std::size_t>(m.samples.size(), 1));
    std::snprintf(line, sizeof line, "%-12s %16.0f %16.0f %11.2f%%\n", "Average", sum_nl / count, sum_tsa / count,
                  -100.0 * sum_red / count);
    table += line;
    doc = {{"samples", samples},
           {"mean_flops_nl", sum_nl / count},
           {"mean_flops_tsa", sum_tsa / count},
           {"mean_reduction", sum_red / count}};
  } else {
    const TubeIndex tube = boxes_path ? build_tube(read_boxes(*boxes_path), geo.spec(), geo.tau)
                                      : constructed_tube(*dims, occupancy);
    const CostReport r = report_for(tube);
    doc = r.to_json();
    table = r.table();
  }
  if (out) {
    write_json_file(*out, doc);
  } else {
    std::cout << doc.dump(2) << '\n';
  }
  std::cout << table;
  return kOk;
}

void write_report(const fs::path& path, const json& report) {
  fs::create_directories(path.parent_path());
  write_json_file(path, report);
}

void print_report_summary(const std::string& label, const json& report) {
  std::cout << label << ": " << report.at("metric").get<std::string>() << " = ";
  const json& v = report.at(report.at("metric").get<std::string>());
  std::cout << (v.is_null() ? std::string("undefined") : v.dump()) << '\n';
}

int cmd_train(const std::string& config_path, const fs::path& manifest_path, const fs::path& out,
              const std::optional<fs::path>& resume, std::optional<std::uint64_t> seed, std::optional<Index> depth,
              bool paired, bool force) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed) cfg.train.seed = *seed;
  if (depth) {
    if (*depth < 0 || *depth > kMaxStackDepth) throw ConfigError("--depth", "must be in [0, 3]");
    cfg.model.depth = *depth;
  }
  if (paired && resume) throw UsageError("--paired cannot resume from a checkpoint");
  const DatasetManifest manifest = load_manifest(manifest_path);
  if (resume && !fs::exists(*resume)) throw DataError("checkpoint does not exist: " + resume->string());
  prepare_out(out, force || resume.has_value());
  const LoadedDataset data = load_dataset(manifest);

  write_json_file(out / "manifest.json", {{"command", "train"},
                                          {"dataset", fs::absolute(manifest_path).lexically_normal().string()},
                                          {"config", to_json(cfg)},
                                          {"paired", paired}});

  std::vector<std::pair<std::string, Index>> runs;
  if (paired) runs.emplace_back("plain", 0);
  runs.emplace_back(paired ? "tsa" : "train", cfg.model.depth);
  for (const auto& [name, run_depth] : runs) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.model.depth = run_depth;
    const TrainResult result = train(run_cfg, data, out, resume, name);
    const Checkpoint best = load_checkpoint(result.best_checkpoint);
    const Checkpoint last = load_checkpoint(result.last_checkpoint);
    const json best_report = evaluate(best.net, data, "test");
    const json last_report = evaluate(last.net, data, "test");
    write_report(out / "reports" / (name + "_best_test.json"), best_report);
    write_report(out / "reports" / (name + "_last_test.json"), last_report);
    std::cout << name << " (depth " << run_depth << "): best epoch " << result.best_epoch << '\n';
    print_report_summary("  best", best_report);
    print_report_summary("  last", last_report);
  }
  return kOk;
}

int cmd_eval(const std::optional<std::string>& config_path, const fs::path& manifest_path, const fs::path& ckpt,
             const std::string& split, const std::optional<fs::path>& out) {
  if (config_path) (void)load_experiment_config(*config_path);
  const DatasetManifest manifest = load_manifest(manifest_path);
  if (!fs::exists(ckpt)) throw DataError("checkpoint does not exist: " + ckpt.string());
  const Checkpoint ck = load_checkpoint(ckpt);
  const LoadedDataset data = load_dataset(manifest);
  const json report = evaluate(ck.net, data, split);
  if (out) {
    fs::create_directories(*out);
    write_report(*out / "reports" / ("eval_" + split + ".json"), report);
    print_report_summary("eval " + split, report);
  } else {
    std::cout << report.dump(2) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tube self-attention toolkit: synthetic data, tube masks, cost reports, training, evaluation."};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  std::string gen_config;
  fs::path gen_out;
  bool gen_force = false;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "experiment config JSON (reads its \"synth\" section)")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_flag("--force", gen_force, "write into a non-empty output directory");
  gen->add_option("--seed", gen_seed, "override synth.seed");

  // masks
  auto* masks = app.add_subcommand("masks", "rasterize a box track into a tube and dump it");
  fs::path masks_boxes;
  std::optional<fs::path> masks_out;
  GeometryFlags masks_geo;
  masks->add_option("--boxes", masks_boxes, "boxes.jsonl track")->required();
  masks_geo.add_to(masks);
  masks->add_option("--out", masks_out, "write the JSON dump here instead of stdout");

  // flops
  auto* flops = app.add_subcommand("flops", "modeled and measured attention cost, Non-local vs tube");
  std::optional<fs::path> flops_boxes, flops_manifest, flops_out;
  std::optional<std::string> flops_dims;
  double flops_occupancy = 1.0;
  GeometryFlags flops_geo;
  Index flops_channels = 8;
  Index flops_reduction = kDefaultReductionFactor;
  bool flops_no_measure = false;
  std::uint64_t flops_seed = 0;
  flops->add_option("--boxes", flops_boxes, "boxes.jsonl track (uses the geometry flags)");
  flops->add_option("--manifest", flops_manifest, "dataset manifest; one report per sample plus the average");
  flops->add_option("--dims", flops_dims, "N,T,H,W of a constructed tube");
  flops->add_option("--occupancy", flops_occupancy, "fraction of positions selected with --dims")->capture_default_str();
  flops_geo.add_to(flops);
  flops->add_option("--channels", flops_channels, "feature channels C")->capture_default_str();
  flops->add_option("--reduction", flops_reduction, "channel reduction factor k (C' = C / k)")->capture_default_str();
  flops->add_flag("--no-measure", flops_no_measure, "skip the instrumented kernel run");
  flops->add_option("--seed", flops_seed, "seed of the random input used for measurement")->capture_default_str();
  flops->add_option("--out", flops_out, "write the JSON report here instead of stdout");

  // train
  auto* trn = app.add_subcommand("train", "train a model and write logs, checkpoints and reports");
  std::string train_config;
  fs::path train_manifest, train_out;
  std::optional<fs::path> train_resume;
  std::optional<std::uint64_t> train_seed;
  std::optional<Index> train_depth;
  bool train_paired = false, train_force = false;
  trn->add_option("--config", train_config, "experiment config JSON")->required();
  trn->add_option("--manifest", train_manifest, "dataset manifest.json")->required();
  trn->add_option("--out", train_out, "output directory")->required();
  trn->add_option("--checkpoint", train_resume, "resume from this checkpoint directory");
  trn->add_option("--seed", train_seed, "override train.seed");
  trn->add_option("--depth", train_depth, "override train.depth (0 = Plain-Net)");
  trn->add_flag("--paired", train_paired, "also train the depth-0 Plain-Net and report both");
  trn->add_flag("--force", train_force, "write into a non-empty output directory");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::optional<std::string> eval_config;
  fs::path eval_manifest, eval_ckpt;
  std::string eval_split = "test";
  std::optional<fs::path> eval_out;
  ev->add_option("--config", eval_config, "experiment config JSON (validated only)");
  ev->add_option("--manifest", eval_manifest, "dataset manifest.json")->required();
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  ev->add_option("--split", eval_split, "train or test")->capture_default_str()->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--out", eval_out, "write reports/eval_<split>.json here instead of printing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_synth(gen_config, gen_out, gen_force, gen_seed);
    if (*masks) return cmd_masks(masks_boxes, masks_geo, masks_out);
    if (*flops) {
      return cmd_flops(flops_boxes, flops_manifest, flops_dims, flops_occupancy, flops_geo, flops_channels,
                       flops_reduction, !flops_no_measure, flops_seed, flops_out);
    }
    if (*trn) {
      return cmd_train(train_config, train_manifest, train_out, train_resume, train_seed, train_depth, train_paired,
                       train_force);
    }
    if (*ev) return cmd_eval(eval_config, eval_manifest, eval_ckpt, eval_split, eval_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
