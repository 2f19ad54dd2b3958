#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsa/geometry.hpp"
#include "tsa/io.hpp"
#include "tsa/model.hpp"

namespace tsa {

struct Label {
  std::optional<double> score;
  std::optional<int> cls;
  std::optional<double> difficulty;

  friend bool operator==(const Label&, const Label&) = default;
};

struct SampleRecord {
  std::string id;
  std::filesystem::path features;  // stage-1 features (N,T,H,W,C), resolved
  std::filesystem::path clip;      // or raw clips (N,M,H0,W0,C0), resolved
  std::filesystem::path boxes;
  Label label;
  std::string split;  // "train" or "test"
  std::string category = "all";
};

struct Normalization {
  double score_min = 0.0;
  double score_max = 1.0;

  double normalize(double s) const { return (s - score_min) / (score_max - score_min); }
  double denormalize(double v) const { return score_min + v * (score_max - score_min); }
};

/// Support of the score distribution for the distribution task. Bins cover
/// the difficulty-free score s_pre.
struct DistributionSpec {
  double bin_min = 0.0;
  double bin_max = 100.0;
  Index bins = 101;
  double sigma = 1.0;

  VectorXd support() const { return score_bins(bin_min, bin_max, bins); }
};

struct DatasetManifest {
  std::filesystem::path root;  // directory the relative paths resolve against
  Task task = Task::regression;
  Index classes = 2;
  Normalization normalization;
  DistributionSpec distribution;
  GridSpec geometry;
  double tau = kDefaultTau;
  std::vector<SampleRecord> samples;

  nlohmann::json to_json() const;
};

/// Parses manifest.json, resolving every path relative to its directory.
/// Throws DataError naming any referenced file that does not exist.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& root);

struct SynthConfig {
  Index videos = 200;
  Index frames = 103;
  double frame_width = 112.0;
  double frame_height = 112.0;
  Index grid_h = 7;
  Index grid_w = 7;
  Index clips = 10;
  Index clip_length = 16;
  Index stride = 4;
  Index channels = 8;
  std::string trajectory = "mixed";  // linear | parabolic | scale-varying | mixed
  double occupancy_min = 0.15;       // per-frame box area as a fraction of the frame
  double occupancy_max = 0.3;
  double contrast = 1.0;
  double noise = 1.0;
  std::string label_rule = "linear";  // linear | smoothstep
  Task task = Task::regression;
  double tau = kDefaultTau;
  Index bins = 101;
  double sigma = 1.0;
  DType dtype = DType::f64;
  std::uint64_t seed = 0;

  void validate() const;
  GridSpec grid_spec() const;
};

SynthConfig parse_synth_config(const nlohmann::json& section);
nlohmann::json to_json(const SynthConfig& cfg);

/// Lowest and highest score a label rule can produce.
inline constexpr double kSynthScoreMin = 30.0;
inline constexpr double kSynthScoreMax = 90.0;

/// Latent quality q in [0, 1] -> score for the named rule.
double synth_score(const std::string& rule, double quality);

/// One generated video: its box track and stage-1 features.
struct SynthSample {
  std::vector<TrackBox> boxes;
  FeatureTensorXd features;
  double quality = 0.0;
  Label label;
};

SynthSample synth_sample(const SynthConfig& cfg, Index index);

/// Writes manifest.json, features/*.ft1 and boxes/*.jsonl under out_dir and
/// returns the manifest path. Identical configs produce identical bytes.
std::filesystem::path gen_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace tsa
