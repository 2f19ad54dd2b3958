#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsa/checkpoint.hpp"
#include "tsa/dataset.hpp"
#include "tsa/model.hpp"
#include "tsa/optim.hpp"

namespace tsa {

struct TrainConfig {
  Index epochs = 100;
  Index batch_size = 4;
  std::uint64_t seed = 0;  // shuffle and augmentation streams
  bool flip = false;
  bool temporal_offset = false;
  OptimizerConfig optimizer;

  void validate() const;
};

/// Optional model fields; unset ones are filled from the dataset.
struct ModelOverrides {
  std::vector<Index> hidden{256};
  Index depth = 1;
  Index reduction_factor = kDefaultReductionFactor;
  Index stage2_channels = 16;
  bool trainable_backbone = false;
  std::optional<Index> channels;  // stage-1 output C for raw-clip datasets
};

/// One JSON document with sections "synth", "model" and "train".
struct ExperimentConfig {
  SynthConfig synth;
  ModelOverrides model;
  TrainConfig train;

  /// Applies one root seed to every named sub-seed.
  void set_seed(std::uint64_t seed);
};

ExperimentConfig parse_experiment_config(const nlohmann::json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// A manifest sample held in memory with its tubes.
struct LoadedSample {
  std::string id;
  std::string category;
  FeatureTensorXd input;  // stage-1 features, or raw clips when `raw`
  bool raw = false;
  TubeIndex tube;
  TubeIndex tube_flipped;  // from horizontally reflected boxes
  Label label;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<LoadedSample> train;
  std::vector<LoadedSample> test;

  const std::vector<LoadedSample>& split(const std::string& name) const;
};

LoadedDataset load_dataset(const DatasetManifest& manifest);

/// Full model config for a dataset: grid, channel and input shapes come from
/// the data, the rest from the overrides.
ModelConfig model_config_for(const ExperimentConfig& cfg, const LoadedDataset& data);

/// Network output -> reported score (or class index) for one sample.
double predict(const TsaNet& net, const VectorXd& output, const LoadedSample& s, const DatasetManifest& m);

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double test_metric = 0.0;
  std::string metric;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> log;  // epochs run by this call
  double best_metric = 0.0;
  std::int64_t best_epoch = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

/// Trains into out_dir: logs/<run>.jsonl, checkpoints/<run>/best and
/// checkpoints/<run>/last. With `resume`, continues from that checkpoint's
/// epoch and optimizer state and appends to the log.
TrainResult train(const ExperimentConfig& cfg, const LoadedDataset& data, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume = std::nullopt, const std::string& run = "train");

/// Metrics report for one split: spearman, per-category spearman, Fisher-z
/// average, mse and accuracy where they apply, and per-sample predictions.
nlohmann::json evaluate(const TsaNet& net, const LoadedDataset& data, const std::string& split = "test");

/// Name of the selection metric for a task ("spearman" or "accuracy").
std::string selection_metric(Task task);

}  // namespace tsa
