#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include <json.hpp>

#include "tsa/attention.hpp"
#include "tsa/model.hpp"
#include "tsa/optim.hpp"

namespace tsa {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const ModelConfig& cfg);
/// Inverse of to_json(ModelConfig); every field is required.
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Optimizer and bookkeeping carried by a training checkpoint so a run can
/// resume exactly where it stopped.
struct TrainingState {
  std::int64_t epoch = 0;  // epochs completed
  double best_metric = 0.0;
  std::int64_t best_epoch = 0;
  AdamState adam;  // moments of the trainable parameters, in parameter order
};

/// Directory with model.json and weights.bin (little-endian f64 blobs of every
/// parameter in TsaNet::parameters() order, then the Adam moments).
void save_checkpoint(const std::filesystem::path& dir, const TsaNet& net, const TrainingState* state = nullptr);

struct Checkpoint {
  TsaNet net;
  std::optional<TrainingState> state;
};

/// Throws FormatError for a missing/corrupt checkpoint or an unsupported
/// format version.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Attention-only checkpoint: attention.json (shapes, dtype, seed, reduction
/// factor) plus attention.bin holding theta, phi, g, w_z of each module.
void save_attention(const std::filesystem::path& dir, std::span<const AttentionParams<double>> modules,
                    std::uint64_t seed, Index reduction_factor);
std::vector<AttentionParams<double>> load_attention(const std::filesystem::path& dir);

}  // namespace tsa
