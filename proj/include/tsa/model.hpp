#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsa/attention.hpp"
#include "tsa/tensor.hpp"

namespace tsa {

using VectorXd = Vector<double>;

enum class Task { classification, regression, distribution };

std::string to_string(Task task);
Task parse_task(const std::string& name);

/// Shapes of the frozen two-stage backbone stub.
struct BackboneConfig {
  Index clip_frames = 16;  // M raw frames per clip
  Index input_h = 56;
  Index input_w = 56;
  Index input_channels = 3;
  Index stride = 4;  // frames pooled into one feature time step
  Index grid_h = 14;
  Index grid_w = 14;
  Index channels = 8;  // C of the stage-1 features seen by attention
  Index stage2_channels = 16;
  std::uint64_t seed = 0;
  bool trainable = false;

  Index steps() const { return (clip_frames + stride - 1) / stride; }
  void validate() const;
};

/// Strided average pooling of raw clips to the feature grid, then a seeded
/// linear channel map C0 -> C.
class Stage1Stub {
 public:
  explicit Stage1Stub(const BackboneConfig& cfg);

  /// (N, M, H0, W0, C0) -> (N, T, H, W, C0)
  FeatureTensorXd pool(const FeatureTensorXd& clips) const;
  /// (N, M, H0, W0, C0) -> (N, T, H, W, C)
  FeatureTensorXd forward(const FeatureTensorXd& clips) const;

  const MatrixXd& weight() const { return weight_; }
  MatrixXd& weight() { return weight_; }

 private:
  BackboneConfig cfg_;
  MatrixXd weight_;
};

/// Per-position linear map C -> C2 followed by the mean over (t, i, j) of each
/// clip, giving H with dims (N, 1, 1, 1, C2).
class Stage2Stub {
 public:
  explicit Stage2Stub(const BackboneConfig& cfg);

  FeatureTensorXd forward(const FeatureTensorXd& x) const;
  /// Gradient of forward with respect to its input and weight.
  FeatureTensorXd backward_input(const Dims5& input_dims, const FeatureTensorXd& upstream) const;
  MatrixXd backward_weight(const FeatureTensorXd& x, const FeatureTensorXd& upstream) const;

  const MatrixXd& weight() const { return weight_; }
  MatrixXd& weight() { return weight_; }

 private:
  MatrixXd weight_;
};

struct HeadConfig {
  Task task = Task::regression;
  std::vector<Index> hidden{256};
  Index outputs = 1;  // 1 for regression, #classes, or #bins

  void validate() const;
};

/// Fully connected stack with tanh between layers. Classification outputs are
/// per-class sigmoid probabilities, distribution outputs a softmax simplex
/// point, regression the raw affine output.
class MlpHead {
 public:
  MlpHead(const HeadConfig& cfg, Index inputs, std::uint64_t seed);

  struct Cache {
    std::vector<VectorXd> inputs;  // input to each layer
    VectorXd output;               // after the task transform
  };

  VectorXd forward(const VectorXd& in, Cache* cache = nullptr) const;

  struct Gradients {
    std::vector<MatrixXd> weights;
    std::vector<MatrixXd> biases;
    VectorXd d_input;
  };
  /// d_output is the gradient with respect to the transformed output.
  Gradients backward(const Cache& cache, const VectorXd& d_output) const;

  const HeadConfig& config() const { return cfg_; }
  std::vector<MatrixXd>& weights() { return weights_; }
  std::vector<MatrixXd>& biases() { return biases_; }
  const std::vector<MatrixXd>& weights() const { return weights_; }
  const std::vector<MatrixXd>& biases() const { return biases_; }

 private:
  HeadConfig cfg_;
  std::vector<MatrixXd> weights_;  // in x out
  std::vector<MatrixXd> biases_;   // 1 x out
};

/// Discrete probability vector over score bins.
struct ScoreDistribution {
  VectorXd bins;
  VectorXd probs;

  void validate() const;
  double expectation() const;
};

VectorXd score_bins(double lo, double hi, Index count);

/// Discretized Gaussian around `score`: probs_i proportional to
/// exp(-(bins_i - score)^2 / (2 sigma^2)).
ScoreDistribution gt_distribution(double score, double sigma, const VectorXd& bins);

/// Difficulty-weighted final score dd * s_pre.
double final_score(double expected_score, double difficulty = 1.0);

struct ScalarLoss {
  double value = 0.0;
  double grad = 0.0;  // d value / d pred
};

inline constexpr double kBceEpsilon = 1e-7;
inline constexpr double kKlFloor = 1e-12;

ScalarLoss loss_mse(double pred, double gt);
/// Binary cross entropy of a probability; pred is clamped to [eps, 1 - eps].
ScalarLoss loss_bce(double pred, double gt);

struct VectorLoss {
  double value = 0.0;
  VectorXd grad;  // d value / d s_pre probs
};
/// KL(p_c || s_pre) = sum p_i log(p_i / s_i); zero-probability target bins
/// contribute nothing, s_i is floored at 1e-12.
VectorLoss loss_kl(const ScoreDistribution& target, const ScoreDistribution& predicted);

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
  Index depth = 1;  // attention modules; 0 is the plain network
  Index reduction_factor = kDefaultReductionFactor;
  std::uint64_t seed = 0;  // init seed for attention and head

  void validate() const;
};

struct NamedParam {
  std::string name;
  MatrixXd* value;
  bool trainable;
};

/// Backbone stubs, an attention stack sharing one tube, clip-mean pooling and
/// the MLP head.
class TsaNet {
 public:
  explicit TsaNet(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  struct Cache {
    std::optional<FeatureTensorXd> pooled_clips;  // set when the input was raw clips
    std::vector<FeatureTensorXd> stack_inputs;    // input of each attention module
    FeatureTensorXd attended;                     // X'
    VectorXd hbar;
    MlpHead::Cache head;
  };

  /// Stage-1 features (N, T, H, W, C) plus their tube -> head output.
  VectorXd forward_features(const FeatureTensorXd& x, const TubeIndex& tube, Cache* cache = nullptr) const;
  /// Raw clips (N, M, H0, W0, C0) go through the stage-1 stub first.
  VectorXd forward_clips(const FeatureTensorXd& clips, const TubeIndex& tube, Cache* cache = nullptr) const;

  /// Gradients of every parameter, aligned with parameters(); frozen
  /// parameters get zero gradients.
  std::vector<MatrixXd> backward(const Cache& cache, const TubeIndex& tube, const VectorXd& d_output) const;

  std::vector<NamedParam> parameters();
  std::vector<const MatrixXd*> parameter_values() const;
  std::vector<std::string> parameter_names() const;

  std::vector<AttentionParams<double>>& attention() { return attention_; }
  const std::vector<AttentionParams<double>>& attention() const { return attention_; }
  Stage1Stub& stage1() { return stage1_; }
  Stage2Stub& stage2() { return stage2_; }
  MlpHead& head() { return head_; }

 private:
  ModelConfig cfg_;
  Stage1Stub stage1_;
  Stage2Stub stage2_;
  std::vector<AttentionParams<double>> attention_;
  MlpHead head_;
};

}  // namespace tsa
