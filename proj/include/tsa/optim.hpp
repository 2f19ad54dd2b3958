#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tsa/tensor.hpp"

namespace tsa {

using MatrixXd = Matrix<double>;

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // added to the gradient as lambda * w

  void validate() const;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<MatrixXd> m;
  std::vector<MatrixXd> v;

  /// Zero moments shaped like `params`.
  static AdamState zeros(std::span<MatrixXd* const> params);
};

/// One Adam update with bias correction, in place.
void adam_step(std::span<MatrixXd* const> params, std::span<const MatrixXd> grads, AdamState& state,
               const OptimizerConfig& cfg);

}  // namespace tsa
