#pragma once

#include <span>
#include <string>
#include <vector>

namespace tsa {

/// Paired predicted / ground-truth scores.
struct ScoreSeries {
  std::vector<double> predicted;
  std::vector<double> truth;

  void validate() const;
};

/// Average (fractional) ranks, 1-based; tied values share the mean rank.
std::vector<double> fractional_ranks(std::span<const double> values);

/// Spearman's rho as the Pearson correlation of the two rank vectors.
/// Throws NumericError when either rank vector has zero variance.
double spearman(const ScoreSeries& series);

struct FisherAverage {
  double value = 0.0;
  std::vector<std::string> warnings;  // one entry per clamped |rho| = 1 input
};

/// tanh(mean(atanh(rho_k))). Inputs at +-1 are pulled to +-(1 - 1e-12).
FisherAverage fisher_z_average(std::span<const double> correlations);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

double mean_squared_error(std::span<const double> predicted, std::span<const double> truth);

}  // namespace tsa
