#include "tsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsa/error.hpp"

namespace tsa {

void ScoreSeries::validate() const {
  if (predicted.size() != truth.size()) {
    throw ShapeError("score series lengths differ: " + std::to_string(predicted.size()) + " vs " +
                     std::to_string(truth.size()));
  }
  if (predicted.size() < 2) throw UsageError("score series needs at least 2 pairs");
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (!std::isfinite(predicted[k]) || !std::isfinite(truth[k])) {
      throw NumericError("score series holds a non-finite value at index " + std::to_string(k));
    }
  }
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t lo = 0;
  while (lo < n) {
    std::size_t hi = lo + 1;
    while (hi < n && values[order[hi]] == values[order[lo]]) ++hi;
    // positions lo..hi-1 share ranks lo+1..hi
    const double avg = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k) ranks[order[k]] = avg;
    lo = hi;
  }
  return ranks;
}

double spearman(const ScoreSeries& series) {
  series.validate();
  const auto p = fractional_ranks(series.truth);
  const auto q = fractional_ranks(series.predicted);
  const double n = static_cast<double>(p.size());
  const double p_bar = std::accumulate(p.begin(), p.end(), 0.0) / n;
  const double q_bar = std::accumulate(q.begin(), q.end(), 0.0) / n;
  double num = 0.0, sp = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double dp = p[k] - p_bar;
    const double dq = q[k] - q_bar;
    num += dp * dq;
    sp += dp * dp;
    sq += dq * dq;
  }
  if (sp == 0.0 || sq == 0.0) throw NumericError("spearman undefined: a series has constant ranks");
  return std::clamp(num / std::sqrt(sp * sq), -1.0, 1.0);
}

FisherAverage fisher_z_average(std::span<const double> correlations) {
  if (correlations.empty()) throw UsageError("fisher_z_average needs at least one correlation");
  constexpr double kLimit = 1.0 - 1e-12;
  FisherAverage out;
  double acc = 0.0;
  for (std::size_t k = 0; k < correlations.size(); ++k) {
    double rho = correlations[k];
    if (!std::isfinite(rho) || std::abs(rho) > 1.0) {
      throw NumericError("correlation " + std::to_string(k) + " outside [-1, 1]");
    }
    if (std::abs(rho) > kLimit) {
      out.warnings.push_back("correlation " + std::to_string(k) + " = " + std::to_string(rho) +
                             " clamped to +-(1 - 1e-12)");
      rho = std::copysign(kLimit, rho);
    }
    acc += std::atanh(rho);
  }
  out.value = std::tanh(acc / static_cast<double>(correlations.size()));
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accuracy: label lengths differ");
  if (predicted.empty()) throw UsageError("accuracy: no labels");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < predicted.size(); ++k) hits += predicted[k] == truth[k] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double mean_squared_error(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("mse: lengths differ");
  if (predicted.empty()) throw UsageError("mse: empty series");
  double acc = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const double d = predicted[k] - truth[k];
    acc += d * d;
  }
  return acc / static_cast<double>(predicted.size());
}

}  // namespace tsa
