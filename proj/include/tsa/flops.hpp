#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "tsa/attention.hpp"
#include "tsa/tube.hpp"

namespace tsa {

/// Modeled multiply-accumulates of one attention module over K positions with
/// C channels reduced to C'. Per position: 3*C*C' for theta/phi/g and C'*C for
/// w_z. Per query/key pair: C' for the similarity and C' for the weighted sum.
struct CostItems {
  std::uint64_t embedding = 0;
  std::uint64_t similarity = 0;
  std::uint64_t weighting = 0;
  std::uint64_t output = 0;

  std::uint64_t total() const;
  friend bool operator==(const CostItems&, const CostItems&) = default;
};

CostItems model_cost(std::uint64_t positions, std::uint64_t channels, std::uint64_t reduced);
CostItems to_cost_items(const KernelCounter& counter);

/// Query/key pairs of the dense Non-local block: (N*T*H*W)^2.
std::uint64_t pairs_nonlocal(std::int64_t n, std::int64_t t, std::int64_t h, std::int64_t w);
/// Query/key pairs of tube attention: K^2 with K the tube size.
std::uint64_t pairs_tsa(const TubeIndex& tube);

struct CostReport {
  std::uint64_t positions = 0;       // N*T*H*W
  std::uint64_t tube_positions = 0;  // K
  std::uint64_t channels = 0;
  std::uint64_t reduced = 0;
  std::uint64_t pair_count_nl = 0;
  std::uint64_t pair_count_tsa = 0;
  CostItems nl;
  CostItems tsa;
  std::uint64_t flops_nl = 0;
  std::uint64_t flops_tsa = 0;
  double pair_reduction = 0.0;  // 1 - pair_count_tsa / pair_count_nl
  double reduction = 0.0;       // 1 - flops_tsa / flops_nl
  CostItems measured;
  std::uint64_t measured_flops_tsa = 0;

  nlohmann::json to_json() const;
  /// Aligned text table: method, MACs, reduction against the Non-local block.
  std::string table() const;
};

/// Modeled costs for a tube; the measured fields are left at zero.
CostReport model_report(const TubeIndex& tube, std::uint64_t channels, std::uint64_t reduced);

/// Runs the tube kernel with its MAC counter attached and returns the modeled
/// report together with what the kernel actually executed.
template <typename Scalar>
CostReport measure_kernel_flops(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                const AttentionParams<Scalar>& p) {
  CostReport report = model_report(tube, static_cast<std::uint64_t>(p.channels()),
                                   static_cast<std::uint64_t>(p.reduced()));
  KernelCounter counter;
  (void)tsa_forward(x, tube, p, &counter);
  report.measured = to_cost_items(counter);
  report.measured_flops_tsa = counter.total();
  return report;
}

}  // namespace tsa
