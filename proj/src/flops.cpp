#include "tsa/flops.hpp"

#include <cstdio>
#include <sstream>

#include "tsa/error.hpp"

namespace tsa {

namespace {

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw NumericError("operation count overflows 64 bits");
  return out;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw NumericError("operation count overflows 64 bits");
  return out;
}

}  // namespace

std::uint64_t CostItems::total() const {
  return checked_add(checked_add(embedding, similarity), checked_add(weighting, output));
}

CostItems model_cost(std::uint64_t positions, std::uint64_t channels, std::uint64_t reduced) {
  CostItems c;
  if (positions == 0) return c;
  const std::uint64_t pairs = checked_mul(positions, positions);
  c.embedding = checked_mul(checked_mul(3, positions), checked_mul(channels, reduced));
  c.similarity = checked_mul(pairs, reduced);
  c.weighting = checked_mul(pairs, reduced);
  c.output = checked_mul(positions, checked_mul(reduced, channels));
  return c;
}

CostItems to_cost_items(const KernelCounter& counter) {
  return {counter.embedding, counter.similarity, counter.weighting, counter.output};
}

std::uint64_t pairs_nonlocal(std::int64_t n, std::int64_t t, std::int64_t h, std::int64_t w) {
  if (n < 1 || t < 1 || h < 1 || w < 1) throw ShapeError("pairs_nonlocal: dims must be >= 1");
  const std::uint64_t positions =
      checked_mul(checked_mul(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(t)),
                  checked_mul(static_cast<std::uint64_t>(h), static_cast<std::uint64_t>(w)));
  return checked_mul(positions, positions);
}

std::uint64_t pairs_tsa(const TubeIndex& tube) {
  const auto k = static_cast<std::uint64_t>(tube.total());
  return checked_mul(k, k);
}

CostReport model_report(const TubeIndex& tube, std::uint64_t channels, std::uint64_t reduced) {
  const TubeGrid& g = tube.grid();
  CostReport r;
  r.positions = static_cast<std::uint64_t>(g.positions());
  r.tube_positions = static_cast<std::uint64_t>(tube.total());
  r.channels = channels;
  r.reduced = reduced;
  r.pair_count_nl = pairs_nonlocal(g.n, g.t, g.h, g.w);
  r.pair_count_tsa = pairs_tsa(tube);
  r.nl = model_cost(r.positions, channels, reduced);
  r.tsa = model_cost(r.tube_positions, channels, reduced);
  r.flops_nl = r.nl.total();
  r.flops_tsa = r.tsa.total();
  r.pair_reduction = 1.0 - static_cast<double>(r.pair_count_tsa) / static_cast<double>(r.pair_count_nl);
  r.reduction = r.flops_nl == 0 ? 0.0 : 1.0 - static_cast<double>(r.flops_tsa) / static_cast<double>(r.flops_nl);
  return r;
}

namespace {

nlohmann::json items_json(const CostItems& c) {
  return {{"embedding", c.embedding},
          {"similarity", c.similarity},
          {"weighting", c.weighting},
          {"output", c.output},
          {"total", c.total()}};
}

}  // namespace

nlohmann::json CostReport::to_json() const {
  return {{"positions", positions},
          {"tube_positions", tube_positions},
          {"occupancy", positions == 0 ? 0.0 : static_cast<double>(tube_positions) / static_cast<double>(positions)},
          {"channels", channels},
          {"reduced_channels", reduced},
          {"pair_count_nl", pair_count_nl},
          {"pair_count_tsa", pair_count_tsa},
          {"pair_reduction", pair_reduction},
          {"flops_nl", flops_nl},
          {"flops_tsa", flops_tsa},
          {"reduction", reduction},
          {"nl_items", items_json(nl)},
          {"tsa_items", items_json(tsa)},
          {"measured_flops_tsa", measured_flops_tsa},
          {"measured_items", items_json(measured)}};
}

std::string CostReport::table() const {
  char line[160];
  std::ostringstream out;
  std::snprintf(line, sizeof line, "%-10s %16s %16s %12s\n", "Method", "MACs", "Pairs", "Comp. Dec.");
  out << line;
  std::snprintf(line, sizeof line, "%-10s %16llu %16llu %12s\n", "NL-Net", static_cast<unsigned long long>(flops_nl),
                static_cast<unsigned long long>(pair_count_nl), "-");
  out << line;
  char dec[32];
  std::snprintf(dec, sizeof dec, "-%.2f%%", 100.0 * reduction);
  std::snprintf(line, sizeof line, "%-10s %16llu %16llu %12s\n", "TSA-Net", static_cast<unsigned long long>(flops_tsa),
                static_cast<unsigned long long>(pair_count_tsa), dec);
  out << line;
  return out.str();
}

}  // namespace tsa
