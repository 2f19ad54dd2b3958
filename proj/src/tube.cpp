#include "tsa/tube.hpp"

#include <algorithm>

#include "tsa/error.hpp"
#include "tsa/tensor.hpp"

namespace tsa {

std::string to_string(const TubeGrid& g) {
  return "(" + std::to_string(g.n) + "," + std::to_string(g.t) + "," + std::to_string(g.h) + "," +
         std::to_string(g.w) + ")";
}

std::string to_string(const Dims5& d) {
  return "(" + std::to_string(d.n) + "," + std::to_string(d.t) + "," + std::to_string(d.h) + "," +
         std::to_string(d.w) + "," + std::to_string(d.c) + ")";
}

TubeIndex::TubeIndex(const TubeGrid& grid, std::vector<std::uint8_t> masks)
    : grid_(grid), masks_(std::move(masks)) {
  if (grid.n < 1 || grid.t < 1 || grid.h < 1 || grid.w < 1) {
    throw ShapeError("tube grid dims must all be >= 1, got " + to_string(grid));
  }
  if (static_cast<Index>(masks_.size()) != grid.positions()) {
    throw ShapeError("tube masks hold " + std::to_string(masks_.size()) + " cells, grid " + to_string(grid) +
                     " needs " + std::to_string(grid.positions()));
  }
  positions_.resize(static_cast<std::size_t>(grid.slices()));
  Index flat = 0;
  for (Index s = 0; s < grid.slices(); ++s) {
    auto& cells = positions_[static_cast<std::size_t>(s)];
    for (Index i = 0; i < grid.h; ++i) {
      for (Index j = 0; j < grid.w; ++j, ++flat) {
        if (masks_[static_cast<std::size_t>(flat)] != 0) {
          masks_[static_cast<std::size_t>(flat)] = 1;
          cells.push_back({i, j});
          flat_rows_.push_back(flat);
        }
      }
    }
  }
}

TubeIndex TubeIndex::full(const TubeGrid& grid) {
  return TubeIndex(grid, std::vector<std::uint8_t>(static_cast<std::size_t>(grid.positions()), 1));
}

TubeIndex TubeIndex::empty(const TubeGrid& grid) {
  return TubeIndex(grid, std::vector<std::uint8_t>(static_cast<std::size_t>(grid.positions()), 0));
}

TubeIndex TubeIndex::mirrored_w() const {
  std::vector<std::uint8_t> out(masks_.size());
  for (Index s = 0; s < grid_.slices(); ++s) {
    for (Index i = 0; i < grid_.h; ++i) {
      const Index base = (s * grid_.h + i) * grid_.w;
      for (Index j = 0; j < grid_.w; ++j) {
        out[static_cast<std::size_t>(base + j)] = masks_[static_cast<std::size_t>(base + grid_.w - 1 - j)];
      }
    }
  }
  return TubeIndex(grid_, std::move(out));
}

TubeIndex TubeIndex::shifted_time(Index offset) const {
  std::vector<std::uint8_t> out(masks_.size());
  const Index cells = grid_.cells();
  for (Index n = 0; n < grid_.n; ++n) {
    for (Index t = 0; t < grid_.t; ++t) {
      const Index src_t = std::clamp<Index>(t - offset, 0, grid_.t - 1);
      std::copy_n(masks_.begin() + (n * grid_.t + src_t) * cells, cells, out.begin() + (n * grid_.t + t) * cells);
    }
  }
  return TubeIndex(grid_, std::move(out));
}

}  // namespace tsa
