#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace tsa {

/// Clip/time/row/col extents shared by a tube and the feature map it indexes.
struct TubeGrid {
  Eigen::Index n = 1, t = 1, h = 1, w = 1;

  Eigen::Index slices() const { return n * t; }
  Eigen::Index cells() const { return h * w; }
  Eigen::Index positions() const { return n * t * h * w; }
  friend bool operator==(const TubeGrid&, const TubeGrid&) = default;
};

std::string to_string(const TubeGrid& g);

struct GridCell {
  Eigen::Index i = 0, j = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Selected feature-grid positions per (clip, time) slice together with their
/// masks. Positions are kept in canonical order (n, t, i, j ascending), which is
/// also the row order of every gathered tube matrix.
class TubeIndex {
 public:
  TubeIndex() = default;

  /// masks is n*t*h*w bytes in (n,t,i,j) row-major order; nonzero = selected.
  TubeIndex(const TubeGrid& grid, std::vector<std::uint8_t> masks);

  static TubeIndex full(const TubeGrid& grid);
  static TubeIndex empty(const TubeGrid& grid);

  const TubeGrid& grid() const { return grid_; }
  bool mask(Eigen::Index n, Eigen::Index t, Eigen::Index i, Eigen::Index j) const {
    return masks_[static_cast<std::size_t>(((n * grid_.t + t) * grid_.h + i) * grid_.w + j)] != 0;
  }
  const std::vector<std::uint8_t>& masks() const { return masks_; }

  /// Omega for one slice, sorted by (i, j).
  const std::vector<GridCell>& positions(Eigen::Index n, Eigen::Index t) const {
    return positions_[static_cast<std::size_t>(n * grid_.t + t)];
  }
  Eigen::Index count(Eigen::Index n, Eigen::Index t) const {
    return static_cast<Eigen::Index>(positions(n, t).size());
  }
  Eigen::Index total() const { return static_cast<Eigen::Index>(flat_rows_.size()); }
  bool is_full() const { return total() == grid_.positions(); }
  double occupancy() const {
    return static_cast<double>(total()) / static_cast<double>(grid_.positions());
  }

  /// Flat (n,t,i,j) row index of every tube position in canonical order.
  const std::vector<Eigen::Index>& flat_rows() const { return flat_rows_; }

  /// Tube of the horizontally mirrored feature map (column j -> w-1-j).
  TubeIndex mirrored_w() const;
  /// Tube of a feature map shifted by `offset` time steps inside every clip,
  /// replicating the edge slice.
  TubeIndex shifted_time(Eigen::Index offset) const;

  friend bool operator==(const TubeIndex& a, const TubeIndex& b) {
    return a.grid_ == b.grid_ && a.masks_ == b.masks_;
  }

 private:
  TubeGrid grid_;
  std::vector<std::uint8_t> masks_;
  std::vector<std::vector<GridCell>> positions_;
  std::vector<Eigen::Index> flat_rows_;
};

}  // namespace tsa
