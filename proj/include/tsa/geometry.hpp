#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tsa/tube.hpp"

namespace tsa {

using Point2 = Eigen::Vector2d;
using Polygon = std::vector<Point2>;

/// Per-pixel boolean mask over the feature grid, H x W.
using GridMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultTau = 0.5;

/// One tracker output: a convex quadrilateral in pixel coordinates with the
/// origin at the top-left corner of the frame.
struct TrackBox {
  std::int64_t frame = 0;
  std::array<Point2, 4> pts;

  friend bool operator==(const TrackBox&, const TrackBox&) = default;
};

/// Frame ranges of the clips a video is cut into.
struct ClipLayout {
  Eigen::Index video_length = 103;
  Eigen::Index clip_length = 16;
  std::vector<Eigen::Index> starts;

  /// `clips` windows of `clip_length` frames with starts spread uniformly
  /// (rounded) over [0, video_length - clip_length]. Windows may overlap.
  static ClipLayout uniform(Eigen::Index video_length, Eigen::Index clips, Eigen::Index clip_length);

  Eigen::Index clips() const { return static_cast<Eigen::Index>(starts.size()); }
  friend bool operator==(const ClipLayout&, const ClipLayout&) = default;
};

struct GridSpec {
  double frame_width = 224.0;
  double frame_height = 224.0;
  Eigen::Index grid_h = 14;
  Eigen::Index grid_w = 14;
  Eigen::Index stride = 4;  // frames per feature time step
  ClipLayout layout = ClipLayout::uniform(103, 10, 16);

  /// Feature time steps per clip; a trailing partial group of < stride frames
  /// still forms its own step.
  Eigen::Index steps_per_clip() const { return (layout.clip_length + stride - 1) / stride; }
  TubeGrid tube_grid() const { return {layout.clips(), steps_per_clip(), grid_h, grid_w}; }

  /// Video frames that pool into feature slice (clip, step).
  std::vector<std::int64_t> frames_for(Eigen::Index clip, Eigen::Index step) const;

  /// Throws UsageError for bad extents and DataError for a layout that
  /// reaches outside the video.
  void validate() const;
};

double signed_area(const Polygon& poly);
double polygon_area(const Polygon& poly);

/// Sutherland-Hodgman clip of a polygon against an axis-aligned rectangle.
Polygon clip_to_rect(const Polygon& poly, double xmin, double ymin, double xmax, double ymax);

/// Throws GeometryError unless the box is a finite, simple, convex
/// quadrilateral with positive area.
void validate_box(const TrackBox& box);

/// Horizontal reflection x -> frame_width - x, keeping the vertex winding.
TrackBox reflect_x(const TrackBox& box, double frame_width);

/// Box clipped to the frame and mapped into grid units (column = x, row = y).
Polygon box_in_grid(const TrackBox& box, const GridSpec& spec);

/// Fraction of feature cell (i, j) covered by the box, from exact polygon
/// clipping against the cell and the shoelace area.
double coverage(const TrackBox& box, GridCell cell, const GridSpec& spec);

/// Cells whose coverage reaches tau (inclusive).
GridMask mask_from_box(const TrackBox& box, const GridSpec& spec, double tau = kDefaultTau);

GridMask union_masks(std::span<const GridMask> masks);

/// Rasterizes every frame's box, ORs the masks of the frames pooled into each
/// (clip, step) slice and records the selected positions. Frames without a
/// box contribute nothing.
TubeIndex build_tube(std::span<const TrackBox> boxes, const GridSpec& spec, double tau = kDefaultTau);

}  // namespace tsa
