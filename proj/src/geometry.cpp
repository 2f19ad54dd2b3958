#include "tsa/geometry.hpp"

#include <cmath>
#include <map>
#include <string>

#include "tsa/error.hpp"

namespace tsa {

ClipLayout ClipLayout::uniform(Eigen::Index video_length, Eigen::Index clips, Eigen::Index clip_length) {
  if (clips < 1 || clip_length < 1 || video_length < clip_length) {
    throw UsageError("clip layout needs clips >= 1 and 1 <= clip_length <= video_length (got L=" +
                     std::to_string(video_length) + ", N=" + std::to_string(clips) +
                     ", M=" + std::to_string(clip_length) + ")");
  }
  ClipLayout layout;
  layout.video_length = video_length;
  layout.clip_length = clip_length;
  const Eigen::Index span = video_length - clip_length;
  for (Eigen::Index k = 0; k < clips; ++k) {
    if (clips == 1) {
      layout.starts.push_back(0);
    } else {
      // Integer round-half-up of k * span / (clips - 1).
      layout.starts.push_back((2 * k * span + (clips - 1)) / (2 * (clips - 1)));
    }
  }
  return layout;
}

std::vector<std::int64_t> GridSpec::frames_for(Eigen::Index clip, Eigen::Index step) const {
  const Eigen::Index start = layout.starts.at(static_cast<std::size_t>(clip));
  const Eigen::Index first = start + step * stride;
  const Eigen::Index last = std::min(first + stride, start + layout.clip_length);
  std::vector<std::int64_t> frames;
  for (Eigen::Index f = first; f < last; ++f) frames.push_back(f);
  return frames;
}

void GridSpec::validate() const {
  if (!(frame_width > 0) || !(frame_height > 0) || !std::isfinite(frame_width) || !std::isfinite(frame_height)) {
    throw UsageError("frame size must be positive and finite");
  }
  if (grid_h < 1 || grid_w < 1) throw UsageError("feature grid must be at least 1x1");
  if (stride < 1) throw UsageError("temporal stride must be >= 1");
  if (layout.clip_length < 1 || layout.starts.empty()) throw UsageError("clip layout is empty");
  for (Eigen::Index s : layout.starts) {
    if (s < 0 || s + layout.clip_length > layout.video_length) {
      throw DataError("clip [" + std::to_string(s) + ", " + std::to_string(s + layout.clip_length) +
                      ") reaches outside the video of " + std::to_string(layout.video_length) + " frames");
    }
  }
}

double signed_area(const Polygon& poly) {
  double acc = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Point2& a = poly[k];
    const Point2& b = poly[(k + 1) % n];
    acc += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * acc;
}

double polygon_area(const Polygon& poly) { return std::abs(signed_area(poly)); }

namespace {

// One Sutherland-Hodgman pass against the half-plane {p : sign * (p[axis] - bound) <= 0}.
Polygon clip_half_plane(const Polygon& in, int axis, double bound, double sign) {
  Polygon out;
  if (in.empty()) return out;
  out.reserve(in.size() + 2);
  auto inside = [&](const Point2& p) { return sign * (p[axis] - bound) <= 0.0; };
  Point2 prev = in.back();
  bool prev_in = inside(prev);
  for (const Point2& cur : in) {
    const bool cur_in = inside(cur);
    if (cur_in != prev_in) {
      const double t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
      Point2 hit = prev + t * (cur - prev);
      hit[axis] = bound;
      out.push_back(hit);
    }
    if (cur_in) out.push_back(cur);
    prev = cur;
    prev_in = cur_in;
  }
  return out;
}

}  // namespace

Polygon clip_to_rect(const Polygon& poly, double xmin, double ymin, double xmax, double ymax) {
  Polygon out = clip_half_plane(poly, 0, xmin, -1.0);
  out = clip_half_plane(out, 0, xmax, 1.0);
  out = clip_half_plane(out, 1, ymin, -1.0);
  out = clip_half_plane(out, 1, ymax, 1.0);
  return out;
}

void validate_box(const TrackBox& box) {
  for (const Point2& p : box.pts) {
    if (!p.allFinite()) throw GeometryError("frame " + std::to_string(box.frame) + ": non-finite box vertex");
  }
  int positive = 0, negative = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const Point2 e1 = box.pts[(k + 1) % 4] - box.pts[k];
    const Point2 e2 = box.pts[(k + 2) % 4] - box.pts[(k + 1) % 4];
    const double cross = e1.x() * e2.y() - e1.y() * e2.x();
    if (cross > 0) ++positive;
    if (cross < 0) ++negative;
  }
  if (positive > 0 && negative > 0) {
    throw GeometryError("frame " + std::to_string(box.frame) + ": box is not a simple convex quadrilateral");
  }
  const Polygon poly(box.pts.begin(), box.pts.end());
  if (!(polygon_area(poly) > 0.0)) {
    throw GeometryError("frame " + std::to_string(box.frame) + ": box has zero area");
  }
}

TrackBox reflect_x(const TrackBox& box, double frame_width) {
  TrackBox out = box;
  for (std::size_t k = 0; k < 4; ++k) {
    const Point2& p = box.pts[3 - k];
    out.pts[k] = Point2(frame_width - p.x(), p.y());
  }
  return out;
}

Polygon box_in_grid(const TrackBox& box, const GridSpec& spec) {
  validate_box(box);
  Polygon poly = clip_to_rect(Polygon(box.pts.begin(), box.pts.end()), 0.0, 0.0, spec.frame_width,
                              spec.frame_height);
  const double sx = static_cast<double>(spec.grid_w);
  const double sy = static_cast<double>(spec.grid_h);
  for (Point2& p : poly) {
    p.x() = p.x() * sx / spec.frame_width;
    p.y() = p.y() * sy / spec.frame_height;
  }
  return poly;
}

namespace {

double cell_coverage(const Polygon& grid_poly, Eigen::Index i, Eigen::Index j) {
  if (grid_poly.size() < 3) return 0.0;
  const Polygon piece = clip_to_rect(grid_poly, static_cast<double>(j), static_cast<double>(i),
                                     static_cast<double>(j + 1), static_cast<double>(i + 1));
  if (piece.size() < 3) return 0.0;
  return std::min(1.0, polygon_area(piece));
}

}  // namespace

double coverage(const TrackBox& box, GridCell cell, const GridSpec& spec) {
  if (cell.i < 0 || cell.i >= spec.grid_h || cell.j < 0 || cell.j >= spec.grid_w) {
    throw ShapeError("cell (" + std::to_string(cell.i) + "," + std::to_string(cell.j) + ") outside the grid");
  }
  return cell_coverage(box_in_grid(box, spec), cell.i, cell.j);
}

GridMask mask_from_box(const TrackBox& box, const GridSpec& spec, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("tau must lie in (0, 1], got " + std::to_string(tau));
  const Polygon poly = box_in_grid(box, spec);
  GridMask mask = GridMask::Constant(spec.grid_h, spec.grid_w, false);
  if (poly.size() < 3) return mask;
  double xmin = poly[0].x(), xmax = xmin, ymin = poly[0].y(), ymax = ymin;
  for (const Point2& p : poly) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  const auto lo_i = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(ymin)));
  const auto hi_i = std::min<Eigen::Index>(spec.grid_h - 1, static_cast<Eigen::Index>(std::floor(ymax)));
  const auto lo_j = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(xmin)));
  const auto hi_j = std::min<Eigen::Index>(spec.grid_w - 1, static_cast<Eigen::Index>(std::floor(xmax)));
  for (Eigen::Index i = lo_i; i <= hi_i; ++i) {
    for (Eigen::Index j = lo_j; j <= hi_j; ++j) {
      mask(i, j) = cell_coverage(poly, i, j) >= tau;
    }
  }
  return mask;
}

GridMask union_masks(std::span<const GridMask> masks) {
  if (masks.empty()) throw UsageError("union_masks needs at least one mask");
  GridMask out = masks.front();
  for (const GridMask& m : masks.subspan(1)) {
    if (m.rows() != out.rows() || m.cols() != out.cols()) throw ShapeError("union_masks: mask shapes differ");
    out = out || m;
  }
  return out;
}

TubeIndex build_tube(std::span<const TrackBox> boxes, const GridSpec& spec, double tau) {
  spec.validate();
  std::map<std::int64_t, const TrackBox*> by_frame;
  std::int64_t prev = -1;
  for (const TrackBox& b : boxes) {
    if (b.frame < 0 || b.frame >= spec.layout.video_length) {
      throw DataError("box for frame " + std::to_string(b.frame) + " lies outside the video of " +
                      std::to_string(spec.layout.video_length) + " frames");
    }
    if (b.frame == prev) throw DataError("duplicate box for frame " + std::to_string(b.frame));
    if (b.frame < prev) throw DataError("box frames not ascending at frame " + std::to_string(b.frame));
    prev = b.frame;
    by_frame.emplace(b.frame, &b);
  }

  const TubeGrid grid = spec.tube_grid();
  const GridMask empty = GridMask::Constant(spec.grid_h, spec.grid_w, false);
  std::map<std::int64_t, GridMask> frame_masks;
  auto mask_for = [&](std::int64_t frame) -> const GridMask& {
    auto it = frame_masks.find(frame);
    if (it != frame_masks.end()) return it->second;
    auto box = by_frame.find(frame);
    GridMask m = box == by_frame.end() ? empty : mask_from_box(*box->second, spec, tau);
    return frame_masks.emplace(frame, std::move(m)).first->second;
  };

  std::vector<std::uint8_t> bits(static_cast<std::size_t>(grid.positions()), 0);
  for (Eigen::Index c = 0; c < grid.n; ++c) {
    for (Eigen::Index t = 0; t < grid.t; ++t) {
      std::vector<GridMask> group;
      for (std::int64_t f : spec.frames_for(c, t)) group.push_back(mask_for(f));
      const GridMask slice = union_masks(group);
      const Eigen::Index base = (c * grid.t + t) * grid.h * grid.w;
      for (Eigen::Index i = 0; i < grid.h; ++i) {
        for (Eigen::Index j = 0; j < grid.w; ++j) {
          bits[static_cast<std::size_t>(base + i * grid.w + j)] = slice(i, j) ? 1 : 0;
        }
      }
    }
  }
  return TubeIndex(grid, std::move(bits));
}

}  // namespace tsa
