#pragma once

// Independent reference implementations used only by the tests. They are
// written for clarity, not speed, and share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tsa/attention.hpp"
#include "tsa/geometry.hpp"
#include "tsa/rng.hpp"
#include "tsa/tensor.hpp"
#include "tsa/tube.hpp"

namespace oracle {

using tsa::Index;
using tsa::MatrixXd;
using tsa::FeatureTensorXd;

inline MatrixXd naive_matmul(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out = MatrixXd::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

inline MatrixXd random_matrix(Index rows, Index cols, tsa::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  MatrixXd m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
  return m;
}

inline FeatureTensorXd random_tensor(const tsa::Dims5& d, tsa::Rng& rng, double scale = 1.0) {
  return FeatureTensorXd(d, random_matrix(d.positions(), d.c, rng, scale));
}

inline tsa::TubeIndex random_tube(const tsa::TubeGrid& grid, double p, tsa::Rng& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<std::uint8_t> masks(static_cast<std::size_t>(grid.positions()));
  for (auto& m : masks) m = coin(rng) ? 1 : 0;
  return tsa::TubeIndex(grid, std::move(masks));
}

inline tsa::AttentionParams<double> random_params(Index c, Index r, tsa::Rng& rng, double scale = 0.5) {
  return {random_matrix(c, r, rng, scale), random_matrix(c, r, rng, scale), random_matrix(c, r, rng, scale),
          random_matrix(r, c, rng, scale)};
}

// Every element's offset in the flat (n,t,i,j) order, computed independently.
inline Index flat(const tsa::Dims5& d, Index n, Index t, Index i, Index j) {
  return ((n * d.t + t) * d.h + i) * d.w + j;
}

// Attention by explicit loops over every (query, key) pair, with the tube
// given as a mask. Queries outside the tube keep their input.
inline FeatureTensorXd naive_attention(const FeatureTensorXd& x, const std::vector<bool>& in_tube,
                                       const tsa::AttentionParams<double>& p) {
  const Index positions = x.positions(), c = x.channels(), r = p.theta.cols();
  Index k = 0;
  for (bool b : in_tube) k += b ? 1 : 0;
  FeatureTensorXd out = x;
  if (k == 0) return out;
  auto embed = [&](const MatrixXd& w, Index pos, Index col) {
    double acc = 0.0;
    for (Index ch = 0; ch < c; ++ch) acc += x.data()(pos, ch) * w(ch, col);
    return acc;
  };
  for (Index q = 0; q < positions; ++q) {
    if (!in_tube[static_cast<std::size_t>(q)]) continue;
    std::vector<double> y(static_cast<std::size_t>(r), 0.0);
    for (Index v = 0; v < positions; ++v) {
      if (!in_tube[static_cast<std::size_t>(v)]) continue;
      double sim = 0.0;
      for (Index a = 0; a < r; ++a) sim += embed(p.theta, q, a) * embed(p.phi, v, a);
      for (Index a = 0; a < r; ++a) y[static_cast<std::size_t>(a)] += sim * embed(p.g, v, a);
    }
    for (Index ch = 0; ch < c; ++ch) {
      double z = 0.0;
      for (Index a = 0; a < r; ++a) z += y[static_cast<std::size_t>(a)] / static_cast<double>(k) * p.wz(a, ch);
      out.data()(q, ch) += z;
    }
  }
  return out;
}

inline std::vector<bool> tube_mask(const tsa::TubeIndex& tube) {
  std::vector<bool> m;
  for (auto b : tube.masks()) m.push_back(b != 0);
  return m;
}

// Largest absolute difference relative to the largest magnitude of `b`.
inline double rel_error(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// Central finite differences of a scalar function of one matrix.
inline MatrixXd numeric_gradient(MatrixXd& w, const std::function<double()>& f, double h = 1e-5) {
  MatrixXd g(w.rows(), w.cols());
  for (Index k = 0; k < w.size(); ++k) {
    const double keep = w.data()[k];
    w.data()[k] = keep + h;
    const double up = f();
    w.data()[k] = keep - h;
    const double down = f();
    w.data()[k] = keep;
    g.data()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

// Norm-wise relative error used for gradient comparisons.
inline double grad_error(const MatrixXd& analytic, const MatrixXd& numeric) {
  const double denom = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / denom;
}

inline bool point_in_convex(const std::array<tsa::Point2, 4>& q, double x, double y) {
  int pos = 0, neg = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const tsa::Point2& a = q[k];
    const tsa::Point2& b = q[(k + 1) % 4];
    const double cross = (b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x());
    if (cross > 0) ++pos;
    if (cross < 0) ++neg;
  }
  return pos == 0 || neg == 0;
}

// Fraction of samples_per_axis^2 midpoint samples of cell (i, j) that fall in
// the box, sampled in frame coordinates.
inline double supersample_coverage(const tsa::TrackBox& box, Index i, Index j, const tsa::GridSpec& spec,
                                   int samples_per_axis = 16) {
  const double cw = spec.frame_width / static_cast<double>(spec.grid_w);
  const double ch = spec.frame_height / static_cast<double>(spec.grid_h);
  int hits = 0;
  for (int sy = 0; sy < samples_per_axis; ++sy)
    for (int sx = 0; sx < samples_per_axis; ++sx) {
      const double x = (static_cast<double>(j) + (sx + 0.5) / samples_per_axis) * cw;
      const double y = (static_cast<double>(i) + (sy + 0.5) / samples_per_axis) * ch;
      if (point_in_convex(box.pts, x, y)) ++hits;
    }
  return static_cast<double>(hits) / (samples_per_axis * samples_per_axis);
}

// Exact coverage computed the other way round: the cell square (in frame
// coordinates) is clipped by each half-plane of the quad's edges.
inline double halfplane_coverage(const tsa::TrackBox& box, Index i, Index j, const tsa::GridSpec& spec) {
  const double cw = spec.frame_width / static_cast<double>(spec.grid_w);
  const double ch = spec.frame_height / static_cast<double>(spec.grid_h);
  std::vector<tsa::Point2> poly = {{j * cw, i * ch}, {(j + 1) * cw, i * ch}, {(j + 1) * cw, (i + 1) * ch},
                                   {j * cw, (i + 1) * ch}};
  double orient = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& a = box.pts[k];
    const auto& b = box.pts[(k + 1) % 4];
    orient += a.x() * b.y() - b.x() * a.y();
  }
  const double sign = orient > 0 ? 1.0 : -1.0;
  for (std::size_t k = 0; k < 4 && !poly.empty(); ++k) {
    const auto& a = box.pts[k];
    const auto& b = box.pts[(k + 1) % 4];
    auto side = [&](const tsa::Point2& p) {
      return sign * ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x()));
    };
    std::vector<tsa::Point2> next;
    for (std::size_t m = 0; m < poly.size(); ++m) {
      const auto& p = poly[m];
      const auto& q = poly[(m + 1) % poly.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0) next.push_back(p);
      if ((sp >= 0) != (sq >= 0)) next.push_back(p + (q - p) * (sp / (sp - sq)));
    }
    poly = std::move(next);
  }
  double area = 0.0;
  for (std::size_t m = 0; m < poly.size(); ++m) {
    const auto& p = poly[m];
    const auto& q = poly[(m + 1) % poly.size()];
    area += p.x() * q.y() - q.x() * p.y();
  }
  return std::abs(area) / 2.0 / (cw * ch);
}

// Random convex quadrilateral: a rotated rectangle with each corner pulled
// toward the center by a random fraction, which keeps it convex.
inline tsa::TrackBox random_quad(std::int64_t frame, double fw, double fh, tsa::Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cx = fw * (0.1 + 0.8 * u(rng)), cy = fh * (0.1 + 0.8 * u(rng));
  const double hw = fw * (0.05 + 0.3 * u(rng)), hh = fh * (0.05 + 0.3 * u(rng));
  const double a = 3.141592653589793 * u(rng);
  const double corners[4][2] = {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
  tsa::TrackBox box;
  box.frame = frame;
  for (std::size_t k = 0; k < 4; ++k) {
    const double shrink = 1.0 - 0.3 * u(rng);
    const double x = corners[k][0] * shrink, y = corners[k][1] * shrink;
    box.pts[k] = tsa::Point2(cx + std::cos(a) * x - std::sin(a) * y, cy + std::sin(a) * x + std::cos(a) * y);
  }
  return box;
}

// Fractional ranks by counting: 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> counting_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double smaller = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) smaller += 1;
      if (w == v[i]) equal += 1;
    }
    r[i] = 1.0 + smaller + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double brute_spearman(const std::vector<double>& pred, const std::vector<double>& truth) {
  return pearson(counting_ranks(pred), counting_ranks(truth));
}

}  // namespace oracle
