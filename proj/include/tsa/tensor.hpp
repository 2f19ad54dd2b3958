#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tsa/error.hpp"

namespace tsa {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using MatrixXf = Matrix<float>;

/// Extents of a rank-5 feature tensor: clips, time, rows, cols, channels.
struct Dims5 {
  Index n = 1, t = 1, h = 1, w = 1, c = 1;

  Index positions() const { return n * t * h * w; }
  Index size() const { return positions() * c; }
  bool valid() const { return n >= 1 && t >= 1 && h >= 1 && w >= 1 && c >= 1; }
  std::array<Index, 5> as_array() const { return {n, t, h, w, c}; }
  friend bool operator==(const Dims5&, const Dims5&) = default;
};

std::string to_string(const Dims5& d);

/// Dense (n,t,i,j,c) tensor. Storage is a positions x channels row-major
/// matrix, which makes the flat layout exactly the (n,t,i,j,c) row-major order
/// and lets every per-position linear map be a plain matrix product.
template <typename Scalar>
class FeatureTensor {
 public:
  using Storage = Matrix<Scalar>;

  FeatureTensor() : FeatureTensor(Dims5{}) {}

  explicit FeatureTensor(const Dims5& dims) : dims_(dims) {
    check_dims(dims);
    data_ = Storage::Zero(dims.positions(), dims.c);
  }

  FeatureTensor(const Dims5& dims, Storage data) : dims_(dims), data_(std::move(data)) {
    check_dims(dims);
    if (data_.rows() != dims.positions() || data_.cols() != dims.c) {
      throw ShapeError("feature tensor storage " + std::to_string(data_.rows()) + "x" +
                       std::to_string(data_.cols()) + " does not match dims " + to_string(dims));
    }
  }

  static FeatureTensor constant(const Dims5& dims, Scalar value) {
    FeatureTensor out(dims);
    out.data_.setConstant(value);
    return out;
  }

  const Dims5& dims() const { return dims_; }
  Index positions() const { return dims_.positions(); }
  Index channels() const { return dims_.c; }

  const Storage& data() const { return data_; }
  Storage& data() { return data_; }

  Index row(Index n, Index t, Index i, Index j) const {
    return ((n * dims_.t + t) * dims_.h + i) * dims_.w + j;
  }
  Scalar& operator()(Index n, Index t, Index i, Index j, Index c) { return data_(row(n, t, i, j), c); }
  Scalar operator()(Index n, Index t, Index i, Index j, Index c) const { return data_(row(n, t, i, j), c); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  FeatureTensor<Other> cast() const {
    return FeatureTensor<Other>(dims_, data_.template cast<Other>());
  }

  friend bool operator==(const FeatureTensor& a, const FeatureTensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  static void check_dims(const Dims5& d) {
    if (!d.valid()) throw ShapeError("feature tensor dims must all be >= 1, got " + to_string(d));
  }

  Dims5 dims_;
  Storage data_;
};

using FeatureTensorXd = FeatureTensor<double>;
using FeatureTensorXf = FeatureTensor<float>;

/// Matrix product with a fixed summation order: every output element
/// accumulates its k terms in ascending k. Results are therefore reproducible
/// bit-for-bit and comparable exactly against a naive triple loop.
/// When `macs` is given, every executed multiply-accumulate is tallied there.
template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b, std::uint64_t* macs = nullptr) {
  using Scalar = typename DerivedA::Scalar;
  static_assert(std::is_same_v<Scalar, typename DerivedB::Scalar>, "matmul scalar mismatch");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  // Materialize operands so row access is contiguous even for transposed views.
  const Matrix<Scalar> lhs = a;
  const Matrix<Scalar> rhs = b;
  Matrix<Scalar> out = Matrix<Scalar>::Zero(lhs.rows(), rhs.cols());
  for (Index i = 0; i < lhs.rows(); ++i) {
    auto out_row = out.row(i);
    for (Index k = 0; k < lhs.cols(); ++k) {
      const Scalar aik = lhs(i, k);
      out_row += aik * rhs.row(k);
    }
    if (macs) *macs += static_cast<std::uint64_t>(lhs.cols()) * static_cast<std::uint64_t>(rhs.cols());
  }
  return out;
}

}  // namespace tsa

#include "tsa/tube.hpp"

namespace tsa {

inline void check_tube_matches(const Dims5& dims, const TubeIndex& tube, const char* op) {
  const auto& g = tube.grid();
  if (g.n != dims.n || g.t != dims.t || g.h != dims.h || g.w != dims.w) {
    throw ShapeError(std::string(op) + ": tube grid " + to_string(g) + " does not match tensor dims " +
                     to_string(dims));
  }
}

/// Selected features as a |tube| x C matrix, rows in canonical tube order.
template <typename Scalar>
Matrix<Scalar> gather_positions(const FeatureTensor<Scalar>& x, const TubeIndex& tube) {
  check_tube_matches(x.dims(), tube, "gather_positions");
  const auto& rows = tube.flat_rows();
  Matrix<Scalar> out(static_cast<Index>(rows.size()), x.channels());
  for (Index k = 0; k < out.rows(); ++k) out.row(k) = x.data().row(rows[k]);
  return out;
}

/// Copy of x with rows added onto the tube positions.
template <typename Scalar, typename Derived>
FeatureTensor<Scalar> scatter_add(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                  const Eigen::MatrixBase<Derived>& rows) {
  check_tube_matches(x.dims(), tube, "scatter_add");
  const auto& flat = tube.flat_rows();
  if (rows.rows() != static_cast<Index>(flat.size()) || rows.cols() != x.channels()) {
    throw ShapeError("scatter_add: rows " + std::to_string(rows.rows()) + "x" + std::to_string(rows.cols()) +
                     " but tube has " + std::to_string(flat.size()) + " positions and C=" +
                     std::to_string(x.channels()));
  }
  FeatureTensor<Scalar> out = x;
  for (Index k = 0; k < rows.rows(); ++k) out.data().row(flat[k]) += rows.row(k);
  return out;
}

/// Mean over the clip axis. Each element sums its N values in sorted order,
/// so the result does not depend on clip order at all.
template <typename Scalar>
FeatureTensor<Scalar> clip_mean(const FeatureTensor<Scalar>& h) {
  const Dims5& d = h.dims();
  Dims5 od = d;
  od.n = 1;
  FeatureTensor<Scalar> out(od);
  const Index per_clip = od.size();
  const Scalar* src = h.data().data();
  Scalar* dst = out.data().data();
  std::vector<Scalar> values(static_cast<std::size_t>(d.n));
  for (Index e = 0; e < per_clip; ++e) {
    for (Index n = 0; n < d.n; ++n) values[n] = src[n * per_clip + e];
    std::sort(values.begin(), values.end());
    Scalar acc = 0;
    for (Scalar v : values) acc += v;
    dst[e] = acc / static_cast<Scalar>(d.n);
  }
  return out;
}

/// Reverses the W axis.
template <typename Scalar>
FeatureTensor<Scalar> mirror_w(const FeatureTensor<Scalar>& x) {
  const Dims5& d = x.dims();
  FeatureTensor<Scalar> out(d);
  for (Index n = 0; n < d.n; ++n)
    for (Index t = 0; t < d.t; ++t)
      for (Index i = 0; i < d.h; ++i)
        for (Index j = 0; j < d.w; ++j) out.data().row(out.row(n, t, i, j)) = x.data().row(x.row(n, t, i, d.w - 1 - j));
  return out;
}

/// Shifts every clip by `offset` steps along T; slots shifted in from outside
/// repeat the edge slice.
template <typename Scalar>
FeatureTensor<Scalar> shift_time(const FeatureTensor<Scalar>& x, Index offset) {
  const Dims5& d = x.dims();
  FeatureTensor<Scalar> out(d);
  const Index per_step = d.h * d.w;
  for (Index n = 0; n < d.n; ++n) {
    for (Index t = 0; t < d.t; ++t) {
      const Index src = std::clamp<Index>(t - offset, 0, d.t - 1);
      out.data().middleRows((n * d.t + t) * per_step, per_step) =
          x.data().middleRows((n * d.t + src) * per_step, per_step);
    }
  }
  return out;
}

}  // namespace tsa
