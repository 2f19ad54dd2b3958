#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tsa/error.hpp"
#include "tsa/rng.hpp"
#include "tsa/tensor.hpp"
#include "tsa/tube.hpp"

namespace tsa {

inline constexpr Index kDefaultReductionFactor = 2;
inline constexpr Index kMaxStackDepth = 3;
// Query rows processed per similarity block; bounds the K x K working set.
inline constexpr Index kQueryBlock = 64;

/// Bias-free per-position linear maps of one attention module:
/// theta, phi, g reduce C -> C', w_z embeds C' -> C.
template <typename Scalar>
struct AttentionParams {
  Matrix<Scalar> theta, phi, g, wz;

  Index channels() const { return theta.rows(); }
  Index reduced() const { return theta.cols(); }

  void validate() const {
    const Index c = theta.rows(), r = theta.cols();
    if (c < 1 || r < 1) throw ShapeError("attention params: empty theta");
    if (phi.rows() != c || phi.cols() != r || g.rows() != c || g.cols() != r || wz.rows() != r ||
        wz.cols() != c) {
      throw ShapeError("attention params: inconsistent shapes for C=" + std::to_string(c) +
                       ", C'=" + std::to_string(r));
    }
    if (!theta.allFinite() || !phi.allFinite() || !g.allFinite() || !wz.allFinite()) {
      throw NumericError("attention params hold non-finite values");
    }
  }

  /// theta, phi, g uniform in [-1/sqrt(C), 1/sqrt(C)]; w_z zero, so a fresh
  /// module is the identity map.
  static AttentionParams init(Index channels, Index reduction_factor, std::uint64_t seed) {
    if (channels < 1 || reduction_factor < 1 || channels / reduction_factor < 1) {
      throw ShapeError("attention init: C=" + std::to_string(channels) + " with reduction " +
                       std::to_string(reduction_factor) + " leaves no channels");
    }
    const Index reduced = channels / reduction_factor;
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    std::uniform_real_distribution<double> uni(-bound, bound);
    auto draw = [&](Index rows, Index cols) {
      Matrix<Scalar> m(rows, cols);
      for (Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<Scalar>(uni(rng));
      return m;
    };
    AttentionParams p;
    p.theta = draw(channels, reduced);
    p.phi = draw(channels, reduced);
    p.g = draw(channels, reduced);
    p.wz = Matrix<Scalar>::Zero(reduced, channels);
    return p;
  }
};

template <typename Scalar>
struct AttentionGradients {
  Matrix<Scalar> d_theta, d_phi, d_g, d_wz;
  FeatureTensor<Scalar> d_input;
};

/// Multiply-accumulates executed by the tube kernel, itemized by stage.
struct KernelCounter {
  std::uint64_t embedding = 0;   // theta, phi, g projections of the tube rows
  std::uint64_t similarity = 0;  // theta(x_p) . phi(x_q) for every pair
  std::uint64_t weighting = 0;   // similarity-weighted sum of g(x_q)
  std::uint64_t output = 0;      // w_z embedding of y_p

  std::uint64_t total() const { return embedding + similarity + weighting + output; }
};

namespace detail {

template <typename Scalar>
void check_attention_operands(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                              const AttentionParams<Scalar>& p, const char* op) {
  check_tube_matches(x.dims(), tube, op);
  p.validate();
  if (p.channels() != x.channels()) {
    throw ShapeError(std::string(op) + ": params expect C=" + std::to_string(p.channels()) + ", tensor has C=" +
                     std::to_string(x.channels()));
  }
}

// Projections of the gathered tube rows, shared by forward and backward.
template <typename Scalar>
struct TubeProjections {
  Matrix<Scalar> q, a, b, g;  // q: K x C; a = q theta, b = q phi, g = q g (K x C')
};

template <typename Scalar>
TubeProjections<Scalar> project(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                const AttentionParams<Scalar>& p, KernelCounter* counter) {
  TubeProjections<Scalar> t;
  t.q = gather_positions(x, tube);
  std::uint64_t* macs = counter ? &counter->embedding : nullptr;
  t.a = matmul(t.q, p.theta, macs);
  t.b = matmul(t.q, p.phi, macs);
  t.g = matmul(t.q, p.g, macs);
  return t;
}

// y = (1/K) (A B^T) G, built one block of query rows at a time.
template <typename Scalar>
Matrix<Scalar> aggregate(const TubeProjections<Scalar>& t, KernelCounter* counter) {
  const Index k = t.q.rows();
  const Matrix<Scalar> bt = t.b.transpose();
  Matrix<Scalar> y(k, t.a.cols());
  for (Index r0 = 0; r0 < k; r0 += kQueryBlock) {
    const Index rb = std::min(kQueryBlock, k - r0);
    const Matrix<Scalar> sim = matmul(t.a.middleRows(r0, rb), bt, counter ? &counter->similarity : nullptr);
    y.middleRows(r0, rb) = matmul(sim, t.g, counter ? &counter->weighting : nullptr);
  }
  y /= static_cast<Scalar>(k);
  return y;
}

}  // namespace detail

/// Tube self-attention. Every tube position p becomes
///   x'_p = w_z^T y_p + x_p,   y_p = (1/K) sum_q (theta^T x_p . phi^T x_q) g^T x_q
/// where q ranges over the whole tube (all clips and times) and K is the tube
/// size. Positions outside the tube are copied unchanged; an empty tube is the
/// identity.
template <typename Scalar>
FeatureTensor<Scalar> tsa_forward(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                  const AttentionParams<Scalar>& p, KernelCounter* counter = nullptr) {
  detail::check_attention_operands(x, tube, p, "tsa_forward");
  if (tube.total() == 0) return x;
  const auto proj = detail::project(x, tube, p, counter);
  const Matrix<Scalar> y = detail::aggregate(proj, counter);
  const Matrix<Scalar> z = matmul(y, p.wz, counter ? &counter->output : nullptr);
  return scatter_add(x, tube, z);
}

/// Dense Non-local block: every position of every clip attends to every other.
template <typename Scalar>
FeatureTensor<Scalar> nonlocal_forward(const FeatureTensor<Scalar>& x, const AttentionParams<Scalar>& p,
                                       KernelCounter* counter = nullptr) {
  const Dims5& d = x.dims();
  return tsa_forward(x, TubeIndex::full({d.n, d.t, d.h, d.w}), p, counter);
}

/// Same contract as tsa_forward, computed the dense way: the full
/// positions x positions similarity matrix with non-tube rows and columns
/// masked to zero. Kept as the correctness reference for the tube kernel.
template <typename Scalar>
FeatureTensor<Scalar> masked_nonlocal_reference(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                                const AttentionParams<Scalar>& p) {
  detail::check_attention_operands(x, tube, p, "masked_nonlocal_reference");
  const Index k = tube.total();
  if (k == 0) return x;
  const Index positions = x.positions();
  Vector<Scalar> m(positions);
  for (Index r = 0; r < positions; ++r) m(r) = tube.masks()[static_cast<std::size_t>(r)] ? Scalar(1) : Scalar(0);

  const Matrix<Scalar> a = matmul(x.data(), p.theta);
  const Matrix<Scalar> b = matmul(x.data(), p.phi);
  const Matrix<Scalar> g = matmul(x.data(), p.g);
  Matrix<Scalar> sim = matmul(a, b.transpose());
  for (Index r = 0; r < positions; ++r) {
    for (Index c = 0; c < positions; ++c) sim(r, c) *= m(r) * m(c);
  }
  Matrix<Scalar> y = matmul(sim, g);
  y /= static_cast<Scalar>(k);
  const Matrix<Scalar> z = matmul(y, p.wz);

  FeatureTensor<Scalar> out = x;
  for (Index r = 0; r < positions; ++r) {
    if (m(r) != Scalar(0)) out.data().row(r) += z.row(r);
  }
  return out;
}

/// Exact gradients of tsa_forward with respect to the input and all four maps.
template <typename Scalar>
AttentionGradients<Scalar> tsa_backward(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                        const AttentionParams<Scalar>& p, const FeatureTensor<Scalar>& upstream) {
  detail::check_attention_operands(x, tube, p, "tsa_backward");
  if (upstream.dims() != x.dims()) {
    throw ShapeError("tsa_backward: upstream dims " + to_string(upstream.dims()) + " differ from input " +
                     to_string(x.dims()));
  }
  AttentionGradients<Scalar> grads;
  grads.d_theta = Matrix<Scalar>::Zero(p.theta.rows(), p.theta.cols());
  grads.d_phi = Matrix<Scalar>::Zero(p.phi.rows(), p.phi.cols());
  grads.d_g = Matrix<Scalar>::Zero(p.g.rows(), p.g.cols());
  grads.d_wz = Matrix<Scalar>::Zero(p.wz.rows(), p.wz.cols());
  grads.d_input = upstream;
  const Index k = tube.total();
  if (k == 0) return grads;

  const auto proj = detail::project(x, tube, p, nullptr);
  const Matrix<Scalar> y = detail::aggregate(proj, nullptr);
  const Matrix<Scalar> dz = gather_positions(upstream, tube);
  grads.d_wz = matmul(y.transpose(), dz);

  // dL/d(A B^T G) = dY / K
  Matrix<Scalar> dy = matmul(dz, p.wz.transpose());
  dy /= static_cast<Scalar>(k);

  const Matrix<Scalar> bt = proj.b.transpose();
  const Matrix<Scalar> gt = proj.g.transpose();
  Matrix<Scalar> da(k, proj.a.cols());
  Matrix<Scalar> db = Matrix<Scalar>::Zero(k, proj.b.cols());
  Matrix<Scalar> dg = Matrix<Scalar>::Zero(k, proj.g.cols());
  for (Index r0 = 0; r0 < k; r0 += kQueryBlock) {
    const Index rb = std::min(kQueryBlock, k - r0);
    const Matrix<Scalar> sim = matmul(proj.a.middleRows(r0, rb), bt);
    const Matrix<Scalar> dsim = matmul(dy.middleRows(r0, rb), gt);
    dg += matmul(sim.transpose(), dy.middleRows(r0, rb));
    da.middleRows(r0, rb) = matmul(dsim, proj.b);
    db += matmul(dsim.transpose(), proj.a.middleRows(r0, rb));
  }

  const Matrix<Scalar> qt = proj.q.transpose();
  grads.d_theta = matmul(qt, da);
  grads.d_phi = matmul(qt, db);
  grads.d_g = matmul(qt, dg);

  Matrix<Scalar> dq = dz;
  dq += matmul(da, p.theta.transpose());
  dq += matmul(db, p.phi.transpose());
  dq += matmul(dg, p.g.transpose());
  const auto& rows = tube.flat_rows();
  for (Index r = 0; r < k; ++r) grads.d_input.data().row(rows[r]) = dq.row(r);
  return grads;
}

inline void check_stack_depth(std::size_t depth) {
  if (depth < 1 || depth > static_cast<std::size_t>(kMaxStackDepth)) {
    throw UsageError("attention stack depth must be in [1, " + std::to_string(kMaxStackDepth) + "], got " +
                     std::to_string(depth));
  }
}

/// Applies the modules in order, all sharing one tube.
template <typename Scalar>
FeatureTensor<Scalar> stack_forward(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                    std::span<const AttentionParams<Scalar>> params) {
  check_stack_depth(params.size());
  FeatureTensor<Scalar> h = x;
  for (const auto& p : params) h = tsa_forward(h, tube, p);
  return h;
}

template <typename Scalar>
struct StackGradients {
  std::vector<AttentionGradients<Scalar>> modules;  // one per module, same order as params
  FeatureTensor<Scalar> d_input;
};

template <typename Scalar>
StackGradients<Scalar> stack_backward(const FeatureTensor<Scalar>& x, const TubeIndex& tube,
                                      std::span<const AttentionParams<Scalar>> params,
                                      const FeatureTensor<Scalar>& upstream) {
  check_stack_depth(params.size());
  std::vector<FeatureTensor<Scalar>> inputs{x};
  for (std::size_t k = 0; k + 1 < params.size(); ++k) inputs.push_back(tsa_forward(inputs.back(), tube, params[k]));
  StackGradients<Scalar> out;
  out.modules.resize(params.size());
  FeatureTensor<Scalar> grad = upstream;
  for (std::size_t k = params.size(); k-- > 0;) {
    out.modules[k] = tsa_backward(inputs[k], tube, params[k], grad);
    grad = out.modules[k].d_input;
  }
  out.d_input = std::move(grad);
  return out;
}

}  // namespace tsa
