#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "tsa/attention.hpp"
#include "tsa/checkpoint.hpp"

using namespace tsa;

namespace {

double weighted_sum(const FeatureTensorXd& out, const FeatureTensorXd& w) {
  return out.data().cwiseProduct(w.data()).sum();
}

}  // namespace

TEST_CASE("zero output map is the identity") {
  Rng rng(derive_seed(1, "attn"));
  const Dims5 d{2, 3, 4, 4, 6};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const auto p = AttentionParams<double>::init(6, 2, 7);
  CHECK(p.wz.isZero(0.0));
  const TubeIndex tube = oracle::random_tube({2, 3, 4, 4}, 0.4, rng);
  CHECK(tsa_forward(x, tube, p).data() == x.data());
}

TEST_CASE("empty tube is the identity") {
  Rng rng(derive_seed(2, "attn"));
  const Dims5 d{1, 2, 3, 3, 4};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const auto p = oracle::random_params(4, 2, rng);
  KernelCounter counter;
  CHECK(tsa_forward(x, TubeIndex::empty({1, 2, 3, 3}), p, &counter).data() == x.data());
  CHECK(counter.total() == 0);
}

TEST_CASE("single position closed form") {
  const Dims5 d{1, 1, 1, 1, 2};
  MatrixXd data(1, 2);
  data << 1, 2;
  const FeatureTensorXd x(d, data);
  AttentionParams<double> p;
  p.theta = MatrixXd(2, 1);
  p.theta << 1, 0;
  p.phi = MatrixXd(2, 1);
  p.phi << 0, 1;
  p.g = MatrixXd(2, 1);
  p.g << 1, 1;
  p.wz = MatrixXd(1, 2);
  p.wz << 0.5, -1;
  // y = (1)(2)(3) / 1 = 6; out = x + 6 * wz
  const FeatureTensorXd out = tsa_forward(x, TubeIndex::full({1, 1, 1, 1}), p);
  CHECK(out.data()(0, 0) == doctest::Approx(4.0));
  CHECK(out.data()(0, 1) == doctest::Approx(-4.0));
}

TEST_CASE("tube kernel matches the masked dense reference and pair loops") {
  Rng rng(derive_seed(3, "attn"));
  for (int trial = 0; trial < 20; ++trial) {
    const Dims5 d{2, 2, 3 + trial % 3, 4, 6};
    const FeatureTensorXd x = oracle::random_tensor(d, rng);
    const auto p = oracle::random_params(6, 3, rng);
    const TubeIndex tube = oracle::random_tube({d.n, d.t, d.h, d.w}, 0.1 + 0.04 * trial, rng);
    const FeatureTensorXd out = tsa_forward(x, tube, p);
    CHECK(oracle::rel_error(out.data(), masked_nonlocal_reference(x, tube, p).data()) < 1e-9);
    CHECK(oracle::rel_error(out.data(), oracle::naive_attention(x, oracle::tube_mask(tube), p).data()) < 1e-9);
  }
}

TEST_CASE("tube kernel spans several query blocks") {
  Rng rng(derive_seed(4, "attn"));
  const Dims5 d{2, 4, 7, 7, 4};  // 392 positions, more than one block of queries
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const auto p = oracle::random_params(4, 2, rng);
  const TubeIndex tube = oracle::random_tube({2, 4, 7, 7}, 0.6, rng);
  REQUIRE(tube.total() > kQueryBlock);
  CHECK(oracle::rel_error(tsa_forward(x, tube, p).data(), masked_nonlocal_reference(x, tube, p).data()) < 1e-9);
}

TEST_CASE("full tube equals the Non-local block") {
  Rng rng(derive_seed(5, "attn"));
  const Dims5 d{2, 2, 3, 3, 4};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const auto p = oracle::random_params(4, 2, rng);
  CHECK(tsa_forward(x, TubeIndex::full({2, 2, 3, 3}), p).data() == nonlocal_forward(x, p).data());
  CHECK(oracle::rel_error(nonlocal_forward(x, p).data(),
                          oracle::naive_attention(x, std::vector<bool>(36, true), p).data()) < 1e-9);
}

TEST_CASE("positions outside the tube are copied bit for bit") {
  Rng rng(derive_seed(6, "attn"));
  const Dims5 d{2, 3, 4, 4, 5};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const auto p = oracle::random_params(5, 2, rng);
  const TubeIndex tube = oracle::random_tube({2, 3, 4, 4}, 0.5, rng);
  const FeatureTensorXd out = tsa_forward(x, tube, p);
  for (Index r = 0; r < x.positions(); ++r)
    if (!tube.masks()[static_cast<std::size_t>(r)]) CHECK(out.data().row(r) == x.data().row(r));
}

TEST_CASE("permuting clips permutes the output") {
  Rng rng(derive_seed(7, "attn"));
  const Dims5 d{3, 2, 3, 3, 4};
  const TubeGrid g{3, 2, 3, 3};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const auto p = oracle::random_params(4, 2, rng);
  const TubeIndex tube = oracle::random_tube(g, 0.5, rng);
  const Index perm[3] = {2, 0, 1};
  const Index slab = g.t * g.h * g.w;
  FeatureTensorXd xp = x;
  std::vector<std::uint8_t> mp(tube.masks().size());
  for (Index n = 0; n < 3; ++n) {
    xp.data().middleRows(n * slab, slab) = x.data().middleRows(perm[n] * slab, slab);
    for (Index k = 0; k < slab; ++k)
      mp[static_cast<std::size_t>(n * slab + k)] = tube.masks()[static_cast<std::size_t>(perm[n] * slab + k)];
  }
  const FeatureTensorXd out = tsa_forward(x, tube, p);
  const FeatureTensorXd outp = tsa_forward(xp, TubeIndex(g, mp), p);
  for (Index n = 0; n < 3; ++n)
    CHECK(oracle::rel_error(outp.data().middleRows(n * slab, slab), out.data().middleRows(perm[n] * slab, slab)) <
          1e-12);
}

TEST_CASE("backward matches finite differences") {
  Rng rng(derive_seed(8, "attn"));
  for (int trial = 0; trial < 20; ++trial) {
    const Dims5 d{2, 2, 2 + trial % 2, 3, 4};
    FeatureTensorXd x = oracle::random_tensor(d, rng, 0.7);
    auto p = oracle::random_params(4, 2, rng);
    const TubeIndex tube = oracle::random_tube({d.n, d.t, d.h, d.w}, 0.6, rng);
    if (tube.total() == 0) continue;
    const FeatureTensorXd up = oracle::random_tensor(d, rng);
    const auto grads = tsa_backward(x, tube, p, up);
    auto loss = [&] { return weighted_sum(tsa_forward(x, tube, p), up); };
    CHECK(oracle::grad_error(grads.d_theta, oracle::numeric_gradient(p.theta, loss)) < 1e-4);
    CHECK(oracle::grad_error(grads.d_phi, oracle::numeric_gradient(p.phi, loss)) < 1e-4);
    CHECK(oracle::grad_error(grads.d_g, oracle::numeric_gradient(p.g, loss)) < 1e-4);
    CHECK(oracle::grad_error(grads.d_wz, oracle::numeric_gradient(p.wz, loss)) < 1e-4);
    CHECK(oracle::grad_error(grads.d_input.data(), oracle::numeric_gradient(x.data(), loss)) < 1e-4);
  }
}

TEST_CASE("zero upstream gives zero gradients") {
  Rng rng(derive_seed(9, "attn"));
  const Dims5 d{1, 2, 3, 3, 4};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const auto p = oracle::random_params(4, 2, rng);
  const TubeIndex tube = oracle::random_tube({1, 2, 3, 3}, 0.5, rng);
  const FeatureTensorXd zero(d, MatrixXd::Zero(d.positions(), d.c));
  const auto grads = tsa_backward(x, tube, p, zero);
  CHECK(grads.d_theta.isZero(0.0));
  CHECK(grads.d_phi.isZero(0.0));
  CHECK(grads.d_g.isZero(0.0));
  CHECK(grads.d_wz.isZero(0.0));
  CHECK(grads.d_input.data().isZero(0.0));
}

TEST_CASE("stacked modules") {
  Rng rng(derive_seed(10, "attn"));
  const Dims5 d{2, 2, 3, 3, 4};
  const FeatureTensorXd x = oracle::random_tensor(d, rng, 0.7);
  const TubeIndex tube = oracle::random_tube({2, 2, 3, 3}, 0.5, rng);
  std::vector<AttentionParams<double>> ps{oracle::random_params(4, 2, rng), oracle::random_params(4, 2, rng),
                                          oracle::random_params(4, 2, rng)};

  CHECK(stack_forward(x, tube, std::span<const AttentionParams<double>>(ps).first(1)).data() == tsa_forward(x, tube, ps[0]).data());
  CHECK(stack_forward(x, tube, std::span<const AttentionParams<double>>(ps).first(2)).data() ==
        tsa_forward(tsa_forward(x, tube, ps[0]), tube, ps[1]).data());
  CHECK_THROWS_AS(stack_forward(x, tube, std::span<const AttentionParams<double>>{}), UsageError);
  std::vector<AttentionParams<double>> four(4, ps[0]);
  CHECK_THROWS_AS(stack_forward(x, tube, std::span<const AttentionParams<double>>(four)), UsageError);

  const FeatureTensorXd up = oracle::random_tensor(d, rng);
  const auto grads = stack_backward(x, tube, std::span<const AttentionParams<double>>(ps), up);
  auto loss = [&] { return weighted_sum(stack_forward(x, tube, std::span<const AttentionParams<double>>(ps)), up); };
  for (std::size_t m = 0; m < ps.size(); ++m) {
    CHECK(oracle::grad_error(grads.modules[m].d_theta, oracle::numeric_gradient(ps[m].theta, loss)) < 1e-4);
    CHECK(oracle::grad_error(grads.modules[m].d_wz, oracle::numeric_gradient(ps[m].wz, loss)) < 1e-4);
  }
  FeatureTensorXd xm = x;
  auto loss_x = [&] { return weighted_sum(stack_forward(xm, tube, std::span<const AttentionParams<double>>(ps)), up); };
  CHECK(oracle::grad_error(grads.d_input.data(), oracle::numeric_gradient(xm.data(), loss_x)) < 1e-4);
}

TEST_CASE("operand checks") {
  Rng rng(derive_seed(11, "attn"));
  const FeatureTensorXd x = oracle::random_tensor({1, 2, 3, 3, 4}, rng);
  const auto p = oracle::random_params(4, 2, rng);
  CHECK_THROWS_AS(tsa_forward(x, TubeIndex::full({1, 2, 3, 4}), p), ShapeError);
  CHECK_THROWS_AS(tsa_forward(x, TubeIndex::full({1, 2, 3, 3}), oracle::random_params(5, 2, rng)), ShapeError);
  CHECK_THROWS_AS(AttentionParams<double>::init(1, 2, 0), ShapeError);
  const auto init = AttentionParams<double>::init(8, 2, 3);
  CHECK(init.reduced() == 4);
  CHECK(init.theta.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
}

TEST_CASE("attention weights round trip") {
  Rng rng(derive_seed(12, "attn"));
  const std::vector<AttentionParams<double>> ps{oracle::random_params(6, 3, rng), oracle::random_params(6, 3, rng)};
  const auto dir = std::filesystem::temp_directory_path() / "tsa_attention_roundtrip";
  std::filesystem::remove_all(dir);
  save_attention(dir, ps, 42, 2);
  const auto back = load_attention(dir);
  REQUIRE(back.size() == 2);
  for (std::size_t m = 0; m < 2; ++m) {
    CHECK(back[m].theta == ps[m].theta);
    CHECK(back[m].phi == ps[m].phi);
    CHECK(back[m].g == ps[m].g);
    CHECK(back[m].wz == ps[m].wz);
  }
  std::filesystem::remove_all(dir);
}
