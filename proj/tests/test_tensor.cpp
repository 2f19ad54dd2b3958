#include <doctest.h>

#include <numeric>

#include "oracles.hpp"
#include "tsa/error.hpp"
#include "tsa/tensor.hpp"

using namespace tsa;

TEST_CASE("matmul hand cases") {
  MatrixXd eye = MatrixXd::Identity(2, 2);
  MatrixXd m(2, 2);
  m << 1, 2, 3, 4;
  CHECK(matmul(eye, m) == m);

  MatrixXd row(1, 2), col(2, 1);
  row << 1, 2;
  col << 3, 4;
  const MatrixXd p = matmul(row, col);
  REQUIRE(p.rows() == 1);
  REQUIRE(p.cols() == 1);
  CHECK(p(0, 0) == 11.0);
}

TEST_CASE("matmul matches a triple loop exactly") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd a = oracle::random_matrix(5, 7, rng);
    const MatrixXd b = oracle::random_matrix(7, 3, rng);
    CHECK(matmul(a, b) == oracle::naive_matmul(a, b));
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(MatrixXd(2, 3), MatrixXd(2, 3)), ShapeError);
}

TEST_CASE("matmul counts multiply-accumulates") {
  std::uint64_t macs = 0;
  (void)matmul(MatrixXd::Ones(4, 5), MatrixXd::Ones(5, 6), &macs);
  CHECK(macs == 4 * 5 * 6);
}

TEST_CASE("matmul is associative to rounding") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd a = oracle::random_matrix(4, 6, rng);
    const MatrixXd b = oracle::random_matrix(6, 5, rng);
    const MatrixXd c = oracle::random_matrix(5, 3, rng);
    CHECK(oracle::rel_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-9);
  }
}

TEST_CASE("feature tensor construction checks dims") {
  CHECK_THROWS_AS(FeatureTensorXd(Dims5{1, 0, 2, 2, 3}), ShapeError);
  CHECK_THROWS_AS(FeatureTensorXd(Dims5{1, 1, 2, 2, 3}, MatrixXd(4, 2)), ShapeError);
  FeatureTensorXd x(Dims5{2, 3, 4, 5, 6});
  CHECK(x.data().size() == 2 * 3 * 4 * 5 * 6);
  x(1, 2, 3, 4, 5) = 9.0;
  CHECK(x.data().data()[x.data().size() - 1] == 9.0);
}

TEST_CASE("gather on a full tube is the flattened grid") {
  const Dims5 d{1, 1, 2, 2, 3};
  MatrixXd data(4, 3);
  data << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  const FeatureTensorXd x(d, data);
  const MatrixXd q = gather_positions(x, TubeIndex::full({1, 1, 2, 2}));
  CHECK(q == data);
}

TEST_CASE("gather on an empty tube has no rows") {
  const FeatureTensorXd x(Dims5{1, 2, 2, 2, 3});
  const MatrixXd q = gather_positions(x, TubeIndex::empty({1, 2, 2, 2}));
  CHECK(q.rows() == 0);
  CHECK(q.cols() == 3);
}

TEST_CASE("gather follows canonical n,t,i,j order") {
  Rng rng(3);
  const Dims5 d{2, 3, 4, 5, 3};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const TubeIndex tube = oracle::random_tube({2, 3, 4, 5}, 0.4, rng);
  const MatrixXd q = gather_positions(x, tube);
  Index k = 0;
  for (Index n = 0; n < d.n; ++n)
    for (Index t = 0; t < d.t; ++t)
      for (Index i = 0; i < d.h; ++i)
        for (Index j = 0; j < d.w; ++j) {
          if (!tube.mask(n, t, i, j)) continue;
          for (Index c = 0; c < d.c; ++c) CHECK(q(k, c) == x(n, t, i, j, c));
          ++k;
        }
  CHECK(k == q.rows());
  CHECK(k == tube.total());
}

TEST_CASE("scatter_add against an index loop") {
  Rng rng(5);
  const Dims5 d{2, 2, 3, 3, 4};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const TubeIndex tube = oracle::random_tube({2, 2, 3, 3}, 0.5, rng);
  const MatrixXd rows = oracle::random_matrix(tube.total(), d.c, rng);

  const FeatureTensorXd zero_added = scatter_add(x, tube, MatrixXd::Zero(tube.total(), d.c));
  CHECK(zero_added == x);

  const FeatureTensorXd out = scatter_add(x, tube, rows);
  FeatureTensorXd expect = x;
  Index k = 0;
  for (Index p = 0; p < d.positions(); ++p) {
    if (!tube.masks()[static_cast<std::size_t>(p)]) continue;
    for (Index c = 0; c < d.c; ++c) expect.data()(p, c) += rows(k, c);
    ++k;
  }
  CHECK(out == expect);
  CHECK(gather_positions(out, tube) == MatrixXd(rows + gather_positions(x, tube)));

  CHECK_THROWS_AS(scatter_add(x, tube, MatrixXd::Zero(tube.total() + 1, d.c)), ShapeError);
  CHECK_THROWS_AS(scatter_add(x, TubeIndex::full({2, 2, 3, 4}), rows), ShapeError);
}

TEST_CASE("clip_mean") {
  Rng rng(13);
  SUBCASE("single clip is the identity") {
    const FeatureTensorXd x = oracle::random_tensor({1, 2, 3, 3, 2}, rng);
    CHECK(clip_mean(x) == x);
  }
  SUBCASE("constants 2 and 4 average to 3") {
    FeatureTensorXd x(Dims5{2, 1, 2, 2, 2});
    x.data().topRows(4).setConstant(2.0);
    x.data().bottomRows(4).setConstant(4.0);
    const FeatureTensorXd m = clip_mean(x);
    CHECK(m.dims() == Dims5{1, 1, 2, 2, 2});
    CHECK((m.data().array() == 3.0).all());
  }
  SUBCASE("matches sequential accumulation and ignores clip order") {
    const Dims5 d{10, 2, 3, 3, 4};
    const FeatureTensorXd x = oracle::random_tensor(d, rng);
    const FeatureTensorXd m = clip_mean(x);
    const Index per = d.t * d.h * d.w;
    MatrixXd acc = MatrixXd::Zero(per, d.c);
    for (Index n = 0; n < d.n; ++n) acc += x.data().middleRows(n * per, per);
    acc /= static_cast<double>(d.n);
    CHECK(oracle::rel_error(m.data(), acc) < 1e-12);

    std::vector<Index> perm(static_cast<std::size_t>(d.n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureTensorXd shuffled(d);
    for (Index n = 0; n < d.n; ++n) {
      shuffled.data().middleRows(n * per, per) = x.data().middleRows(perm[static_cast<std::size_t>(n)] * per, per);
    }
    CHECK(clip_mean(shuffled) == m);
  }
}

TEST_CASE("mirror_w and shift_time") {
  Rng rng(17);
  const Dims5 d{2, 3, 2, 4, 2};
  const FeatureTensorXd x = oracle::random_tensor(d, rng);
  const FeatureTensorXd m = mirror_w(x);
  CHECK(mirror_w(m) == x);
  CHECK(m(1, 2, 1, 0, 1) == x(1, 2, 1, 3, 1));

  const FeatureTensorXd s = shift_time(x, 1);
  CHECK(s(0, 0, 1, 2, 0) == x(0, 0, 1, 2, 0));
  CHECK(s(1, 2, 1, 2, 0) == x(1, 1, 1, 2, 0));
  CHECK(shift_time(x, 0) == x);
  const FeatureTensorXd back = shift_time(x, -1);
  CHECK(back(0, 2, 0, 0, 1) == x(0, 2, 0, 0, 1));
  CHECK(back(0, 0, 0, 0, 1) == x(0, 1, 0, 0, 1));
}
