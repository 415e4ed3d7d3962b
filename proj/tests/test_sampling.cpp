#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "ucs/errors.hpp"
#include "ucs/ops.hpp"
#include "ucs/sampling.hpp"

using namespace ucs;

TEST_CASE("measurement count is floor(rate * B^2)") {
  CHECK(measurement_count(33, 0.01) == 10);
  for (double rate : {0.01, 0.10, 0.25, 0.30, 0.40})
    CHECK(measurement_count(33, rate) == static_cast<std::size_t>(std::floor(rate * 1089 + 1e-9)));
  CHECK(measurement_count(33, 0.10) == 108);
  CHECK(measurement_count(33, 0.25) == 272);
  CHECK(measurement_count(33, 0.30) == 326);
  CHECK(measurement_count(33, 0.40) == 435);
  CHECK(measurement_count(10, 0.29) == 29);
  CHECK(measurement_count(33, 1.0) == 1089);
  CHECK_THROWS_AS(measurement_count(33, 0.0), ConfigError);
  CHECK_THROWS_AS(measurement_count(33, 1.5), ConfigError);
  CHECK_THROWS_AS(measurement_count(3, 0.05), ConfigError);
}

TEST_CASE("both matrix kinds have orthonormal rows") {
  for (auto kind : {MatrixKind::learned_init, MatrixKind::orthogonalized_random}) {
    const auto op = make_operator<double>(11, 0.3, kind, 4);
    CHECK(op.phi.shape() == Shape{36, 121});
    CHECK(op.learnable == (kind == MatrixKind::learned_init));
    const auto gram = matmul(op.phi, transpose(op.phi));
    double worst = 0;
    for (std::size_t i = 0; i < 36; ++i)
      for (std::size_t j = 0; j < 36; ++j) worst = std::max(worst, std::abs(gram[i * 36 + j] - (i == j)));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("sampling matches the explicit per-block product") {
  std::mt19937_64 rng(2);
  const auto op = make_operator<double>(5, 0.4, MatrixKind::orthogonalized_random, 1);
  const std::size_t n = 2, h = 10, w = 15;
  const auto img = oracle::random_vec(n * h * w, rng, 0.0, 1.0);
  const auto m = sample(op, Tensor64::from_data({n, 1, h, w}, img));
  CHECK(m.values.shape() == Shape{n, 10, 2, 3});
  const auto phi = std::vector<double>(op.phi.data().begin(), op.phi.data().end());
  const auto want = oracle::block_measure(img, n, h, w, phi, 10, 5);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(m.values[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("transpose_sample is the adjoint of sampling") {
  std::mt19937_64 rng(8);
  const auto op = make_operator<double>(4, 0.5, MatrixKind::orthogonalized_random, 3);
  const auto x = Tensor64::from_data({1, 1, 8, 12}, oracle::random_vec(96, rng));
  const auto y = Tensor64::from_data({1, 8, 2, 3}, oracle::random_vec(48, rng));
  const auto ax = sample(op, x).values;
  const auto aty = transpose_sample(op, y);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < ax.numel(); ++i) lhs += ax[i] * y[i];
  for (std::size_t i = 0; i < aty.numel(); ++i) rhs += x[i] * aty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("full-rate orthonormal sampling is inverted by the initial reconstruction") {
  std::mt19937_64 rng(4);
  const auto op = make_operator<double>(6, 1.0, MatrixKind::orthogonalized_random, 9);
  const auto x = Tensor64::from_data({1, 1, 12, 6}, oracle::random_vec(72, rng));
  const auto x0 = initial_reconstruction(op, sample(op, x));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x0[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("fidelity gradient equals phi^T (phi x - y)") {
  std::mt19937_64 rng(6);
  const auto op = make_operator<double>(4, 0.25, MatrixKind::orthogonalized_random, 2);
  const auto x = Tensor64::from_data({1, 1, 4, 8}, oracle::random_vec(32, rng));
  const auto truth = Tensor64::from_data({1, 1, 4, 8}, oracle::random_vec(32, rng));
  const auto m = sample(op, truth);
  const auto g = apply_fidelity_gradient(op, x, m);
  const auto want = transpose_sample(op, sub(sample(op, x).values, m.values));
  for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("padding reflects without repeating the edge and crop undoes it") {
  const auto img = Tensor64::from_data({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const auto p = pad_to_blocks(img, 4);
  CHECK(p.image.shape() == Shape{1, 1, 4, 4});
  CHECK(p.original_h == 2);
  CHECK(p.original_w == 3);
  // Row 2 mirrors row 0, column 3 mirrors column 1.
  CHECK(p.image[0 * 4 + 3] == 2.0);
  CHECK(p.image[2 * 4 + 0] == 1.0);
  CHECK(p.image[2 * 4 + 3] == 2.0);
  const auto c = crop(p.image, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(c[i] == img[i]);
}

TEST_CASE("measurement files round-trip bit-exactly") {
  std::mt19937_64 rng(1);
  const auto op = make_operator<float>(33, 0.1, MatrixKind::orthogonalized_random, 5);
  std::vector<float> px(40 * 70);
  for (auto& v : px) v = std::uniform_real_distribution<float>(0, 1)(rng);
  const auto m = sample(op, pad_to_blocks(Tensor32::from_data({1, 1, 40, 70}, px), 33));
  CHECK(m.original_h == 40);
  CHECK(m.blocks_x == 3);

  std::stringstream first;
  write_measurements(first, m);
  const auto back = read_measurements<float>(first);
  CHECK(back.original_w == 70);
  CHECK(back.measurements() == 108);
  for (std::size_t i = 0; i < m.values.numel(); ++i) CHECK(back.values[i] == m.values[i]);
  std::stringstream second;
  write_measurements(second, back);
  CHECK(second.str() == first.str());
}

TEST_CASE("malformed measurement files are rejected") {
  const auto op = make_operator<float>(4, 0.5, MatrixKind::orthogonalized_random, 5);
  const auto m = sample(op, Tensor32::full({1, 1, 4, 4}, 0.5f));
  std::stringstream os;
  write_measurements(os, m);
  const std::string bytes = os.str();
  for (std::size_t cut : {std::size_t(0), std::size_t(3), std::size_t(10), bytes.size() - 1}) {
    std::stringstream is(bytes.substr(0, cut));
    CHECK_THROWS_AS(read_measurements<float>(is), FormatError);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_magic(bad);
  CHECK_THROWS_AS(read_measurements<float>(bad_magic), FormatError);
  std::stringstream trailing(bytes + "x");
  CHECK_THROWS_AS(read_measurements<float>(trailing), FormatError);
}

TEST_CASE("operator_from_matrix validates the matrix shape") {
  CHECK_THROWS_AS(operator_from_matrix<double>(4, 0.5, Tensor64::zeros({7, 16}), false), ShapeError);
  const auto op = operator_from_matrix<double>(4, 0.5, Tensor64::zeros({8, 16}), true);
  CHECK(op.phi.requires_grad());
}
