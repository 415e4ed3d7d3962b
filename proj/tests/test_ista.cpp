#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "ucs/errors.hpp"
#include "ucs/ista.hpp"
#include "ucs/synthetic.hpp"

using namespace ucs;

TEST_CASE("soft threshold is the argmin of the scalar lasso objective") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const double v = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double t = std::uniform_real_distribution<double>(0, 1)(rng);
    // Grid search of 0.5 (z - v)^2 + t |z| at spacing 1e-4.
    double best = 0, best_f = 1e300;
    for (int i = -30000; i <= 30000; ++i) {
      const double z = i * 1e-4;
      const double f = 0.5 * (z - v) * (z - v) + t * std::abs(z);
      if (f < best_f) {
        best_f = f;
        best = z;
      }
    }
    CHECK(std::abs(soft_threshold(v, t) - best) <= 1e-4);
  }
  CHECK(soft_threshold(-0.3, 0.5) == 0.0);
  CHECK(soft_threshold(0.8, 0.5) == doctest::Approx(0.3));
  CHECK_THROWS_AS(soft_threshold(1.0, -0.1), ConfigError);
}

TEST_CASE("DCT matrix is orthonormal and blockwise transforms invert") {
  const auto c = dct_matrix(8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 8; ++k) s += c[i * 8 + k] * c[j * 8 + k];
      CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0).scale(1).epsilon(1e-13));
    }
  std::mt19937_64 rng(2);
  const auto x = Tensor64::from_data({2, 1, 16, 8}, oracle::random_vec(256, rng));
  const auto back = idct_blocks(dct_blocks(x, 8), 8);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-13));
  // A constant block has only a DC coefficient: B * value.
  const auto dc = dct_blocks(Tensor64::full({1, 1, 8, 8}, 0.5), 8);
  CHECK(dc[0] == doctest::Approx(4.0));
  CHECK(std::abs(dc[1]) < 1e-13);
  CHECK_THROWS_AS(dct_blocks(Tensor64::zeros({1, 1, 9, 8}), 8), ShapeError);
}

TEST_CASE("unregularized ISTA below 1 / sigma^2 never increases the fidelity") {
  std::mt19937_64 rng(3);
  for (int inst = 0; inst < 20; ++inst) {
    const double rate = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
    const auto kind = inst % 2 ? MatrixKind::learned_init : MatrixKind::orthogonalized_random;
    auto op = make_operator<double>(11, rate, kind, inst);
    // Rescaled rows push sigma_max away from 1.
    const double scale = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    for (auto& v : op.phi.mutable_data()) v *= scale;
    const auto truth = Tensor64::from_data({1, 1, 22, 33}, oracle::random_vec(22 * 33, rng, 0.0, 1.0));
    const auto m = sample(op, truth);
    const double rho = std::uniform_real_distribution<double>(0.1, 1.0)(rng) / spectral_norm_squared(op);
    const auto res = ista_reconstruct(op, m, IstaConfig{rho, 0.0, 30});
    REQUIRE(res.trace.size() == 31);
    // Once the residual reaches round-off level it may jitter by ~1e-30.
    const double slack = 1e-12 * res.trace[0];
    for (std::size_t k = 1; k < res.trace.size(); ++k) CHECK(res.trace[k] <= res.trace[k - 1] + slack);
  }
}

TEST_CASE("full-rate orthonormal sampling is recovered in one iteration") {
  std::mt19937_64 rng(4);
  const auto op = make_operator<double>(8, 1.0, MatrixKind::orthogonalized_random, 5);
  const auto truth = Tensor64::from_data({1, 1, 16, 24}, oracle::random_vec(384, rng, 0.0, 1.0));
  const auto res = ista_reconstruct(op, sample(op, truth), IstaConfig{1.0, 0.0, 1});
  for (std::size_t i = 0; i < truth.numel(); ++i) CHECK(std::abs(res.image[i] - truth[i]) < 1e-6);
}

TEST_CASE("spectral norm of orthonormal rows is one") {
  const auto op = make_operator<double>(10, 0.3, MatrixKind::orthogonalized_random, 2);
  CHECK(spectral_norm_squared(op) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(default_step(op) == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("tune_lambda picks a grid value that is at least as good as the rest") {
  const auto img = synthetic_image(22, 22, 3);
  const auto x = to_tensor<double>(img);
  const auto op = make_operator<double>(11, 0.25, MatrixKind::orthogonalized_random, 1);
  const std::vector<double> grid{0.0, 1e-3, 1e-2, 1e-1};
  const double lambda = tune_lambda(op, x, 1.0, 20, grid);
  CHECK(std::find(grid.begin(), grid.end(), lambda) != grid.end());
  const auto m = sample(op, pad_to_blocks(x, 11));
  auto err = [&](double l) {
    const auto r = crop(ista_reconstruct(op, m, IstaConfig{1.0, l, 20}).image, 22, 22);
    double s = 0;
    for (std::size_t i = 0; i < r.numel(); ++i) s += (r[i] - x[i]) * (r[i] - x[i]);
    return s;
  };
  for (double l : grid) CHECK(err(lambda) <= err(l));
  CHECK_THROWS_AS(tune_lambda(op, x, 1.0, 5, {}), ConfigError);
}

TEST_CASE("ISTA configuration is validated") {
  CHECK_THROWS_AS((IstaConfig{0.0, 0.0, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((IstaConfig{1.0, -1.0, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((IstaConfig{1.0, 0.0, 0}.validate()), ConfigError);
}
