#include <doctest.h>

#include <cmath>

#include "ucs/gradcheck_suite.hpp"
#include "ucs/ops.hpp"

using namespace ucs;

TEST_CASE("leaf gradients accumulate until zero_grad") {
  auto x = Tensor64::from_data({3}, {1.0, -2.0, 0.5}, true);
  for (int pass = 0; pass < 2; ++pass) backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-8.0));
  x.zero_grad();
  REQUIRE(x.has_grad());  // the buffer is kept, only zeroed
  for (const double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("shared subexpressions receive the sum of both paths") {
  auto x = Tensor64::from_data({2}, {3.0, -1.0}, true);
  const auto y = mul(x, x);
  backward(sum(add(y, mul(y, x))));  // x^2 + x^3
  CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 3 * 9.0));
  CHECK(x.grad()[1] == doctest::Approx(-2.0 + 3.0));
}

TEST_CASE("NoGradGuard records no graph") {
  auto x = Tensor64::from_data({2}, {1.0, 2.0}, true);
  Tensor64 y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = sum(mul(x, x));
  }
  CHECK(grad_enabled());
  CHECK(y.is_leaf());
  CHECK_THROWS_AS(backward(y), std::logic_error);
}

TEST_CASE("shape violations are rejected") {
  const auto a = Tensor32::zeros({2, 3});
  const auto b = Tensor32::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(reshape(a, {4}), ShapeError);
  CHECK_THROWS_AS(backward(a), ShapeError);
  CHECK_THROWS_AS(a.item(), ShapeError);
}

TEST_CASE("detach cuts the graph and keeps values") {
  auto x = Tensor64::from_data({2}, {1.5, 2.5}, true);
  const auto d = mul(x, x).detach();
  CHECK(d.is_leaf());
  CHECK_FALSE(d.requires_grad());
  CHECK(d[1] == 6.25);
}

TEST_CASE("softmax rows are normalized and stable for large logits") {
  const auto a = Tensor64::from_data({2, 3}, {1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0});
  const auto s = softmax_rows(a);
  CHECK(s.all_finite());
  for (std::size_t r = 0; r < 2; ++r) CHECK(s[3 * r] + s[3 * r + 1] + s[3 * r + 2] == doctest::Approx(1.0));
  CHECK(s[1] > s[0]);
}

TEST_CASE("batchnorm train mode normalizes and updates running statistics") {
  std::vector<double> v(2 * 2 * 3 * 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i * i % 7);
  const auto x = Tensor64::from_data({2, 2, 3, 1}, v);
  auto stats = BatchNormStats<double>::make(2);
  const auto y = batchnorm(x, Tensor64::full({2}, 1.0), Tensor64::zeros({2}), stats, Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, s2 = 0, biased = 0, raw_mean = 0;
    std::vector<double> raw;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t p = 0; p < 3; ++p) {
        m += y[(n * 2 + c) * 3 + p];
        s2 += y[(n * 2 + c) * 3 + p] * y[(n * 2 + c) * 3 + p];
        raw.push_back(v[(n * 2 + c) * 3 + p]);
      }
    for (double r : raw) raw_mean += r / 6.0;
    for (double r : raw) biased += (r - raw_mean) * (r - raw_mean) / 6.0;
    CHECK(m / 6 == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(s2 / 6 == doctest::Approx(biased / (biased + 1e-5)).epsilon(1e-9));
    // Running variance uses the unbiased estimate.
    CHECK(stats.running_mean[c] == doctest::Approx(0.1 * raw_mean));
    CHECK(stats.running_var[c] == doctest::Approx(0.9 + 0.1 * biased * 6.0 / 5.0));
  }
}

TEST_CASE("every differentiable operation passes the finite-difference check") {
  for (const auto& o : run_gradcheck_suite(operation_cases(), 100, 10, 1e-4)) {
    INFO(o.name << ": " << o.worst);
    CHECK(o.passed);
  }
}

TEST_CASE("the single-point finite-difference form agrees with a closed-form gradient") {
  const auto r = finite_diff_check([](const Tensor64& p) { return sum(tanh(mul(p, p))); },
                                   Tensor64::from_data({4}, {0.3, -0.7, 1.1, 0.05}), 4, 3);
  CHECK(r.samples == 4);
  CHECK(r.max_rel_error < 1e-6);
}
