#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "ucs/errors.hpp"
#include "ucs/gradcheck.hpp"
#include "ucs/ops.hpp"
#include "ucs/prox.hpp"

using namespace ucs;

namespace {

std::vector<double> values(const Tensor64& t) { return {t.data().begin(), t.data().end()}; }

void randomize(Tensor64 t, std::mt19937_64& rng, double lo, double hi) {
  for (auto& v : t.mutable_data()) v = std::uniform_real_distribution<double>(lo, hi)(rng);
}

oracle::NonLocalWeights weights_of(const DinlmParams<double>& p) {
  oracle::NonLocalWeights w;
  w.c = p.channels;
  w.ce = p.embed;
  w.d = p.patch;
  if (p.has_offsets()) {
    w.offset_w = values(p.offset.weight);
    w.offset_b = values(p.offset.bias);
  }
  w.theta_w = values(p.theta.weight);
  w.theta_b = values(p.theta.bias);
  w.phi_w = values(p.phi_kernel);
  w.g_w = values(p.g_kernel);
  w.proj_w = values(p.project.weight);
  w.proj_b = values(p.project.bias);
  return w;
}

}  // namespace

TEST_CASE("dinlm with zero offsets reduces to nlm") {
  std::mt19937_64 draw(1);
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto params = DinlmParams<float>::create(4, 3, true, rng);
    std::vector<float> f(4 * 8 * 8);
    for (auto& v : f) v = std::uniform_real_distribution<float>(-1, 1)(draw);
    const auto x = Tensor32::from_data({1, 4, 8, 8}, f);
    const auto a = dinlm_forward(x, params).output;
    const auto b = nlm_forward(x, params).output;
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= 1e-6f);
  }
}

TEST_CASE("non-local outputs and affinities match the pairwise oracle on every map up to 6x6") {
  std::mt19937_64 draw(3);
  Rng rng(4);
  double worst = 0;
  for (std::size_t h = 1; h <= 6; ++h) {
    for (std::size_t w = 1; w <= 6; ++w) {
      for (bool deform : {false, true}) {
        auto p = DinlmParams<double>::create(3, 3, deform, rng);
        if (deform) {
          randomize(p.offset.weight, draw, -0.3, 0.3);
          randomize(p.offset.bias, draw, -1.5, 1.5);
        }
        const auto f = oracle::random_vec(3 * h * w, draw);
        const auto x = Tensor64::from_data({1, 3, h, w}, f);
        const NonLocalOptions opts{1, true};
        const auto got = deform ? dinlm_forward(x, p, opts) : nlm_forward(x, p, opts);
        const auto want = oracle::nonlocal(f, h, w, weights_of(p));
        REQUIRE(got.affinity.size() == 1);
        for (std::size_t i = 0; i < want.output.size(); ++i) worst = std::max(worst, std::abs(got.output[i] - want.output[i]));
        for (std::size_t i = 0; i < want.affinity.size(); ++i)
          worst = std::max(worst, std::abs(got.affinity[0].weights[i] - want.affinity[i]));
      }
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("affinity rows are distributions") {
  Rng rng(5);
  const auto p = DinlmParams<double>::create(4, 3, false, rng);
  std::mt19937_64 draw(6);
  const auto out = nlm_forward(Tensor64::from_data({2, 4, 5, 5}, oracle::random_vec(200, draw)), p, {1, true});
  REQUIRE(out.affinity.size() == 2);
  for (const auto& a : out.affinity) {
    CHECK(a.rows == 25);
    CHECK(a.cols == 25);
    for (std::size_t i = 0; i < a.rows; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < a.cols; ++j) {
        CHECK(a.at(i, j) >= 0.0);
        s += a.at(i, j);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("subsampled keys shrink the affinity width") {
  Rng rng(7);
  const auto p = DinlmParams<float>::create(2, 3, true, rng);
  const auto out = dinlm_forward(Tensor32::full({1, 2, 8, 10}, 0.1f), p, {2, true});
  CHECK(out.affinity[0].rows == 80);
  CHECK(out.affinity[0].cols == 20);
  CHECK(out.offsets.shape() == Shape{1, 18, 8, 10});
}

TEST_CASE("prox_forward shapes and residual structure") {
  Rng rng(8);
  for (auto kind : {NonLocalKind::dinlm, NonLocalKind::nlm, NonLocalKind::none}) {
    const auto p = ProxParams<float>::create(4, 3, kind, rng);
    CHECK(p.nonlocal.has_value() == (kind != NonLocalKind::none));
    const auto out = prox_forward(p, Tensor32::full({2, 1, 6, 6}, 0.5f), Tensor32::zeros({2, 4, 6, 6}), kind);
    CHECK(out.x.shape() == Shape{2, 1, 6, 6});
    CHECK(out.h.shape() == Shape{2, 4, 6, 6});
    CHECK(out.x.all_finite());
  }
}

TEST_CASE("dense residual block output is x plus the last layer") {
  Rng rng(9);
  auto block = DenseResidualBlock<double>::create(2, 3, rng);
  CHECK(block.convs.size() == 3);
  CHECK(block.projections.size() == 2);
  CHECK(block.projections[1].in_channels() == 6);
  // Kernels zero, biases zero: every layer outputs relu(0) = 0.
  ParamList<double> named;
  block.collect(named, "b");
  for (auto& e : named)
    for (auto& v : e.tensor.mutable_data()) v = 0.0;
  const auto x = Tensor64::full({1, 2, 3, 3}, -0.25);
  const auto y = block(x);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == -0.25);
}

TEST_CASE("prox_forward passes the finite-difference check for every parameter group") {
  for (auto kind : {NonLocalKind::dinlm, NonLocalKind::nlm, NonLocalKind::none}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 draw(seed + 50);
      Rng rng(seed);
      auto p = std::make_shared<ProxParams<double>>(ProxParams<double>::create(3, 3, kind, rng));
      ParamList<double> named;
      p->collect(named, "prox");
      std::vector<NamedTensor64> params;
      for (auto& e : named) {
        if (e.name.ends_with(".bias")) randomize(e.tensor, draw, -0.2, 0.2);
        params.emplace_back(e.name, e.tensor);
      }
      if (p->nonlocal && p->nonlocal->has_offsets()) {
        // Offsets near half a pixel keep bilinear reads off the integer grid.
        randomize(p->nonlocal->offset.weight, draw, -1e-3, 1e-3);
        randomize(p->nonlocal->offset.bias, draw, 0.3, 0.7);
      }
      auto r = Tensor64::from_data({1, 1, 6, 6}, oracle::random_vec(36, draw, 0.0, 1.0), true);
      auto h = Tensor64::from_data({1, 3, 6, 6}, oracle::random_vec(108, draw), true);
      const auto w = Tensor64::from_data({1, 1, 6, 6}, oracle::random_vec(36, draw));
      params.emplace_back("r", r);
      params.emplace_back("h_prev", h);
      const auto res = finite_diff_check([=] { return sum(mul(prox_forward(*p, r, h, kind).x, w)); }, params, 100,
                                         seed);
      INFO(to_string(kind) << " seed " << seed << ": " << res.worst);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("misconfigured non-local modules are rejected") {
  Rng rng(1);
  CHECK_THROWS_AS(DinlmParams<float>::create(4, 2, true, rng), ConfigError);
  const auto plain = DinlmParams<float>::create(4, 3, false, rng);
  CHECK_THROWS_AS(dinlm_forward(Tensor32::zeros({1, 4, 5, 5}), plain), ConfigError);
  CHECK_THROWS_AS(nlm_forward(Tensor32::zeros({1, 3, 5, 5}), plain), ShapeError);
  const auto none = ProxParams<float>::create(4, 3, NonLocalKind::none, rng);
  CHECK_THROWS_AS(prox_forward(none, Tensor32::zeros({1, 1, 5, 5}), Tensor32::zeros({1, 4, 5, 5}), NonLocalKind::nlm),
                  ConfigError);
  CHECK_THROWS_AS(parse_nonlocal_kind("global"), ConfigError);
}

TEST_CASE("a single position attends only to itself") {
  Rng rng(12);
  const auto p = DinlmParams<double>::create(3, 3, false, rng);
  const auto x = Tensor64::from_data({1, 3, 1, 1}, {0.4, -1.0, 2.0});
  const auto out = nlm_forward(x, p, {1, true});
  REQUIRE(out.affinity[0].weights.size() == 1);
  CHECK(out.affinity[0].weights[0] == 1.0);
}

TEST_CASE("a constant feature map gives uniform affinity rows") {
  Rng rng(13);
  const auto p = DinlmParams<double>::create(2, 3, false, rng);
  const auto out = nlm_forward(Tensor64::full({1, 2, 5, 5}, 0.7), p, {1, true});
  const auto& a = out.affinity[0];
  // Zero padding changes the border embeddings; keys whose 3x3 window lies
  // inside the map all embed identically.
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t ky = 1; ky < 4; ++ky)
      for (std::size_t kx = 1; kx < 4; ++kx) CHECK(a.at(i, ky * 5 + kx) == doctest::Approx(a.at(i, 6)).epsilon(1e-12));
}

TEST_CASE("a zero head makes the proximal map the identity") {
  Rng rng(14);
  for (auto kind : {NonLocalKind::dinlm, NonLocalKind::nlm, NonLocalKind::none}) {
    auto p = ProxParams<double>::create(4, 3, kind, rng);
    for (auto& v : p.head.weight.mutable_data()) v = 0.0;
    if (p.head.bias.defined())
      for (auto& v : p.head.bias.mutable_data()) v = 0.0;
    std::mt19937_64 draw(15);
    const auto r = Tensor64::from_data({1, 1, 6, 6}, oracle::random_vec(36, draw));
    const auto out = prox_forward(p, r, Tensor64::zeros({1, 4, 6, 6}), kind);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(out.x[i] == r[i]);
  }
}
