#include "ucs/gradcheck_suite.hpp"

#include <random>

#include "ucs/model.hpp"
#include "ucs/ops.hpp"

namespace ucs {

namespace {

using T64 = Tensor64;

T64 random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return T64::from_data(std::move(shape), std::move(v), grad);
}

// Values bounded away from zero, for ops with a kink there.
T64 off_zero_tensor(Shape shape, std::mt19937_64& rng) {
  auto t = random_tensor(std::move(shape), rng);
  for (auto& v : t.mutable_data()) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

// sum(out * R) with a fixed random R so no coordinate has a trivial gradient.
std::function<T64()> weighted(std::function<T64()> f, Shape out_shape, std::mt19937_64& rng) {
  auto r = random_tensor(std::move(out_shape), rng, -1.0, 1.0, false);
  return [f = std::move(f), r] { return sum(mul(f(), r)); };
}

using Builder = std::function<GradCheckProblem(std::mt19937_64&)>;

GradCheckCase make_case(std::string name, Builder b) {
  return {std::move(name), [b = std::move(b)](std::uint64_t seed) {
            std::mt19937_64 rng(seed * 7919 + 17);
            return b(rng);
          }};
}

}  // namespace

std::vector<GradCheckCase> operation_cases() {
  std::vector<GradCheckCase> cases;

  cases.push_back(make_case("conv2d", [](auto& rng) {
    auto x = random_tensor({2, 3, 6, 5}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    return GradCheckProblem{weighted([=] { return conv2d(x, k, b, {1, 1}, {1, 1}); }, {2, 4, 6, 5}, rng),
                            {{"input", x}, {"kernel", k}, {"bias", b}}};
  }));
  cases.push_back(make_case("conv2d_strided", [](auto& rng) {
    auto x = random_tensor({1, 2, 7, 8}, rng), k = random_tensor({3, 2, 3, 2}, rng);
    return GradCheckProblem{weighted([=] { return conv2d(x, k, T64(), {2, 3}, {1, 0}); }, {1, 3, 4, 3}, rng),
                            {{"input", x}, {"kernel", k}}};
  }));
  cases.push_back(make_case("deformable_conv2d", [](auto& rng) {
    auto x = random_tensor({2, 2, 5, 6}, rng), k = random_tensor({3, 2, 3, 3}, rng);
    auto off = random_tensor({2, 18, 5, 6}, rng, -1.7, 1.7);
    return GradCheckProblem{weighted([=] { return deformable_conv2d(x, k, off); }, {2, 3, 5, 6}, rng),
                            {{"input", x}, {"kernel", k}, {"offsets", off}}};
  }));
  cases.push_back(make_case("bilinear_sample", [](auto& rng) {
    auto map = random_tensor({2, 3, 4, 5}, rng), coords = random_tensor({2, 7, 2}, rng, -0.8, 4.8);
    return GradCheckProblem{weighted([=] { return bilinear_sample(map, coords); }, {2, 3, 7}, rng),
                            {{"map", map}, {"coords", coords}}};
  }));
  cases.push_back(make_case("relu", [](auto& rng) {
    auto x = off_zero_tensor({3, 4}, rng);
    return GradCheckProblem{weighted([=] { return relu(x); }, {3, 4}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("tanh", [](auto& rng) {
    auto x = random_tensor({3, 4}, rng, -2.0, 2.0);
    return GradCheckProblem{weighted([=] { return tanh(x); }, {3, 4}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("add", [](auto& rng) {
    auto a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng), s = random_tensor({1}, rng);
    return GradCheckProblem{weighted([=] { return add(add(a, b), s); }, {2, 5}, rng),
                            {{"a", a}, {"b", b}, {"scalar", s}}};
  }));
  cases.push_back(make_case("sub", [](auto& rng) {
    auto a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng), s = random_tensor({1}, rng);
    return GradCheckProblem{weighted([=] { return sub(s, sub(a, b)); }, {2, 5}, rng),
                            {{"a", a}, {"b", b}, {"scalar", s}}};
  }));
  cases.push_back(make_case("mul", [](auto& rng) {
    auto a = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng), s = random_tensor({1}, rng);
    return GradCheckProblem{weighted([=] { return mul(mul(a, b), s); }, {2, 5}, rng),
                            {{"a", a}, {"b", b}, {"scalar", s}}};
  }));
  cases.push_back(make_case("scale_add_scalar", [](auto& rng) {
    auto x = random_tensor({4, 3}, rng);
    return GradCheckProblem{weighted([=] { return add_scalar(scale(x, -1.7), 0.3); }, {4, 3}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("matmul", [](auto& rng) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    return GradCheckProblem{weighted([=] { return matmul(a, b); }, {3, 5}, rng), {{"a", a}, {"b", b}}};
  }));
  cases.push_back(make_case("transpose", [](auto& rng) {
    auto a = random_tensor({3, 4}, rng);
    return GradCheckProblem{weighted([=] { return transpose(a); }, {4, 3}, rng), {{"a", a}}};
  }));
  cases.push_back(make_case("softmax_rows", [](auto& rng) {
    auto a = random_tensor({4, 6}, rng, -3.0, 3.0);
    return GradCheckProblem{weighted([=] { return softmax_rows(a); }, {4, 6}, rng), {{"a", a}}};
  }));
  cases.push_back(make_case("batchnorm_train", [](auto& rng) {
    auto x = random_tensor({3, 2, 3, 4}, rng), g = random_tensor({2}, rng, 0.5, 1.5), b = random_tensor({2}, rng);
    auto stats = std::make_shared<BatchNormStats<double>>(BatchNormStats<double>::make(2));
    return GradCheckProblem{
        weighted([=] { return batchnorm(x, g, b, *stats, Mode::train); }, {3, 2, 3, 4}, rng),
        {{"input", x}, {"gamma", g}, {"beta", b}}};
  }));
  cases.push_back(make_case("batchnorm_eval", [](auto& rng) {
    auto x = random_tensor({2, 3, 2, 2}, rng), g = random_tensor({3}, rng, 0.5, 1.5), b = random_tensor({3}, rng);
    auto stats = std::make_shared<BatchNormStats<double>>(BatchNormStats<double>::make(3));
    stats->running_mean = random_tensor({3}, rng, -0.5, 0.5, false);
    stats->running_var = random_tensor({3}, rng, 0.5, 2.0, false);
    return GradCheckProblem{
        weighted([=] { return batchnorm(x, g, b, *stats, Mode::eval); }, {2, 3, 2, 2}, rng),
        {{"input", x}, {"gamma", g}, {"beta", b}}};
  }));
  cases.push_back(make_case("reshape", [](auto& rng) {
    auto x = random_tensor({2, 6}, rng);
    return GradCheckProblem{weighted([=] { return reshape(x, {3, 4}); }, {3, 4}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("concat_channels", [](auto& rng) {
    auto a = random_tensor({2, 1, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
    return GradCheckProblem{weighted([=] { return concat_channels<double>({a, b}); }, {2, 4, 3, 3}, rng),
                            {{"a", a}, {"b", b}}};
  }));
  cases.push_back(make_case("concat_batch", [](auto& rng) {
    auto a = random_tensor({1, 2, 3, 3}, rng), b = random_tensor({2, 2, 3, 3}, rng);
    return GradCheckProblem{weighted([=] { return concat_batch<double>({a, b}); }, {3, 2, 3, 3}, rng),
                            {{"a", a}, {"b", b}}};
  }));
  cases.push_back(make_case("select_batch", [](auto& rng) {
    auto x = random_tensor({3, 2, 2, 3}, rng);
    return GradCheckProblem{weighted([=] { return select_batch(x, 1); }, {1, 2, 2, 3}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("max_pool2d", [](auto& rng) {
    auto x = random_tensor({2, 2, 5, 4}, rng);
    return GradCheckProblem{weighted([=] { return max_pool2d(x, 2); }, {2, 2, 2, 2}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("global_avg_pool", [](auto& rng) {
    auto x = random_tensor({2, 3, 4, 5}, rng);
    return GradCheckProblem{weighted([=] { return global_avg_pool(x); }, {2, 3, 1, 1}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("upsample_nearest", [](auto& rng) {
    auto x = random_tensor({1, 2, 2, 3}, rng);
    return GradCheckProblem{weighted([=] { return upsample_nearest(x, 3, 2); }, {1, 2, 6, 6}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("depth_to_space", [](auto& rng) {
    auto x = random_tensor({2, 8, 2, 3}, rng);
    return GradCheckProblem{weighted([=] { return depth_to_space(x, 2); }, {2, 2, 4, 6}, rng), {{"x", x}}};
  }));
  cases.push_back(make_case("sum", [](auto& rng) {
    auto x = random_tensor({3, 4}, rng);
    return GradCheckProblem{[=] { return sum(mul(x, x)); }, {{"x", x}}};
  }));
  cases.push_back(make_case("mean", [](auto& rng) {
    auto x = random_tensor({3, 4}, rng);
    return GradCheckProblem{[=] { return mean(mul(x, x)); }, {{"x", x}}};
  }));
  return cases;
}

std::vector<GradCheckCase> model_cases(bool all_variants) {
  std::vector<std::pair<SsgVariant, NonLocalKind>> variants{{SsgVariant::full, NonLocalKind::dinlm}};
  if (all_variants) {
    variants.clear();
    for (auto s : {SsgVariant::full, SsgVariant::block, SsgVariant::global, SsgVariant::fixed})
      for (auto n : {NonLocalKind::dinlm, NonLocalKind::nlm, NonLocalKind::none}) variants.emplace_back(s, n);
  }
  std::vector<GradCheckCase> cases;
  for (auto [ssg, nl] : variants) {
    cases.push_back(make_case("model_" + to_string(ssg) + "_" + to_string(nl), [ssg, nl](auto& rng) {
      ModelConfig cfg;
      cfg.phases = 2;
      cfg.channels = 4;
      cfg.febs = 1;
      cfg.patch = 3;
      cfg.block = 33;
      cfg.rate = 0.25;
      cfg.ssg = ssg;
      cfg.nl = nl;
      auto params = std::make_shared<ModelParams<double>>(init_parameters<double>(cfg, rng()));
      // The check point differs from the raw initialization, where FD at
      // h = 1e-6 is not a usable oracle:
      //  - kernels scaled by 0.7 keep features moderate so the attention
      //    softmax is neither uniform nor saturated;
      //  - random biases move ReLU inputs off exact zeros (zero biases on an
      //    all-zero input put every unit on its kink);
      //  - offsets near half-pixel with tiny weights keep bilinear reads away
      //    from the integer grid;
      //  - a target in the row space of phi keeps the loss small, which keeps
      //    the round-off of loss differences below the tolerance.
      for (auto& e : params->named()) {
        if (!e.trainable) continue;
        auto data = Tensor64(e.tensor).mutable_data();
        if (e.tensor.ndim() == 4)
          for (auto& v : data) v *= 0.7;
        else if (e.name.ends_with(".bias"))
          for (auto& v : data) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
      }
      for (auto& phase : params->phases) {
        if (phase.prox.nonlocal && phase.prox.nonlocal->has_offsets()) {
          auto& off = phase.prox.nonlocal->offset;
          for (auto& v : off.weight.mutable_data()) v = std::uniform_real_distribution<double>(-1e-4, 1e-4)(rng);
          for (auto& v : off.bias.mutable_data()) v = std::uniform_real_distribution<double>(0.3, 0.7)(rng);
        }
      }
      auto op = std::make_shared<SamplingOperator<double>>(
          make_operator<double>(cfg.block, cfg.rate, MatrixKind::learned_init, rng()));
      T64 image;
      {
        NoGradGuard guard;
        const auto u = random_tensor({1, 1, 33, 33}, rng, 0.0, 1.0, false);
        const auto projected = initial_reconstruction(*op, sample(*op, u));
        image = T64::from_data(projected.shape(), std::vector<double>(projected.data().begin(), projected.data().end()),
                               false);
      }
      // Perturbing phi afterwards makes the phase-1 fidelity gradient non-zero.
      for (auto& v : op->phi.mutable_data()) v += std::uniform_real_distribution<double>(-0.005, 0.005)(rng);

      GradCheckProblem problem;
      for (auto& e : params->named())
        if (e.trainable) problem.params.emplace_back(e.name, e.tensor);
      problem.params.emplace_back("sampling.phi", op->phi);
      problem.loss = [cfg, params, op, image] {
        const auto m = sample(*op, image);
        const auto out = forward(cfg, *params, *op, m, Mode::train);
        return loss(out.outputs, image);
      };
      return problem;
    }));
  }
  return cases;
}

std::vector<GradCheckOutcome> run_gradcheck_suite(const std::vector<GradCheckCase>& cases, std::size_t samples,
                                                  std::size_t seeds, double tolerance) {
  std::vector<GradCheckOutcome> out;
  for (const auto& c : cases) {
    GradCheckOutcome o;
    o.name = c.name;
    for (std::size_t s = 0; s < seeds; ++s) {
      auto problem = c.build(s);
      const auto r = finite_diff_check(problem.loss, problem.params, samples, s);
      o.probes += r.probes.size();
      for (const auto& p : r.probes) {
        if (p.rel_error < tolerance) continue;
        ++o.failing_probes;
        if (relative_error(p.analytic, p.forward) < tolerance || relative_error(p.analytic, p.backward) < tolerance)
          ++o.one_sided_matches;
      }
      if (r.max_rel_error >= o.max_rel_error) {
        o.max_rel_error = r.max_rel_error;
        o.worst = "seed " + std::to_string(s) + ": " + r.worst;
      }
    }
    o.passed = o.max_rel_error < tolerance;
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace ucs
