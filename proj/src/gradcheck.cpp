#include "ucs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace ucs {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckResult finite_diff_check(const std::function<Tensor64()>& loss,
                                  std::vector<NamedTensor64> params, std::size_t samples,
                                  std::uint64_t seed) {
  for (auto& [name, t] : params) t.zero_grad();
  backward(loss());

  std::vector<std::pair<std::size_t, std::size_t>> probes;
  std::size_t total = 0;
  for (std::size_t k = 0; k < params.size(); ++k) total += params[k].second.numel();
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, params[k].second.numel() - 1);
    probes.emplace_back(k, pick(rng));
  }
  std::uniform_int_distribution<std::size_t> flat(0, total - 1);
  while (probes.size() < samples) {
    std::size_t i = flat(rng), k = 0;
    while (i >= params[k].second.numel()) i -= params[k++].second.numel();
    probes.emplace_back(k, i);
  }

  GradCheckResult result;
  result.samples = probes.size();
  NoGradGuard no_grad;
  const double f0 = loss().item();
  for (auto [k, i] : probes) {
    auto& t = params[k].second;
    const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
    const double theta = t.data()[i];
    const double h = 1e-6 * std::max(1.0, std::abs(theta));
    t.mutable_data()[i] = theta + h;
    const double fp = loss().item();
    t.mutable_data()[i] = theta - h;
    const double fm = loss().item();
    t.mutable_data()[i] = theta;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = relative_error(analytic, numeric);
    result.probes.push_back({params[k].first, i, analytic, numeric, (fp - f0) / h, (f0 - fm) / h, err});
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      std::ostringstream os;
      os << params[k].first << '[' << i << "]: analytic=" << analytic << ", numeric=" << numeric;
      result.worst = os.str();
    }
  }
  for (auto& [name, t] : params) t.zero_grad();
  return result;
}

GradCheckResult finite_diff_check(const std::function<Tensor64(const Tensor64&)>& f,
                                  Tensor64 point, std::size_t samples, std::uint64_t seed) {
  if (!point.requires_grad()) point.set_requires_grad(true);
  return finite_diff_check([&] { return f(point); }, {{"point", point}}, samples, seed);
}

}  // namespace ucs
