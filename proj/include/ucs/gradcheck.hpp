#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ucs/tensor.hpp"

namespace ucs {

/// One probed coordinate. forward / backward are the one-sided differences
/// (f(theta + h) - f(theta)) / h and (f(theta) - f(theta - h)) / h; when the
/// central difference disagrees but one side matches, the interval
/// [theta - h, theta + h] contains a kink.
struct ProbeRecord {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double central = 0.0;
  double forward = 0.0;
  double backward = 0.0;
  double rel_error = 0.0;
};

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t samples = 0;
  std::string worst;  // "<name>[<index>]: analytic=..., numeric=..."
  std::vector<ProbeRecord> probes;
};

using NamedTensor64 = std::pair<std::string, Tensor64>;

/// Compares reverse-mode gradients of the scalar `loss()` with respect to the
/// given leaves against central differences with h = 1e-6 * max(1, |theta|).
///
/// Every tensor gets at least one probe; the rest of the budget is drawn
/// uniformly over all coordinates. Relative error is
/// |a - b| / max(|a|, |b|, 1e-8). Leaf grads are zeroed before and after.
GradCheckResult finite_diff_check(const std::function<Tensor64()>& loss,
                                  std::vector<NamedTensor64> params, std::size_t samples,
                                  std::uint64_t seed);

/// Single-point form: f maps `point` to a scalar.
GradCheckResult finite_diff_check(const std::function<Tensor64(const Tensor64&)>& f,
                                  Tensor64 point, std::size_t samples, std::uint64_t seed);

}  // namespace ucs
