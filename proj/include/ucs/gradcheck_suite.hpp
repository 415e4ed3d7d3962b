#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ucs/gradcheck.hpp"

namespace ucs {

/// A scalar loss over named leaves, rebuilt for every seed.
struct GradCheckProblem {
  std::function<Tensor64()> loss;
  std::vector<NamedTensor64> params;
};

struct GradCheckCase {
  std::string name;
  std::function<GradCheckProblem(std::uint64_t seed)> build;
};

/// One case per differentiable tensor operation.
std::vector<GradCheckCase> operation_cases();

/// Tiny end-to-end models: K=2, c=4, Q=1, d=3 on a 33x33 image with B=33,
/// one case per (ssg variant, non-local kind) when `all_variants`, otherwise
/// only full + dinlm. The check point is a perturbed initialization; see the
/// comment in the builder.
std::vector<GradCheckCase> model_cases(bool all_variants);

struct GradCheckOutcome {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;
  bool passed = false;
  std::size_t probes = 0;
  /// Probes at or above the tolerance, and how many of those have a
  /// one-sided difference within the tolerance of the analytic value.
  std::size_t failing_probes = 0;
  std::size_t one_sided_matches = 0;
};

/// Runs each case for seeds 0..seeds-1 with `samples` probes and reports the
/// worst error per case.
std::vector<GradCheckOutcome> run_gradcheck_suite(const std::vector<GradCheckCase>& cases, std::size_t samples,
                                                  std::size_t seeds, double tolerance);

}  // namespace ucs
