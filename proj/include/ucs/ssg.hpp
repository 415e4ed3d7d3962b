#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ucs/layers.hpp"
#include "ucs/sampling.hpp"

namespace ucs {

enum class SsgVariant { full, block, global, fixed };

std::string to_string(SsgVariant v);
SsgVariant parse_ssg_variant(const std::string& name);

/// Step-size map. `values` lives on the variant's native grid:
///   full   [N,1,H,W]
///   block  [N,1,H/B,W/B]
///   global [N,1,1,1]
///   fixed  [1]
/// `expanded` is what multiplies the fidelity gradient: [N,1,H,W] for the
/// spatial variants and [1] for fixed. All entries lie in [0, 2].
template <typename T>
struct StepSizeMap {
  SsgVariant variant = SsgVariant::full;
  Tensor<T> values;
  Tensor<T> expanded;
};

template <typename T>
struct SsgNetParams {
  SsgVariant variant = SsgVariant::full;
  std::size_t channels = 0;
  std::size_t block = 0;  // only used by the block variant

  // Feature extraction, absent for the fixed variant.
  ConvLayer<T> head;                 // c -> c, 3x3
  std::vector<FeatureBlock<T>> febs;  // Q blocks
  ConvLayer<T> tail;                 // c -> 1, 3x3

  // Normalization: 3x3 (full) or BxB stride B (block); unused by global.
  ConvLayer<T> norm;
  // Fixed variant: rho = 1 + tanh(rho_logit).
  Tensor<T> rho_logit;

  static SsgNetParams create(SsgVariant variant, std::size_t channels, std::size_t febs,
                             std::size_t block, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// P = G(h_prev). Spatial dims of the full map equal those of h_prev.
template <typename T>
StepSizeMap<T> ssg_forward(SsgNetParams<T>& params, const Tensor<T>& h_prev, Mode mode);

/// Broadcast a constant rho to a map of the fixed variant; used for oracles
/// and classical comparisons.
template <typename T>
StepSizeMap<T> constant_step_map(T rho);

/// r = x_prev - P (.) phi^T (phi x_prev - y).
template <typename T>
Tensor<T> gradient_step(const SamplingOperator<T>& op, const Tensor<T>& x_prev,
                        const MeasurementSet<T>& m, const StepSizeMap<T>& map);

}  // namespace ucs
