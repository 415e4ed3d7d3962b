#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ucs/layers.hpp"

namespace ucs {

enum class NonLocalKind { dinlm, nlm, none };

std::string to_string(NonLocalKind k);
NonLocalKind parse_nonlocal_kind(const std::string& name);

/// Weights of the (deformation-invariant) non-local module. The offset conv
/// is absent when the params were created for plain NLM.
template <typename T>
struct DinlmParams {
  std::size_t channels = 0;
  std::size_t embed = 0;  // c_e = max(1, c / 2)
  std::size_t patch = 0;  // d, odd

  ConvLayer<T> offset;     // c -> 2 d^2, 3x3, zero-initialized
  ConvLayer<T> theta;      // c -> c_e, d x d, with bias
  Tensor<T> phi_kernel;    // [c_e, c, d, d]
  Tensor<T> g_kernel;      // [c_e, c, d, d]
  ConvLayer<T> project;    // c_e -> c, 1x1, with bias

  static DinlmParams create(std::size_t channels, std::size_t patch, bool with_offsets, Rng& rng);
  bool has_offsets() const { return offset.weight.defined(); }
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Row-normalized pairwise weights, rows = query positions, cols = key
/// positions, both row-major over the (possibly pooled) grid.
template <typename T>
struct AffinityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> weights;

  T at(std::size_t i, std::size_t j) const { return weights[i * cols + j]; }
};

struct NonLocalOptions {
  /// Max-pool factor on the key/value paths. Ignored when H or W < 8.
  std::size_t subsample = 1;
  bool keep_affinity = false;
};

template <typename T>
struct NonLocalOutput {
  Tensor<T> output;                         // same shape as the input
  std::vector<AffinityMatrix<T>> affinity;  // one per batch item when kept
  Tensor<T> offsets;                        // DINLM only
};

template <typename T>
NonLocalOutput<T> nlm_forward(const Tensor<T>& features, const DinlmParams<T>& params,
                              const NonLocalOptions& options = {});

template <typename T>
NonLocalOutput<T> dinlm_forward(const Tensor<T>& features, const DinlmParams<T>& params,
                                const NonLocalOptions& options = {});

/// Three 3x3 conv+relu layers; layer j > 0 sees a 1x1 projection of the
/// concatenated block input and earlier outputs. Output = input + last layer.
template <typename T>
struct DenseResidualBlock {
  std::vector<ConvLayer<T>> convs;
  std::vector<ConvLayer<T>> projections;  // projections[j - 1] feeds layer j

  static DenseResidualBlock create(std::size_t channels, std::size_t layers, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct ProxParams {
  std::size_t channels = 0;
  ConvLayer<T> fusion;  // (c + 1) -> c, 3x3
  DenseResidualBlock<T> block1;
  std::optional<DinlmParams<T>> nonlocal;
  DenseResidualBlock<T> block2;
  ConvLayer<T> head;  // c -> 1, 3x3

  /// Non-local weights are created for kind != none; offsets only for dinlm.
  static ProxParams create(std::size_t channels, std::size_t patch, NonLocalKind kind, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct ProxOutput {
  Tensor<T> x;  // [N,1,H,W]
  Tensor<T> h;  // [N,c,H,W]
  std::vector<AffinityMatrix<T>> affinity;
  Tensor<T> offsets;
};

template <typename T>
ProxOutput<T> prox_forward(const ProxParams<T>& params, const Tensor<T>& r, const Tensor<T>& h_prev,
                           NonLocalKind kind, const NonLocalOptions& options = {});

}  // namespace ucs
