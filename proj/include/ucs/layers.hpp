#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ucs/ops.hpp"
#include "ucs/tensor.hpp"

namespace ucs {

using Rng = std::mt19937_64;

/// Named handle into a model. Buffers (trainable == false) are persisted in
/// checkpoints but never touched by the optimizer.
template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<ParamEntry<T>>;

/// Fills with U(-a, a), a = sqrt(6 / fan_in).
template <typename T>
void fan_in_uniform(Tensor<T>& weight, std::size_t fan_in, Rng& rng);

template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // [Cout, Cin, k, k]
  Tensor<T> bias;    // [Cout]; undefined when the layer has no bias
  std::size_t stride = 1;
  std::size_t pad = 0;

  /// Random fan-in weights, zero bias.
  static ConvLayer make(std::size_t cout, std::size_t cin, std::size_t kernel, Rng& rng,
                        bool with_bias = true, std::size_t stride = 1, std::size_t pad = SIZE_MAX);
  /// All-zero weights and bias.
  static ConvLayer zeros(std::size_t cout, std::size_t cin, std::size_t kernel, bool with_bias = true,
                         std::size_t stride = 1, std::size_t pad = SIZE_MAX);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
};

/// Conv without bias -> batchnorm -> relu.
template <typename T>
struct FeatureBlock {
  ConvLayer<T> conv;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;

  static FeatureBlock make(std::size_t channels, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

}  // namespace ucs
