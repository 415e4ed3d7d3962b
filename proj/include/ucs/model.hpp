#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ucs/prox.hpp"
#include "ucs/sampling.hpp"
#include "ucs/ssg.hpp"

namespace ucs {

struct ModelConfig {
  std::size_t phases = 15;  // K
  std::size_t block = 33;   // B
  double rate = 0.25;
  std::size_t channels = 32;  // c
  std::size_t febs = 3;       // Q
  std::size_t patch = 3;      // d
  SsgVariant ssg = SsgVariant::full;
  NonLocalKind nl = NonLocalKind::dinlm;
  std::size_t nl_subsample = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError on values the model or the checkpoint cannot hold.
  void validate() const;
  std::size_t measurements() const;
  /// One line, key=value pairs.
  std::string describe() const;
};

template <typename T>
struct PhaseParams {
  SsgNetParams<T> ssg;
  ProxParams<T> prox;
};

template <typename T>
struct ModelParams {
  ConvLayer<T> init_feature;  // 1 -> c, 3x3, produces h^(0) from x^(0)
  std::vector<PhaseParams<T>> phases;

  /// Stable registry order: init, then phase by phase (ssg before prox).
  /// Includes batchnorm running statistics as buffers.
  ParamList<T> named() const;
  /// Trainable tensors only.
  std::vector<Tensor<T>> trainable() const;
};

/// Deterministic in (config, seed).
template <typename T>
ModelParams<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Number of trainable scalars of the network, sampling matrix excluded.
std::size_t parameter_count(const ModelConfig& config);

template <typename T>
struct ForwardResult {
  Tensor<T> x0;
  std::vector<Tensor<T>> outputs;  // x^(1..K), padded size
  Tensor<T> h;                     // h^(K)
  std::vector<StepSizeMap<T>> maps;
  std::vector<Tensor<T>> offsets;  // per phase, DINLM only
};

template <typename T>
ForwardResult<T> forward(const ModelConfig& config, ModelParams<T>& params, const SamplingOperator<T>& op,
                         const MeasurementSet<T>& m, Mode mode);

/// (1 / (K N)) sum_k sum_i ||x^(k)_i - x_i||^2.
template <typename T>
Tensor<T> loss(const std::vector<Tensor<T>>& outputs, const Tensor<T>& target);

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ModelParams<T> params;
  SamplingOperator<T> op;
};

/// Eval-mode forward without graph recording; returns x^(K) cropped to the
/// original image size. Throws ShapeError when the measurements were taken
/// with a different block size or n_B than the checkpoint.
template <typename T>
Tensor<T> reconstruct(Checkpoint<T>& ckpt, const MeasurementSet<T>& m);

/// DCSW container. Tensor data is stored as f32.
template <typename T>
void write_checkpoint(std::ostream& os, const Checkpoint<T>& ckpt);
template <typename T>
Checkpoint<T> read_checkpoint(std::istream& is);

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt);
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

}  // namespace ucs
