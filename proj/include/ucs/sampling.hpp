#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ucs/tensor.hpp"

namespace ucs {

enum class MatrixKind { learned_init, orthogonalized_random };

/// Measurements per block, floor(rate * B^2). Throws ConfigError when the
/// rate is outside (0, 1] or leaves a block with no measurement.
std::size_t measurement_count(std::size_t block, double rate);

/// Block sampling matrix phi of shape [n_B, B*B]; row i is the i-th sensing
/// filter over a row-major flattened block.
template <typename T>
struct SamplingOperator {
  std::size_t block = 0;
  double rate = 0.0;
  std::size_t measurements = 0;
  Tensor<T> phi;
  bool learnable = false;

  std::size_t block_pixels() const { return block * block; }
};

/// i.i.d. Gaussian draw followed by row orthonormalization. `learned_init`
/// yields the same matrix with phi marked trainable.
template <typename T>
SamplingOperator<T> make_operator(std::size_t block, double rate, MatrixKind kind, std::uint64_t seed);

/// Wraps an existing matrix after validating its shape and values.
template <typename T>
SamplingOperator<T> operator_from_matrix(std::size_t block, double rate, Tensor<T> phi, bool learnable);

/// y for a batch of images: values [N, n_B, blocks_y, blocks_x].
template <typename T>
struct MeasurementSet {
  Tensor<T> values;
  std::size_t block = 0;
  double rate = 0.0;
  std::size_t blocks_y = 0;
  std::size_t blocks_x = 0;
  std::size_t original_h = 0;
  std::size_t original_w = 0;

  std::size_t measurements() const { return values.dim(1); }
  std::size_t padded_h() const { return blocks_y * block; }
  std::size_t padded_w() const { return blocks_x * block; }
};

template <typename T>
struct PaddedImage {
  Tensor<T> image;  // [N,1,H',W'] with H', W' multiples of B
  std::size_t original_h = 0;
  std::size_t original_w = 0;
};

/// Reflect-pads (edge sample not repeated) the bottom and right borders up to
/// the next multiple of `block`.
template <typename T>
PaddedImage<T> pad_to_blocks(const Tensor<T>& image, std::size_t block);

/// Top-left crop into a detached tensor.
template <typename T>
Tensor<T> crop(const Tensor<T>& image, std::size_t h, std::size_t w);

/// Strided block convolution with phi reshaped to [n_B,1,B,B].
template <typename T>
MeasurementSet<T> sample(const SamplingOperator<T>& op, const Tensor<T>& image);
template <typename T>
MeasurementSet<T> sample(const SamplingOperator<T>& op, const PaddedImage<T>& padded);

/// Per-pixel product with phi^T followed by tiling blocks back in grid order.
template <typename T>
Tensor<T> transpose_sample(const SamplingOperator<T>& op, const Tensor<T>& values);

/// x0 = phi^T y blockwise.
template <typename T>
Tensor<T> initial_reconstruction(const SamplingOperator<T>& op, const MeasurementSet<T>& m);

/// phi^T (phi x - y), assembled blockwise.
template <typename T>
Tensor<T> apply_fidelity_gradient(const SamplingOperator<T>& op, const Tensor<T>& x,
                                  const MeasurementSet<T>& m);

/// DCSM container for a single image's measurements.
template <typename T>
void write_measurements(std::ostream& os, const MeasurementSet<T>& m);
template <typename T>
MeasurementSet<T> read_measurements(std::istream& is);

template <typename T>
void save_measurements(const std::string& path, const MeasurementSet<T>& m);
template <typename T>
MeasurementSet<T> load_measurements(const std::string& path);

}  // namespace ucs
