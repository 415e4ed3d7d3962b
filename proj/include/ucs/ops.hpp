#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ucs/tensor.hpp"

namespace ucs {

/// Stride/padding pair, (rows, cols).
struct Window2 {
  std::size_t y = 1;
  std::size_t x = 1;
};

// --- convolution ------------------------------------------------------------

/// Cross-correlation of input [N,Cin,H,W] with kernel [Cout,Cin,kh,kw], zero
/// padding, optional bias [Cout]. Lowered to a matrix product over flattened
/// patches.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Window2 stride = {1, 1}, Window2 padding = {0, 0});

/// Deformable convolution, stride 1, implicit zero padding of d/2.
/// offsets: [N, 2*d*d, H, W] holding (dy, dx) per kernel tap in row-major
/// tap order. Taps read input at p + p_n + offset via bilinear interpolation.
template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                            const Tensor<T>& offsets);

/// Bilinear reads from map [N,C,H,W] at coords [N,P,2] ((y,x) pairs).
/// Returns [N,C,P]. Reads outside the grid contribute zero.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& coords);

// --- elementwise ------------------------------------------------------------
// Binary ops accept equal shapes, or one operand with a single element.

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);

// --- linear algebra ---------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
/// Row-wise softmax of a 2-D tensor with max subtraction.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);

// --- normalization ----------------------------------------------------------

enum class Mode { train, eval };

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormStats make(std::size_t channels);
};

/// Per-channel batch normalization over (N,H,W). Train mode normalizes with
/// the biased batch variance and folds the unbiased variance into the
/// running estimate; eval mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, Mode mode);

// --- shape plumbing ---------------------------------------------------------

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> select_batch(const Tensor<T>& x, std::size_t index);
/// Non-overlapping max pooling with window = stride = factor (floor).
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t factor);
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);
/// Nearest-neighbour replication: [N,C,h,w] -> [N,C,h*fy,w*fx].
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t fy, std::size_t fx);
/// [N, C*b*b, h, w] -> [N, C, h*b, w*b]; channel k of each group fills tile
/// pixel (k / b, k % b).
template <typename T> Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t block);

// --- reductions -------------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

}  // namespace ucs
