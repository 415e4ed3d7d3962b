#pragma once

#include <cstdint>
#include <vector>

#include "ucs/sampling.hpp"

namespace ucs {

struct IstaConfig {
  double rho = 1.0;
  double lambda = 0.0;
  std::size_t iterations = 100;

  void validate() const;
};

/// sign(v) * max(|v| - t, 0). Throws ConfigError for t < 0.
double soft_threshold(double v, double t);
std::vector<double> soft_threshold(const std::vector<double>& v, double t);

/// Orthonormal DCT-II matrix C (row k = basis k), so X = C x C^T per block.
std::vector<double> dct_matrix(std::size_t n);

/// Blockwise 2-D DCT of a [N,1,H,W] image with H, W multiples of `block`.
Tensor<double> dct_blocks(const Tensor<double>& image, std::size_t block);
Tensor<double> idct_blocks(const Tensor<double>& coeffs, std::size_t block);

/// r = x - rho * phi^T (phi x - y), one explicit matrix-vector product per block.
Tensor<double> ista_gradient_step(const SamplingOperator<double>& op, const Tensor<double>& x,
                                  const MeasurementSet<double>& m, double rho);

/// 1/2 ||phi x - y||^2 summed over all blocks and images.
double fidelity(const SamplingOperator<double>& op, const Tensor<double>& x, const MeasurementSet<double>& m);

/// sigma_max(phi)^2 by power iteration on phi phi^T.
double spectral_norm_squared(const SamplingOperator<double>& op, std::size_t iterations = 50);

/// 0.9 / sigma_max(phi)^2.
double default_step(const SamplingOperator<double>& op);

struct IstaResult {
  Tensor<double> image;        // padded size
  std::vector<double> trace;   // fidelity of x^0, x^1, ..., x^iterations
};

IstaResult ista_reconstruct(const SamplingOperator<double>& op, const MeasurementSet<double>& m,
                            const IstaConfig& cfg);

/// Picks lambda from `grid` maximizing PSNR of the cropped reconstruction of
/// `validation` (pixel values in [0, 1]).
double tune_lambda(const SamplingOperator<double>& op, const Tensor<double>& validation, double rho,
                   std::size_t iterations, const std::vector<double>& grid);

/// Coarse log grid used when no lambda is given: 0 and 1e-4 .. 1e-1.
std::vector<double> default_lambda_grid();

}  // namespace ucs
