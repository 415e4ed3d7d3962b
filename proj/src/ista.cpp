#include "ucs/ista.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "ucs/errors.hpp"

namespace ucs {

void IstaConfig::validate() const {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw ConfigError("ista: rho must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("ista: lambda must be non-negative");
  if (iterations == 0) throw ConfigError("ista: at least one iteration required");
}

double soft_threshold(double v, double t) {
  if (!(t >= 0.0)) throw ConfigError("soft_threshold: negative threshold");
  const double mag = std::abs(v) - t;
  if (mag <= 0.0) return 0.0;
  return v < 0.0 ? -mag : mag;
}

std::vector<double> soft_threshold(const std::vector<double>& v, double t) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = soft_threshold(v[i], t);
  return out;
}

std::vector<double> dct_matrix(std::size_t n) {
  std::vector<double> c(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / double(n)) : std::sqrt(2.0 / double(n));
    for (std::size_t i = 0; i < n; ++i)
      c[k * n + i] = s * std::cos(std::numbers::pi * (double(i) + 0.5) * double(k) / double(n));
  }
  return c;
}

namespace {

void check_blocked(const Tensor<double>& image, std::size_t block, const char* who) {
  if (image.ndim() != 4 || image.dim(1) != 1 || block == 0 || image.dim(2) % block != 0 ||
      image.dim(3) % block != 0)
    throw ShapeError(std::string(who) + ": expected [N,1,H,W] with H, W multiples of " +
                     std::to_string(block) + ", got " + shape_string(image.shape()));
}

// out = L * X * R on every block, L and R are b x b row-major.
Tensor<double> blockwise_product(const Tensor<double>& image, std::size_t b, const std::vector<double>& left,
                                 const std::vector<double>& right) {
  const std::size_t n = image.dim(0), h = image.dim(2), w = image.dim(3);
  auto in = image.data();
  std::vector<double> out(in.size());
  std::vector<double> blk(b * b), tmp(b * b);
  for (std::size_t img = 0; img < n; ++img) {
    const std::size_t base = img * h * w;
    for (std::size_t by = 0; by < h; by += b) {
      for (std::size_t bx = 0; bx < w; bx += b) {
        for (std::size_t u = 0; u < b; ++u)
          for (std::size_t v = 0; v < b; ++v) blk[u * b + v] = in[base + (by + u) * w + bx + v];
        for (std::size_t u = 0; u < b; ++u) {
          for (std::size_t v = 0; v < b; ++v) {
            double s = 0.0;
            for (std::size_t k = 0; k < b; ++k) s += left[u * b + k] * blk[k * b + v];
            tmp[u * b + v] = s;
          }
        }
        for (std::size_t u = 0; u < b; ++u) {
          for (std::size_t v = 0; v < b; ++v) {
            double s = 0.0;
            for (std::size_t k = 0; k < b; ++k) s += tmp[u * b + k] * right[k * b + v];
            out[base + (by + u) * w + bx + v] = s;
          }
        }
      }
    }
  }
  return Tensor<double>::from_data(image.shape(), std::move(out));
}

std::vector<double> transposed(const std::vector<double>& m, std::size_t n) {
  std::vector<double> t(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * n + i] = m[i * n + j];
  return t;
}

void check_measurements(const SamplingOperator<double>& op, const Tensor<double>& x,
                        const MeasurementSet<double>& m) {
  check_blocked(x, op.block, "ista");
  const auto& v = m.values;
  if (v.ndim() != 4 || v.dim(0) != x.dim(0) || v.dim(1) != op.measurements ||
      v.dim(2) * op.block != x.dim(2) || v.dim(3) * op.block != x.dim(3))
    throw ShapeError("ista: measurements " + shape_string(v.shape()) + " do not match image " +
                     shape_string(x.shape()));
}

// Calls fn(img, block_y, block_x, residual) with residual = phi x_blk - y_blk.
template <typename Fn>
void for_each_residual(const SamplingOperator<double>& op, const Tensor<double>& x,
                       const MeasurementSet<double>& m, Fn&& fn) {
  const std::size_t b = op.block, nb = op.measurements, bp = b * b;
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), gy = h / b, gx = w / b;
  auto phi = op.phi.data();
  auto img = x.data();
  auto y = m.values.data();
  std::vector<double> blk(bp), res(nb);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t by = 0; by < gy; ++by) {
      for (std::size_t bx = 0; bx < gx; ++bx) {
        for (std::size_t u = 0; u < b; ++u)
          for (std::size_t v = 0; v < b; ++v) blk[u * b + v] = img[i * h * w + (by * b + u) * w + bx * b + v];
        for (std::size_t r = 0; r < nb; ++r) {
          double s = 0.0;
          for (std::size_t p = 0; p < bp; ++p) s += phi[r * bp + p] * blk[p];
          res[r] = s - y[((i * nb + r) * gy + by) * gx + bx];
        }
        fn(i, by, bx, res);
      }
    }
  }
}

}  // namespace

Tensor<double> dct_blocks(const Tensor<double>& image, std::size_t block) {
  check_blocked(image, block, "dct_blocks");
  const auto c = dct_matrix(block);
  return blockwise_product(image, block, c, transposed(c, block));
}

Tensor<double> idct_blocks(const Tensor<double>& coeffs, std::size_t block) {
  check_blocked(coeffs, block, "idct_blocks");
  const auto c = dct_matrix(block);
  return blockwise_product(coeffs, block, transposed(c, block), c);
}

Tensor<double> ista_gradient_step(const SamplingOperator<double>& op, const Tensor<double>& x,
                                  const MeasurementSet<double>& m, double rho) {
  check_measurements(op, x, m);
  const std::size_t b = op.block, nb = op.measurements, bp = b * b;
  const std::size_t h = x.dim(2), w = x.dim(3);
  auto phi = op.phi.data();
  auto in = x.data();
  std::vector<double> out(in.begin(), in.end());
  for_each_residual(op, x, m, [&](std::size_t i, std::size_t by, std::size_t bx, const std::vector<double>& res) {
    for (std::size_t p = 0; p < bp; ++p) {
      double g = 0.0;
      for (std::size_t r = 0; r < nb; ++r) g += phi[r * bp + p] * res[r];
      out[i * h * w + (by * b + p / b) * w + bx * b + p % b] -= rho * g;
    }
  });
  return Tensor<double>::from_data(x.shape(), std::move(out));
}

double fidelity(const SamplingOperator<double>& op, const Tensor<double>& x, const MeasurementSet<double>& m) {
  check_measurements(op, x, m);
  double total = 0.0;
  for_each_residual(op, x, m, [&](std::size_t, std::size_t, std::size_t, const std::vector<double>& res) {
    for (double r : res) total += r * r;
  });
  return 0.5 * total;
}

double spectral_norm_squared(const SamplingOperator<double>& op, std::size_t iterations) {
  const std::size_t nb = op.measurements, bp = op.block_pixels();
  auto phi = op.phi.data();
  // Gram matrix phi phi^T is n_B x n_B; its top eigenvalue is sigma_max^2.
  std::vector<double> gram(nb * nb);
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < bp; ++p) s += phi[i * bp + p] * phi[j * bp + p];
      gram[i * nb + j] = s;
    }
  std::vector<double> v(nb, 1.0 / std::sqrt(double(nb))), next(nb);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < nb; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < nb; ++j) s += gram[i * nb + j] * v[j];
      next[i] = s;
    }
    double norm = 0.0;
    for (double e : next) norm += e * e;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    lambda = norm;
    for (std::size_t i = 0; i < nb; ++i) v[i] = next[i] / norm;
  }
  return lambda;
}

double default_step(const SamplingOperator<double>& op) {
  const double s2 = spectral_norm_squared(op);
  if (!(s2 > 0.0)) throw ConfigError("default_step: sampling matrix is zero");
  return 0.9 / s2;
}

IstaResult ista_reconstruct(const SamplingOperator<double>& op, const MeasurementSet<double>& m,
                            const IstaConfig& cfg) {
  cfg.validate();
  IstaResult result;
  Tensor<double> x = initial_reconstruction(op, m).detach();
  result.trace.push_back(fidelity(op, x, m));
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto r = ista_gradient_step(op, x, m, cfg.rho);
    if (cfg.lambda == 0.0) {
      x = r;
    } else {
      auto coeffs = dct_blocks(r, op.block);
      for (auto& c : coeffs.mutable_data()) c = soft_threshold(c, cfg.rho * cfg.lambda);
      x = idct_blocks(coeffs, op.block);
    }
    result.trace.push_back(fidelity(op, x, m));
  }
  result.image = x;
  return result;
}

double tune_lambda(const SamplingOperator<double>& op, const Tensor<double>& validation, double rho,
                   std::size_t iterations, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("tune_lambda: empty grid");
  const auto padded = pad_to_blocks(validation, op.block);
  const auto m = sample(op, padded);
  double best_lambda = grid.front(), best_mse = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    const auto rec = ista_reconstruct(op, m, IstaConfig{rho, lambda, iterations});
    const auto x = crop(rec.image, validation.dim(2), validation.dim(3));
    auto a = x.data();
    auto b = validation.data();
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    if (mse < best_mse) {
      best_mse = mse;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

std::vector<double> default_lambda_grid() { return {0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1}; }

}  // namespace ucs
