#include "ucs/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gemm.hpp"

namespace ucs {

namespace {

using detail::make_result;
using detail::needs_grad;
using detail::Node;

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

enum class Broadcast { same, scalar_a, scalar_b };

template <typename T>
Broadcast broadcast_kind(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.numel() == 1) return Broadcast::scalar_a;
  if (b.numel() == 1) return Broadcast::scalar_b;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

// Shared driver for add/sub/mul. `f` computes the value, `da`/`db` the local
// partial derivatives given (a, b).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const Broadcast kind = broadcast_kind(op, a, b);
  const Shape shape = kind == Broadcast::scalar_a ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  auto av = a.data();
  auto bv = b.data();
  auto at = [kind, av](std::size_t i) { return kind == Broadcast::scalar_a ? av[0] : av[i]; };
  auto bt = [kind, bv](std::size_t i) { return kind == Broadcast::scalar_b ? bv[0] : bv[i]; };
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(at(i), bt(i));
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(shape, std::move(out), op, {an, bn},
                        [an, bn, kind, n, da, db](const Node<T>& self) {
                          auto av = std::span<const T>(an->data);
                          auto bv = std::span<const T>(bn->data);
                          for (std::size_t i = 0; i < n; ++i) {
                            const T x = kind == Broadcast::scalar_a ? av[0] : av[i];
                            const T y = kind == Broadcast::scalar_b ? bv[0] : bv[i];
                            const T g = self.grad[i];
                            if (needs_grad(an)) {
                              an->grad_buffer()[kind == Broadcast::scalar_a ? 0 : i] += g * da(x, y);
                            }
                            if (needs_grad(bn)) {
                              bn->grad_buffer()[kind == Broadcast::scalar_b ? 0 : i] += g * db(x, y);
                            }
                          }
                        });
}

// Unary map whose derivative is expressed through input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D deriv) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), op, {xn}, [xn, deriv](const Node<T>& self) {
    auto dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * deriv(xn->data[i], self.data[i]);
  });
}

// Pure data movement described by out[i] = in[index[i]].
template <typename T>
Tensor<T> gather(const char* op, const Tensor<T>& x, Shape shape, std::vector<std::size_t> index) {
  std::vector<T> out(index.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = xv[index[i]];
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), op, {xn},
                        [xn, index = std::move(index)](const Node<T>& self) {
                          auto dx = xn->grad_buffer();
                          for (std::size_t i = 0; i < index.size(); ++i) dx[index[i]] += self.grad[i];
                        });
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>("add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                   [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                   [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                   [](T x, T) { return x; });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
          "matmul: inner extents differ for " + shape_string(a.shape()) + " x " +
              shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>({m, n}, std::move(out), "matmul", {an, bn}, [an, bn, m, n, k](const Node<T>& self) {
    if (needs_grad(an)) {
      detail::gemm(false, true, m, k, n, self.grad.data(), bn->data.data(), an->grad_buffer().data(), true);
    }
    if (needs_grad(bn)) {
      detail::gemm(true, false, k, n, m, an->data.data(), self.grad.data(), bn->grad_buffer().data(), true);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.ndim() == 2, "transpose: expected 2-D tensor, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> index(m * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) index[i * m + j] = j * n + i;
  }
  return gather<T>("transpose", a, {n, m}, std::move(index));
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  require(a.ndim() == 2, "softmax_rows: expected 2-D tensor, got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = av.data() + i * n;
    T* dst = out.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
  }
  auto an = a.node();
  return make_result<T>({m, n}, std::move(out), "softmax_rows", {an}, [an, m, n](const Node<T>& self) {
    auto da = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.data.data() + i * n;
      const T* g = self.grad.data() + i * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
BatchNormStats<T> BatchNormStats<T>::make(std::size_t channels) {
  return BatchNormStats{Tensor<T>::zeros({channels}), Tensor<T>::full({channels}, T(1)), 0.1, 1e-5};
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, Mode mode) {
  require(input.ndim() == 4, "batchnorm: expected 4-D input, got " + shape_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  require(n * hw > 0, "batchnorm: zero-size batch " + shape_string(input.shape()));
  require(gamma.numel() == c && beta.numel() == c && stats.running_mean.numel() == c &&
              stats.running_var.numel() == c,
          "batchnorm: parameter sizes do not match " + std::to_string(c) + " channels");
  const std::size_t count = n * hw;
  auto x = input.data();
  std::vector<T> mean(c), invstd(c);
  if (mode == Mode::train) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / double(count);
      double ss = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / double(count);
      mean[ch] = T(mu);
      invstd[ch] = T(1.0 / std::sqrt(var + stats.eps));
      const double unbiased = count > 1 ? ss / double(count - 1) : var;
      rm[ch] = T((1.0 - stats.momentum) * rm[ch] + stats.momentum * mu);
      rv[ch] = T((1.0 - stats.momentum) * rv[ch] + stats.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      invstd[ch] = T(1.0 / std::sqrt(double(stats.running_var[ch]) + stats.eps));
    }
  }
  std::vector<T> xhat(input.numel()), out(input.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[base + i] = (x[base + i] - mean[ch]) * invstd[ch];
        out[base + i] = gamma[ch] * xhat[base + i] + beta[ch];
      }
    }
  }
  auto xn = input.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  const bool batch_stats = mode == Mode::train;
  return make_result<T>(
      input.shape(), std::move(out), "batchnorm", {xn, gn, bn},
      [xn, gn, bn, n, c, hw, count, batch_stats, xhat = std::move(xhat),
       invstd = std::move(invstd)](const Node<T>& self) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += self.grad[base + i];
              sum_gx += self.grad[base + i] * xhat[base + i];
            }
          }
          if (needs_grad(gn)) gn->grad_buffer()[ch] += sum_gx;
          if (needs_grad(bn)) bn->grad_buffer()[ch] += sum_g;
          if (!needs_grad(xn)) continue;
          auto dx = xn->grad_buffer();
          const T gm = gn->data[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const T g = self.grad[base + i];
              if (batch_stats) {
                dx[base + i] += gm * invstd[ch] *
                                (g - sum_g / T(count) - xhat[base + i] * sum_gx / T(count));
              } else {
                dx[base + i] += gm * invstd[ch] * g;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape: cannot view " + shape_string(x.shape()) +
                                               " as " + shape_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), "reshape", {xn}, [xn](const Node<T>& self) {
    auto dx = xn->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  require(first.size() == 4, "concat_channels: expected 4-D inputs");
  const std::size_t n = first[0], hw = first[2] * first[3];
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    require(p.ndim() == 4 && p.dim(0) == n && p.dim(2) == first[2] && p.dim(3) == first[3],
            "concat_channels: " + shape_string(p.shape()) + " incompatible with " +
                shape_string(first));
    total_c += p.dim(1);
  }
  std::vector<T> out(n * total_c * hw);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::vector<std::size_t> offsets;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(p.data().data() + b * c * hw, c * hw, out.data() + (b * total_c + c0) * hw);
    }
    nodes.push_back(p.node());
    offsets.push_back(c0);
    c0 += c;
  }
  return make_result<T>({n, total_c, first[2], first[3]}, std::move(out), "concat_channels", nodes,
                        [nodes, offsets, n, total_c, hw](const Node<T>& self) {
                          for (std::size_t k = 0; k < nodes.size(); ++k) {
                            if (!needs_grad(nodes[k])) continue;
                            const std::size_t c = nodes[k]->shape[1];
                            auto dx = nodes[k]->grad_buffer();
                            for (std::size_t b = 0; b < n; ++b) {
                              const T* src = self.grad.data() + (b * total_c + offsets[k]) * hw;
                              T* dst = dx.data() + b * c * hw;
                              for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_batch: no inputs");
  Shape shape = parts.front().shape();
  require(!shape.empty(), "concat_batch: scalar inputs");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape tail_a(shape.begin() + 1, shape.end());
    Shape tail_b(p.shape().begin() + 1, p.shape().end());
    require(p.ndim() == shape.size() && tail_a == tail_b,
            "concat_batch: " + shape_string(p.shape()) + " incompatible with " + shape_string(shape));
    total += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(shape_numel(shape) / shape[0] * total);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  shape[0] = total;
  return make_result<T>(shape, std::move(out), "concat_batch", nodes, [nodes](const Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& nd : nodes) {
      if (needs_grad(nd)) {
        auto dx = nd->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[offset + i];
      }
      offset += nd->data.size();
    }
  });
}

template <typename T>
Tensor<T> select_batch(const Tensor<T>& x, std::size_t index) {
  require(x.ndim() >= 1 && index < x.dim(0),
          "select_batch: index " + std::to_string(index) + " out of range for " + shape_string(x.shape()));
  Shape shape = x.shape();
  const std::size_t stride = x.numel() / shape[0];
  shape[0] = 1;
  std::vector<std::size_t> idx(stride);
  for (std::size_t i = 0; i < stride; ++i) idx[i] = index * stride + i;
  return gather<T>("select_batch", x, std::move(shape), std::move(idx));
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t factor) {
  require(x.ndim() == 4 && factor >= 1 && x.dim(2) >= factor && x.dim(3) >= factor,
          "max_pool2d: input " + shape_string(x.shape()) + " smaller than window " + std::to_string(factor));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / factor, wo = w / factor;
  std::vector<std::size_t> index(n * c * ho * wo);
  auto xv = x.data();
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = nc * h * w + oy * factor * w + ox * factor;
        for (std::size_t i = 0; i < factor; ++i) {
          for (std::size_t j = 0; j < factor; ++j) {
            const std::size_t k = nc * h * w + (oy * factor + i) * w + ox * factor + j;
            if (xv[k] > xv[best]) best = k;
          }
        }
        index[(nc * ho + oy) * wo + ox] = best;
      }
    }
  }
  return gather<T>("max_pool2d", x, {n, c, ho, wo}, std::move(index));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.ndim() == 4, "global_avg_pool: expected 4-D input, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(n * c);
  auto xv = x.data();
  for (std::size_t k = 0; k < n * c; ++k) {
    double acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += xv[k * hw + i];
    out[k] = T(acc / double(hw));
  }
  auto xn = x.node();
  return make_result<T>({n, c, 1, 1}, std::move(out), "global_avg_pool", {xn},
                        [xn, n, c, hw](const Node<T>& self) {
                          auto dx = xn->grad_buffer();
                          for (std::size_t k = 0; k < n * c; ++k) {
                            const T g = self.grad[k] / T(hw);
                            for (std::size_t i = 0; i < hw; ++i) dx[k * hw + i] += g;
                          }
                        });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t fy, std::size_t fx) {
  require(x.ndim() == 4 && fy >= 1 && fx >= 1, "upsample_nearest: bad input " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * fy, wo = w * fx;
  std::vector<std::size_t> index(n * c * ho * wo);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        index[(nc * ho + y) * wo + xx] = (nc * h + y / fy) * w + xx / fx;
      }
    }
  }
  return gather<T>("upsample_nearest", x, {n, c, ho, wo}, std::move(index));
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, std::size_t block) {
  require(x.ndim() == 4 && block >= 1 && x.dim(1) % (block * block) == 0,
          "depth_to_space: channels of " + shape_string(x.shape()) + " not divisible by " +
              std::to_string(block * block));
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c = cin / (block * block), ho = h * block, wo = w * block;
  std::vector<std::size_t> index(n * c * ho * wo);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const std::size_t k = ch * block * block + (y % block) * block + (xx % block);
          index[((b * c + ch) * ho + y) * wo + xx] = ((b * cin + k) * h + y / block) * w + xx / block;
        }
      }
    }
  }
  return gather<T>("depth_to_space", x, {n, c, ho, wo}, std::move(index));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  auto xn = x.node();
  return make_result<T>({1}, {T(acc)}, "sum", {xn}, [xn](const Node<T>& self) {
    auto dx = xn->grad_buffer();
    for (auto& v : dx) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

#define UCS_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> tanh(const Tensor<T>&);                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> transpose(const Tensor<T>&);                                                \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                             \
  template struct BatchNormStats<T>;                                                             \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                               BatchNormStats<T>&, Mode);                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> concat_batch(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> select_batch(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t, std::size_t);               \
  template Tensor<T> depth_to_space(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);

UCS_INSTANTIATE_OPS(float)
UCS_INSTANTIATE_OPS(double)

}  // namespace ucs
