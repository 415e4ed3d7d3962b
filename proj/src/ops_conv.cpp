#include <algorithm>
#include <cmath>
#include <string>

#include "gemm.hpp"
#include "ucs/ops.hpp"

namespace ucs {

namespace {

using detail::gemm;
using detail::make_result;
using detail::needs_grad;

struct ConvGeometry {
  std::size_t cin, h, w, kh, kw, sy, sx, py, px, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_pixels() const { return ho * wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && sy == 1 && sx == 1 && py == 0 && px == 0; }
};

// Output columns [lo, hi) of kernel column j read inside the input row.
struct ValidRange {
  std::size_t lo, hi;
};

ValidRange valid_columns(const ConvGeometry& g, std::size_t j) {
  // ix = ox * sx + j - px must lie in [0, w).
  const std::size_t lo = j >= g.px ? 0 : (g.px - j + g.sx - 1) / g.sx;
  const std::size_t end = g.w + g.px;  // ix < w  <=>  ox * sx + j < end
  std::size_t hi = end > j ? (end - j + g.sx - 1) / g.sx : 0;
  hi = std::min(hi, g.wo);
  return {std::min(lo, hi), hi};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t npix = g.out_pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* plane = x + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * npix;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.sy + i) - static_cast<std::ptrdiff_t>(g.py);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + g.wo, T(0));
          const T* src = plane + static_cast<std::size_t>(iy) * g.w + (lo * g.sx + j - g.px);
          if (g.sx == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * g.sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t npix = g.out_pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* plane = dx + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * npix;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.sy + i) - static_cast<std::ptrdiff_t>(g.py);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w + (lo * g.sx + j - g.px);
          const T* src = row + oy * g.wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * g.sx] += src[ox];
        }
      }
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

/// Corner indices and fractional weights of one bilinear read.
template <typename T>
struct BilinearPoint {
  std::ptrdiff_t y0, x0;
  T ly, lx;
  bool valid[4];  // (y0,x0) (y0,x1) (y1,x0) (y1,x1)
  std::size_t index[4];

  BilinearPoint(T py, T px, std::size_t h, std::size_t w) {
    const T fy = std::floor(py);
    const T fx = std::floor(px);
    ly = py - fy;
    lx = px - fx;
    // Far-away coordinates clamp to a fully out-of-range cell.
    const T lim_y = T(h) + T(1), lim_x = T(w) + T(1);
    y0 = static_cast<std::ptrdiff_t>(std::clamp(fy, T(-2), lim_y));
    x0 = static_cast<std::ptrdiff_t>(std::clamp(fx, T(-2), lim_x));
    const std::ptrdiff_t ys[2] = {y0, y0 + 1};
    const std::ptrdiff_t xs[2] = {x0, x0 + 1};
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        const int k = 2 * a + b;
        valid[k] = ys[a] >= 0 && ys[a] < static_cast<std::ptrdiff_t>(h) && xs[b] >= 0 &&
                   xs[b] < static_cast<std::ptrdiff_t>(w);
        index[k] = valid[k] ? static_cast<std::size_t>(ys[a]) * w + static_cast<std::size_t>(xs[b]) : 0;
      }
    }
  }

  T corner(const T* plane, int k) const { return valid[k] ? plane[index[k]] : T(0); }

  T weight(int k) const {
    const T wy = (k < 2) ? T(1) - ly : ly;
    const T wx = (k % 2 == 0) ? T(1) - lx : lx;
    return wy * wx;
  }

  T read(const T* plane) const {
    return weight(0) * corner(plane, 0) + weight(1) * corner(plane, 1) +
           weight(2) * corner(plane, 2) + weight(3) * corner(plane, 3);
  }

  // Partial derivatives of read() with respect to the sampling coordinate.
  T d_dy(const T* plane) const {
    return (T(1) - lx) * (corner(plane, 2) - corner(plane, 0)) +
           lx * (corner(plane, 3) - corner(plane, 1));
  }
  T d_dx(const T* plane) const {
    return (T(1) - ly) * (corner(plane, 1) - corner(plane, 0)) +
           ly * (corner(plane, 3) - corner(plane, 2));
  }

  void scatter(T* plane, T g) const {
    for (int k = 0; k < 4; ++k) {
      if (valid[k]) plane[index[k]] += g * weight(k);
    }
  }
};

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Window2 stride, Window2 padding) {
  require(input.ndim() == 4 && kernel.ndim() == 4,
          "conv2d: expected 4-D input and kernel, got " + shape_string(input.shape()) + " and " +
              shape_string(kernel.shape()));
  require(input.dim(1) == kernel.dim(1),
          "conv2d: input channels " + std::to_string(input.dim(1)) + " of " +
              shape_string(input.shape()) + " do not match kernel " + shape_string(kernel.shape()));
  require(stride.y >= 1 && stride.x >= 1, "conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), cout = kernel.dim(0);
  ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3),
                 stride.y,     stride.x,     padding.y,    padding.x,     0,             0};
  require(g.h + 2 * g.py >= g.kh && g.w + 2 * g.px >= g.kw,
          "conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
              shape_string(input.shape()));
  if (bias.defined()) {
    require(bias.numel() == cout, "conv2d: bias " + shape_string(bias.shape()) +
                                      " does not match " + std::to_string(cout) + " output channels");
  }
  g.ho = (g.h + 2 * g.py - g.kh) / g.sy + 1;
  g.wo = (g.w + 2 * g.px - g.kw) / g.sx + 1;

  const std::size_t in_stride = g.cin * g.h * g.w;
  const std::size_t out_stride = cout * g.out_pixels();
  std::vector<T> out(n * out_stride);
  const std::size_t col_stride = g.is_pointwise() ? 0 : g.patch() * g.out_pixels();
  // Columns of every batch item, kept for the kernel gradient.
  auto cols = std::make_shared<std::vector<T>>(n * col_stride);
  const T* x = input.data().data();
  const T* wk = kernel.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    const T* src = x + b * in_stride;
    if (!g.is_pointwise()) {
      im2col(src, g, cols->data() + b * col_stride);
      src = cols->data() + b * col_stride;
    }
    T* dst = out.data() + b * out_stride;
    gemm(false, false, cout, g.out_pixels(), g.patch(), wk, src, dst, false);
    if (bias.defined()) {
      for (std::size_t o = 0; o < cout; ++o) {
        const T bv = bias[o];
        T* row = dst + o * g.out_pixels();
        for (std::size_t p = 0; p < g.out_pixels(); ++p) row[p] += bv;
      }
    }
  }

  auto in_node = input.node();
  auto k_node = kernel.node();
  auto b_node = bias.defined() ? bias.node() : nullptr;
  if (!grad_enabled() || !needs_grad(k_node)) cols.reset();
  return make_result<T>(
      {n, cout, g.ho, g.wo}, std::move(out), "conv2d", {in_node, k_node, b_node},
      [in_node, k_node, b_node, g, n, cout, in_stride, out_stride, col_stride, cols](const detail::Node<T>& self) mutable {
        std::vector<T> dcols(col_stride);
        const T* wk = k_node->data.data();
        for (std::size_t b = 0; b < n; ++b) {
          const T* dy = self.grad.data() + b * out_stride;
          if (needs_grad(k_node)) {
            const T* src = in_node->data.data() + b * in_stride;
            if (!g.is_pointwise()) {
              if (!cols) {  // kernel started requiring grad after the forward pass
                cols = std::make_shared<std::vector<T>>(n * col_stride);
                for (std::size_t q = 0; q < n; ++q)
                  im2col(in_node->data.data() + q * in_stride, g, cols->data() + q * col_stride);
              }
              src = cols->data() + b * col_stride;
            }
            gemm(false, true, cout, g.patch(), g.out_pixels(), dy, src,
                 k_node->grad_buffer().data(), true);
          }
          if (needs_grad(b_node)) {
            auto db = b_node->grad_buffer();
            for (std::size_t o = 0; o < cout; ++o) {
              T acc = 0;
              for (std::size_t p = 0; p < g.out_pixels(); ++p) acc += dy[o * g.out_pixels() + p];
              db[o] += acc;
            }
          }
          if (needs_grad(in_node)) {
            T* dx = in_node->grad_buffer().data() + b * in_stride;
            if (g.is_pointwise()) {
              gemm(true, false, g.patch(), g.out_pixels(), cout, wk, dy, dx, true);
            } else {
              gemm(true, false, g.patch(), g.out_pixels(), cout, wk, dy, dcols.data(), false);
              col2im_add(dcols.data(), g, dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                            const Tensor<T>& offsets) {
  require(input.ndim() == 4 && kernel.ndim() == 4 && offsets.ndim() == 4,
          "deformable_conv2d: expected 4-D tensors");
  require(input.dim(1) == kernel.dim(1),
          "deformable_conv2d: input " + shape_string(input.shape()) + " does not match kernel " +
              shape_string(kernel.shape()));
  const std::size_t d = kernel.dim(2);
  require(kernel.dim(3) == d && d % 2 == 1,
          "deformable_conv2d: kernel must be square with odd size, got " +
              shape_string(kernel.shape()));
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), taps = d * d, hw = h * w;
  require(offsets.dim(0) == n && offsets.dim(1) == 2 * taps && offsets.dim(2) == h &&
              offsets.dim(3) == w,
          "deformable_conv2d: offsets " + shape_string(offsets.shape()) + " must be [" +
              std::to_string(n) + "," + std::to_string(2 * taps) + "," + std::to_string(h) + "," +
              std::to_string(w) + "]");
  const auto r = static_cast<std::ptrdiff_t>(d / 2);

  // Sampling points of every (batch item, tap, pixel), reused by the backward pass.
  const std::size_t patch = cin * taps;
  auto points = std::make_shared<std::vector<BilinearPoint<T>>>();
  points->reserve(n * taps * hw);
  for (std::size_t b = 0; b < n; ++b) {
    const T* off = offsets.data().data() + b * 2 * taps * hw;
    for (std::size_t k = 0; k < taps; ++k) {
      const auto i = static_cast<std::ptrdiff_t>(k / d) - r;
      const auto j = static_cast<std::ptrdiff_t>(k % d) - r;
      for (std::size_t p = 0; p < hw; ++p) {
        const T py = T(static_cast<std::ptrdiff_t>(p / w) + i) + off[(2 * k) * hw + p];
        const T px = T(static_cast<std::ptrdiff_t>(p % w) + j) + off[(2 * k + 1) * hw + p];
        points->emplace_back(py, px, h, w);
      }
    }
  }

  std::vector<T> out(n * cout * hw);
  auto cols = std::make_shared<std::vector<T>>(n * patch * hw);
  for (std::size_t b = 0; b < n; ++b) {
    const T* x = input.data().data() + b * cin * hw;
    T* col = cols->data() + b * patch * hw;
    const BilinearPoint<T>* pts = points->data() + b * taps * hw;
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t k = 0; k < taps; ++k)
        for (std::size_t p = 0; p < hw; ++p) col[(c * taps + k) * hw + p] = pts[k * hw + p].read(x + c * hw);
    gemm(false, false, cout, hw, patch, kernel.data().data(), col, out.data() + b * cout * hw, false);
  }

  auto in_node = input.node();
  auto k_node = kernel.node();
  auto off_node = offsets.node();
  if (!grad_enabled()) {
    points.reset();
    cols.reset();
  }
  return make_result<T>(
      {n, cout, h, w}, std::move(out), "deformable_conv2d", {in_node, k_node, off_node},
      [=](const detail::Node<T>& self) {
        std::vector<T> dcols(patch * hw);
        for (std::size_t b = 0; b < n; ++b) {
          const T* x = in_node->data.data() + b * cin * hw;
          const T* dy = self.grad.data() + b * cout * hw;
          const BilinearPoint<T>* pts = points->data() + b * taps * hw;
          if (needs_grad(k_node))
            gemm(false, true, cout, patch, hw, dy, cols->data() + b * patch * hw, k_node->grad_buffer().data(), true);
          if (!needs_grad(in_node) && !needs_grad(off_node)) continue;
          gemm(true, false, patch, hw, cout, k_node->data.data(), dy, dcols.data(), false);
          T* dx = needs_grad(in_node) ? in_node->grad_buffer().data() + b * cin * hw : nullptr;
          T* doff = needs_grad(off_node) ? off_node->grad_buffer().data() + b * 2 * taps * hw : nullptr;
          for (std::size_t k = 0; k < taps; ++k) {
            for (std::size_t p = 0; p < hw; ++p) {
              const auto& pt = pts[k * hw + p];
              T gy = 0, gx = 0;
              for (std::size_t c = 0; c < cin; ++c) {
                const T gc = dcols[(c * taps + k) * hw + p];
                if (dx) pt.scatter(dx + c * hw, gc);
                if (doff) {
                  gy += gc * pt.d_dy(x + c * hw);
                  gx += gc * pt.d_dx(x + c * hw);
                }
              }
              if (doff) {
                doff[(2 * k) * hw + p] += gy;
                doff[(2 * k + 1) * hw + p] += gx;
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& coords) {
  require(map.ndim() == 4 && coords.ndim() == 3 && coords.dim(2) == 2 &&
              coords.dim(0) == map.dim(0),
          "bilinear_sample: map " + shape_string(map.shape()) + " and coords " +
              shape_string(coords.shape()) + " are incompatible");
  const std::size_t n = map.dim(0), c = map.dim(1), h = map.dim(2), w = map.dim(3);
  const std::size_t np = coords.dim(1), hw = h * w;
  std::vector<T> out(n * c * np);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < np; ++p) {
      const T* yx = coords.data().data() + (b * np + p) * 2;
      const BilinearPoint<T> pt(yx[0], yx[1], h, w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[(b * c + ch) * np + p] = pt.read(map.data().data() + (b * c + ch) * hw);
      }
    }
  }
  auto m_node = map.node();
  auto c_node = coords.node();
  return make_result<T>({n, c, np}, std::move(out), "bilinear_sample", {m_node, c_node},
                        [=](const detail::Node<T>& self) {
                          for (std::size_t b = 0; b < n; ++b) {
                            for (std::size_t p = 0; p < np; ++p) {
                              const T* yx = c_node->data.data() + (b * np + p) * 2;
                              const BilinearPoint<T> pt(yx[0], yx[1], h, w);
                              T gy = 0, gx = 0;
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                const T g = self.grad[(b * c + ch) * np + p];
                                const T* plane = m_node->data.data() + (b * c + ch) * hw;
                                if (needs_grad(m_node)) {
                                  pt.scatter(m_node->grad_buffer().data() + (b * c + ch) * hw, g);
                                }
                                gy += g * pt.d_dy(plane);
                                gx += g * pt.d_dx(plane);
                              }
                              if (needs_grad(c_node)) {
                                auto dc = c_node->grad_buffer();
                                dc[(b * np + p) * 2] += gy;
                                dc[(b * np + p) * 2 + 1] += gx;
                              }
                            }
                          }
                        });
}

#define UCS_INSTANTIATE_CONV(T)                                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Window2,     \
                            Window2);                                                          \
  template Tensor<T> deformable_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);

UCS_INSTANTIATE_CONV(float)
UCS_INSTANTIATE_CONV(double)

}  // namespace ucs
