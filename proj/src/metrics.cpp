#include "ucs/metrics.hpp"

#include <cmath>

namespace ucs {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_same(const Image& a, const Image& b, const char* who) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError(std::string(who) + ": image sizes differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
}

// Valid separable filtering with the 11-tap window: (H-10) x (W-10).
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += taps[k] * src[y * w + x + k];
      rows[y * ow + x] = s;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += taps[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  check_same(a, b, "mse");
  if (a.size() == 0) throw ShapeError("mse: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    s += d * d;
  }
  return s / double(a.size());
}

Psnr psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e == 0.0) return {kPsnrCap, true};
  return {std::min(kPsnrCap, 10.0 * std::log10(1.0 / e)), false};
}

std::vector<double> ssim_window_1d() {
  std::vector<double> taps(kWindow);
  double total = 0.0;
  const double center = double(kWindow / 2);
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = double(i) - center;
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

double ssim(const Image& a, const Image& b) {
  check_same(a, b, "ssim");
  if (a.height < kWindow || a.width < kWindow)
    throw ShapeError("ssim: images must be at least 11x11");
  const std::size_t h = a.height, w = a.width;
  const auto taps = ssim_window_1d();
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a.pixels[i] * a.pixels[i];
    bb[i] = b.pixels[i] * b.pixels[i];
    ab[i] = a.pixels[i] * b.pixels[i];
  }
  const auto mu_a = filter_valid(a.pixels, h, w, taps);
  const auto mu_b = filter_valid(b.pixels, h, w, taps);
  const auto e_aa = filter_valid(aa, h, w, taps);
  const auto e_bb = filter_valid(bb, h, w, taps);
  const auto e_ab = filter_valid(ab, h, w, taps);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return total / double(mu_a.size());
}

}  // namespace ucs
