#pragma once

#include <string>
#include <vector>

#include "ucs/image.hpp"

namespace ucs {

struct Psnr {
  double db = 0.0;
  bool capped = false;  // MSE == 0; db holds the cap
};

constexpr double kPsnrCap = 100.0;

double mse(const Image& a, const Image& b);

/// 10 log10(1 / MSE), peak 1.
Psnr psnr(const Image& a, const Image& b);

/// Mean local SSIM over all valid 11x11 Gaussian windows (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2. Throws ShapeError below 11x11.
double ssim(const Image& a, const Image& b);

/// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> ssim_window_1d();

}  // namespace ucs
