#include "ucs/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ucs {

Image synthetic_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image img(h, w);

  const double gy = unit(rng) - 0.5, gx = unit(rng) - 0.5, base = 0.3 + 0.4 * unit(rng);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      img.at(y, x) = base + 0.3 * (gy * double(y) / double(h) + gx * double(x) / double(w));

  const std::size_t shapes = 3 + rng() % 4;
  for (std::size_t s = 0; s < shapes; ++s) {
    const double level = 0.1 + 0.8 * unit(rng);
    const double cy = unit(rng) * double(h), cx = unit(rng) * double(w);
    const double ry = (0.1 + 0.3 * unit(rng)) * double(h), rx = (0.1 + 0.3 * unit(rng)) * double(w);
    const bool disc = rng() % 2 == 0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = (double(y) - cy) / ry, dx = (double(x) - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) img.at(y, x) = level;
      }
    }
  }

  const double angle = unit(rng) * 3.14159265358979, freq = 0.3 + 0.5 * unit(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double t = freq * (ca * double(x) + sa * double(y));
      img.at(y, x) = std::clamp(img.at(y, x) + 0.05 * std::sin(t), 0.0, 1.0);
    }
  return img;
}

std::vector<Image> synthetic_patches(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_image(size, size, seed + i));
  return out;
}

}  // namespace ucs
