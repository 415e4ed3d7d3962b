#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ucs/tensor.hpp"

namespace ucs {

/// Grayscale image, row-major, nominal range [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }
};

/// ITU-R 601 luma of an 8-bit RGB triple, rounded half-up to a byte.
unsigned char luma_byte(unsigned char r, unsigned char g, unsigned char b);

/// Float to byte: clamp to [0, 1], then floor(v * 255 + 0.5).
unsigned char to_byte(double v);

/// Reads binary PGM (P5) or PPM (P6, converted to luma), maxval 255.
Image read_image(std::istream& is);
Image load_image(const std::string& path);

/// Writes binary PGM (P5).
void write_pgm(std::ostream& os, const Image& img);
void save_pgm(const std::string& path, const Image& img);

/// [1,1,H,W] tensor and back.
template <typename T>
Tensor<T> to_tensor(const Image& img);
template <typename T>
Image from_tensor(const Tensor<T>& t, std::size_t batch_index = 0);

/// All .pgm/.ppm files of a directory in lexicographic order.
std::vector<std::string> list_images(const std::string& dir);

}  // namespace ucs
