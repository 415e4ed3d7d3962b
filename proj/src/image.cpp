#include "ucs/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "ucs/errors.hpp"

namespace ucs {

unsigned char luma_byte(unsigned char r, unsigned char g, unsigned char b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<unsigned char>(std::min(255.0, std::floor(y + 0.5)));
}

unsigned char to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 1.0) return 255;
  return static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
}

namespace {

// Header token with '#' comments skipped.
std::size_t header_number(std::istream& is) {
  int c = is.get();
  while (true) {
    if (c == '#') {
      while (c != '\n' && c != std::char_traits<char>::eof()) c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  if (c == std::char_traits<char>::eof()) throw FormatError("image: truncated header");
  if (!std::isdigit(c)) throw FormatError("image: malformed header");
  std::size_t value = 0;
  while (std::isdigit(c)) {
    value = value * 10 + std::size_t(c - '0');
    if (value > (1u << 24)) throw FormatError("image: header value out of range");
    c = is.get();
  }
  if (c == std::char_traits<char>::eof()) throw FormatError("image: truncated header");
  if (!std::isspace(c)) throw FormatError("image: malformed header");
  return value;
}

}  // namespace

Image read_image(std::istream& is) {
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (is.gcount() != 2) throw FormatError("image: truncated header");
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError("image: only binary PGM (P5) and PPM (P6) are supported");
  const bool rgb = magic[1] == '6';
  const std::size_t w = header_number(is);
  const std::size_t h = header_number(is);
  const std::size_t maxval = header_number(is);
  if (w == 0 || h == 0) throw FormatError("image: zero dimension");
  if (maxval != 255) throw FormatError("image: only 8-bit images (maxval 255) are supported");

  const std::size_t channels = rgb ? 3 : 1;
  std::vector<unsigned char> raw(w * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw FormatError("image: truncated pixel data");

  Image img(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const unsigned char v = rgb ? luma_byte(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]) : raw[i];
    img.pixels[i] = double(v) / 255.0;
  }
  return img;
}

Image load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return read_image(is);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_pgm(std::ostream& os, const Image& img) {
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.size());
  std::transform(img.pixels.begin(), img.pixels.end(), raw.begin(), to_byte);
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void save_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_pgm(os, img);
  if (!os) throw std::runtime_error("failed writing " + path);
}

template <typename T>
Tensor<T> to_tensor(const Image& img) {
  std::vector<T> data(img.pixels.begin(), img.pixels.end());
  return Tensor<T>::from_data({1, 1, img.height, img.width}, std::move(data));
}

template <typename T>
Image from_tensor(const Tensor<T>& t, std::size_t batch_index) {
  if (t.ndim() != 4 || t.dim(1) != 1 || batch_index >= t.dim(0))
    throw ShapeError("from_tensor: expected [N,1,H,W], got " + shape_string(t.shape()));
  Image img(t.dim(2), t.dim(3));
  auto d = t.data();
  const std::size_t offset = batch_index * img.size();
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = double(d[offset + i]);
  return img;
}

std::vector<std::string> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error(dir + " is not a directory");
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm" || ext == ".ppm") out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template Tensor<float> to_tensor<float>(const Image&);
template Tensor<double> to_tensor<double>(const Image&);
template Image from_tensor(const Tensor<float>&, std::size_t);
template Image from_tensor(const Tensor<double>&, std::size_t);

}  // namespace ucs
