#include "ucs/sampling.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.hpp"
#include "ucs/errors.hpp"
#include "ucs/ops.hpp"

namespace ucs {

namespace {

constexpr char kMeasurementMagic[] = "DCSM";
constexpr std::uint8_t kMeasurementVersion = 1;

std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

template <typename T>
void check_blocked(const char* op, const SamplingOperator<T>& sop, const Tensor<T>& image) {
  if (image.ndim() != 4 || image.dim(1) != 1) {
    throw ShapeError(std::string(op) + ": expected [N,1,H,W] image, got " + shape_string(image.shape()));
  }
  if (image.dim(2) % sop.block != 0 || image.dim(3) % sop.block != 0) {
    throw ShapeError(std::string(op) + ": image " + shape_string(image.shape()) +
                     " is not a multiple of block size " + std::to_string(sop.block));
  }
}

template <typename T>
void check_measurements(const SamplingOperator<T>& sop, const MeasurementSet<T>& m) {
  if (m.block != sop.block || m.measurements() != sop.measurements) {
    throw ShapeError("measurement set (B=" + std::to_string(m.block) + ", n_B=" +
                     std::to_string(m.measurements()) + ") does not match operator (B=" +
                     std::to_string(sop.block) + ", n_B=" + std::to_string(sop.measurements) + ")");
  }
}

}  // namespace

std::size_t measurement_count(std::size_t block, double rate) {
  if (block < 1) throw ConfigError("block size must be >= 1");
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("sampling rate must lie in (0, 1]");
  const double exact = rate * double(block * block);
  // Absorb representation error so 0.29 * 100 counts as 29.
  const auto n = static_cast<std::size_t>(std::floor(exact + 1e-9));
  if (n == 0) {
    throw ConfigError("rate " + std::to_string(rate) + " yields no measurement for block size " +
                      std::to_string(block));
  }
  return std::min(n, block * block);
}

template <typename T>
SamplingOperator<T> make_operator(std::size_t block, double rate, MatrixKind kind, std::uint64_t seed) {
  const std::size_t nb = measurement_count(block, rate);
  const std::size_t dim = block * block;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Draw phi^T (dim x nb) column by column; QR gives orthonormal columns.
  Eigen::MatrixXd g(dim, nb);
  for (Eigen::Index r = 0; r < g.cols(); ++r) {
    for (Eigen::Index c = 0; c < g.rows(); ++c) g(c, r) = gauss(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, nb);
  std::vector<T> data(nb * dim);
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t j = 0; j < dim; ++j) data[i * dim + j] = T(q(Eigen::Index(j), Eigen::Index(i)));
  }
  const bool learnable = kind == MatrixKind::learned_init;
  return SamplingOperator<T>{block, rate, nb, Tensor<T>::from_data({nb, dim}, std::move(data), learnable),
                             learnable};
}

template <typename T>
SamplingOperator<T> operator_from_matrix(std::size_t block, double rate, Tensor<T> phi, bool learnable) {
  const std::size_t nb = measurement_count(block, rate);
  if (phi.ndim() != 2 || phi.dim(0) != nb || phi.dim(1) != block * block) {
    throw ShapeError("sampling matrix " + shape_string(phi.shape()) + " must be [" +
                     std::to_string(nb) + "," + std::to_string(block * block) + "]");
  }
  if (!phi.all_finite()) throw FormatError("sampling matrix contains non-finite entries");
  if (phi.is_leaf()) phi.set_requires_grad(learnable);
  return SamplingOperator<T>{block, rate, nb, std::move(phi), learnable};
}

template <typename T>
PaddedImage<T> pad_to_blocks(const Tensor<T>& image, std::size_t block) {
  if (image.ndim() != 4 || image.dim(2) < 1 || image.dim(3) < 1) {
    throw ShapeError("pad_to_blocks: expected [N,C,H,W] image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(2), w = image.dim(3);
  const std::size_t ph = (h + block - 1) / block * block;
  const std::size_t pw = (w + block - 1) / block * block;
  if (ph == h && pw == w) return {image, h, w};
  const std::size_t planes = image.dim(0) * image.dim(1);
  std::vector<T> out(planes * ph * pw);
  auto src = image.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = reflect_index(y, h);
      for (std::size_t x = 0; x < pw; ++x) {
        out[(p * ph + y) * pw + x] = src[(p * h + sy) * w + reflect_index(x, w)];
      }
    }
  }
  return {Tensor<T>::from_data({image.dim(0), image.dim(1), ph, pw}, std::move(out)), h, w};
}

template <typename T>
Tensor<T> crop(const Tensor<T>& image, std::size_t h, std::size_t w) {
  if (image.ndim() != 4 || h > image.dim(2) || w > image.dim(3)) {
    throw ShapeError("crop: " + std::to_string(h) + "x" + std::to_string(w) + " exceeds " +
                     shape_string(image.shape()));
  }
  if (h == image.dim(2) && w == image.dim(3)) return image;
  const std::size_t planes = image.dim(0) * image.dim(1), iw = image.dim(3), ih = image.dim(2);
  std::vector<T> out(planes * h * w);
  auto src = image.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(p * h + y) * w + x] = src[(p * ih + y) * iw + x];
    }
  }
  return Tensor<T>::from_data({image.dim(0), image.dim(1), h, w}, std::move(out));
}

template <typename T>
MeasurementSet<T> sample(const SamplingOperator<T>& op, const Tensor<T>& image) {
  check_blocked("sample", op, image);
  const auto kernel = reshape(op.phi, {op.measurements, 1, op.block, op.block});
  MeasurementSet<T> m;
  m.values = conv2d(image, kernel, Tensor<T>{}, {op.block, op.block}, {0, 0});
  m.block = op.block;
  m.rate = op.rate;
  m.blocks_y = image.dim(2) / op.block;
  m.blocks_x = image.dim(3) / op.block;
  m.original_h = image.dim(2);
  m.original_w = image.dim(3);
  return m;
}

template <typename T>
MeasurementSet<T> sample(const SamplingOperator<T>& op, const PaddedImage<T>& padded) {
  auto m = sample(op, padded.image);
  m.original_h = padded.original_h;
  m.original_w = padded.original_w;
  return m;
}

template <typename T>
Tensor<T> transpose_sample(const SamplingOperator<T>& op, const Tensor<T>& values) {
  if (values.ndim() != 4 || values.dim(1) != op.measurements) {
    throw ShapeError("transpose_sample: measurements " + shape_string(values.shape()) +
                     " do not carry n_B=" + std::to_string(op.measurements) + " channels");
  }
  const auto kernel = reshape(transpose(op.phi), {op.block_pixels(), op.measurements, 1, 1});
  return depth_to_space(conv2d(values, kernel, Tensor<T>{}), op.block);
}

template <typename T>
Tensor<T> initial_reconstruction(const SamplingOperator<T>& op, const MeasurementSet<T>& m) {
  check_measurements(op, m);
  return transpose_sample(op, m.values);
}

template <typename T>
Tensor<T> apply_fidelity_gradient(const SamplingOperator<T>& op, const Tensor<T>& x,
                                  const MeasurementSet<T>& m) {
  check_measurements(op, m);
  check_blocked("apply_fidelity_gradient", op, x);
  if (x.dim(2) != m.padded_h() || x.dim(3) != m.padded_w() || x.dim(0) != m.values.dim(0)) {
    throw ShapeError("apply_fidelity_gradient: image " + shape_string(x.shape()) +
                     " does not match measurement grid " + shape_string(m.values.shape()));
  }
  const auto residual = sub(sample(op, x).values, m.values);
  return transpose_sample(op, residual);
}

template <typename T>
void write_measurements(std::ostream& os, const MeasurementSet<T>& m) {
  if (m.values.dim(0) != 1) throw ShapeError("write_measurements: only single-image sets are stored");
  detail::LittleEndianWriter out(os);
  out.put_bytes(std::string(kMeasurementMagic, 4));
  out.put(kMeasurementVersion);
  out.put(static_cast<std::uint16_t>(m.block));
  out.put(static_cast<std::uint16_t>(m.measurements()));
  out.put(static_cast<std::uint32_t>(m.original_h));
  out.put(static_cast<std::uint32_t>(m.original_w));
  out.put(static_cast<std::uint16_t>(m.blocks_y));
  out.put(static_cast<std::uint16_t>(m.blocks_x));
  const std::size_t nb = m.measurements(), cells = m.blocks_y * m.blocks_x;
  auto v = m.values.data();
  // Block-major on disk, channel-major in memory.
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t i = 0; i < nb; ++i) out.put_f32(static_cast<float>(v[i * cells + cell]));
  }
}

template <typename T>
MeasurementSet<T> read_measurements(std::istream& is) {
  detail::LittleEndianReader in(is, "DCSM");
  if (in.get_bytes(4) != std::string(kMeasurementMagic, 4)) in.fail("bad magic");
  if (in.get<std::uint8_t>() != kMeasurementVersion) in.fail("unsupported version");
  MeasurementSet<T> m;
  m.block = in.get<std::uint16_t>();
  const std::size_t nb = in.get<std::uint16_t>();
  m.original_h = in.get<std::uint32_t>();
  m.original_w = in.get<std::uint32_t>();
  m.blocks_y = in.get<std::uint16_t>();
  m.blocks_x = in.get<std::uint16_t>();
  if (m.block == 0 || nb == 0 || nb > m.block * m.block) in.fail("invalid block/measurement counts");
  if (m.original_h > m.padded_h() || m.original_w > m.padded_w() ||
      m.original_h + m.block <= m.padded_h() || m.original_w + m.block <= m.padded_w()) {
    in.fail("original dimensions inconsistent with block grid");
  }
  m.rate = double(nb) / double(m.block * m.block);
  const std::size_t cells = m.blocks_y * m.blocks_x;
  std::vector<T> v(nb * cells);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t i = 0; i < nb; ++i) {
      const float f = in.get_f32();
      if (!std::isfinite(f)) in.fail("non-finite measurement");
      v[i * cells + cell] = T(f);
    }
  }
  if (!in.at_end()) in.fail("trailing bytes");
  m.values = Tensor<T>::from_data({1, nb, m.blocks_y, m.blocks_x}, std::move(v));
  return m;
}

template <typename T>
void save_measurements(const std::string& path, const MeasurementSet<T>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_measurements(os, m);
  if (!os) throw std::runtime_error("failed writing " + path);
}

template <typename T>
MeasurementSet<T> load_measurements(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_measurements<T>(is);
}

#define UCS_INSTANTIATE_SAMPLING(T)                                                              \
  template struct SamplingOperator<T>;                                                           \
  template SamplingOperator<T> make_operator<T>(std::size_t, double, MatrixKind, std::uint64_t); \
  template SamplingOperator<T> operator_from_matrix(std::size_t, double, Tensor<T>, bool);       \
  template PaddedImage<T> pad_to_blocks(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> crop(const Tensor<T>&, std::size_t, std::size_t);                           \
  template MeasurementSet<T> sample(const SamplingOperator<T>&, const Tensor<T>&);               \
  template MeasurementSet<T> sample(const SamplingOperator<T>&, const PaddedImage<T>&);          \
  template Tensor<T> transpose_sample(const SamplingOperator<T>&, const Tensor<T>&);             \
  template Tensor<T> initial_reconstruction(const SamplingOperator<T>&, const MeasurementSet<T>&); \
  template Tensor<T> apply_fidelity_gradient(const SamplingOperator<T>&, const Tensor<T>&,        \
                                             const MeasurementSet<T>&);                          \
  template void write_measurements(std::ostream&, const MeasurementSet<T>&);                     \
  template MeasurementSet<T> read_measurements<T>(std::istream&);                                \
  template void save_measurements(const std::string&, const MeasurementSet<T>&);                 \
  template MeasurementSet<T> load_measurements<T>(const std::string&);

UCS_INSTANTIATE_SAMPLING(float)
UCS_INSTANTIATE_SAMPLING(double)

}  // namespace ucs
