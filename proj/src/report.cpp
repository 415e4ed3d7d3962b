#include "ucs/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "ucs/ops.hpp"

namespace ucs {

double ReconstructionReport::mean_psnr() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr.db;
  return rows.empty() ? 0.0 : s / double(rows.size());
}

double ReconstructionReport::mean_ssim() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.ssim;
  return rows.empty() ? 0.0 : s / double(rows.size());
}

void ReconstructionReport::write_csv(std::ostream& os) const {
  os << "image,rate,ssg,nl,psnr_db,ssim\n" << std::setprecision(10);
  for (const auto& r : rows)
    os << r.image << ',' << r.rate << ',' << r.ssg << ',' << r.nl << ',' << r.psnr.db << (r.psnr.capped ? "*" : "")
       << ',' << r.ssim << '\n';
  if (!rows.empty())
    os << "mean," << rows.front().rate << ',' << rows.front().ssg << ',' << rows.front().nl << ',' << mean_psnr()
       << ',' << mean_ssim() << '\n';
  os << "# checkpoint_fnv1a64=" << checkpoint_hash << '\n';
  os << "# config " << config << '\n';
}

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return fnv1a64_hex(buf.str());
}

ImageEvaluation evaluate_image(Checkpoint<float>& ckpt, const Image& truth) {
  NoGradGuard no_grad;
  const auto m = sample(ckpt.op, pad_to_blocks(to_tensor<float>(truth), ckpt.config.block));
  const auto clamped = [](Image img) {
    for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
    return img;
  };
  ImageEvaluation out;
  out.reconstruction = clamped(from_tensor(reconstruct(ckpt, m)));
  out.psnr = psnr(out.reconstruction, truth);
  out.ssim = ssim(out.reconstruction, truth);
  out.initial_psnr =
      psnr(clamped(from_tensor(crop(initial_reconstruction(ckpt.op, m), truth.height, truth.width))), truth);
  return out;
}

}  // namespace ucs
