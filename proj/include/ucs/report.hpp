#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ucs/image.hpp"
#include "ucs/metrics.hpp"
#include "ucs/model.hpp"

namespace ucs {

struct ReportRow {
  std::string image;
  double rate = 0.0;
  std::string ssg;
  std::string nl;
  Psnr psnr;
  double ssim = 0.0;
};

struct ReconstructionReport {
  std::vector<ReportRow> rows;
  std::string checkpoint_hash;  // 16 hex digits
  std::string config;           // ModelConfig::describe()

  double mean_psnr() const;
  double mean_ssim() const;
  /// Header `image,rate,ssg,nl,psnr_db,ssim`, one row per image, then a
  /// `mean` row and '#'-prefixed provenance lines. Capped PSNR values are
  /// written as the cap followed by '*'.
  void write_csv(std::ostream& os) const;
};

/// FNV-1a 64-bit over a byte string, as 16 lowercase hex digits.
std::string fnv1a64_hex(const std::string& bytes);
/// Same over the contents of a file.
std::string file_hash(const std::string& path);

struct ImageEvaluation {
  Image reconstruction;  // cropped and clamped to [0, 1]
  Psnr psnr;
  double ssim = 0.0;
  Psnr initial_psnr;  // of the clamped x^(0) = phi^T y
};

/// Samples `truth` with the checkpoint's matrix, reconstructs, and scores the
/// crop against `truth`.
ImageEvaluation evaluate_image(Checkpoint<float>& ckpt, const Image& truth);

}  // namespace ucs
