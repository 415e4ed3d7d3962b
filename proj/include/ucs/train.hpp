#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ucs/image.hpp"
#include "ucs/model.hpp"

namespace ucs {

/// Raised when the loss or a gradient stops being finite.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string data_dir;  // directory of PGM/PPM images
  std::string out_dir = ".";
  std::size_t crop = 99;
  std::size_t batch = 2;
  double lr = 1e-4;
  std::size_t halve_every = 30;
  std::size_t epochs = 1;
  std::size_t iters_per_epoch = 100;
  std::uint64_t seed = 0;
  bool learn_phi = true;
  double clip_norm = 10.0;
  ModelConfig model;

  /// key=value lines, '#' comments. Unknown keys and malformed values throw
  /// ConfigError naming the line.
  static TrainConfig parse(std::istream& is);
  static TrainConfig load(const std::string& path);
  void validate() const;
  /// Desk-scale profile: K=3, c=8, Q=1, crop 33, batch 2.
  static TrainConfig desk_scale();
};

/// lr * 0.5^floor(epoch / halve_every).
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  template <typename T>
  static AdamState for_params(const std::vector<Tensor<T>>& params);
};

/// Standard bias-corrected Adam on each parameter with the matching gradient
/// vector. Throws TrainingAborted naming the tensor when a gradient is not
/// finite; nothing is updated in that case.
template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr);

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before scaling.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

// --- data ---------------------------------------------------------------------

/// Rotation by k * 90 degrees counter-clockwise.
Image rotate90(const Image& img, int k);
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);

class PatchSource {
 public:
  virtual ~PatchSource() = default;
  /// [batch, 1, crop, crop] in [0, 1].
  virtual Tensor<float> next_batch(std::size_t batch) = 0;
};

/// Random crops of the images in a directory, each with a uniformly random
/// rotation and independent horizontal / vertical flips.
class AugmentedPatchStream : public PatchSource {
 public:
  /// Undersized images are skipped with a warning on `log`; throws ConfigError
  /// if no usable image remains.
  AugmentedPatchStream(const std::string& dir, std::size_t crop, std::uint64_t seed, std::ostream* log = nullptr);
  AugmentedPatchStream(std::vector<Image> images, std::size_t crop, std::uint64_t seed);

  Image next_patch();
  Tensor<float> next_batch(std::size_t batch) override;
  std::size_t image_count() const { return images_.size(); }

 private:
  std::vector<Image> images_;
  std::size_t crop_;
  std::mt19937_64 rng_;
};

/// Cycles through a fixed patch list in order.
class FixedPatches : public PatchSource {
 public:
  explicit FixedPatches(std::vector<Image> patches);
  Tensor<float> next_batch(std::size_t batch) override;
  Tensor<float> all() const;

 private:
  std::vector<Image> patches_;
  std::size_t cursor_ = 0;
};

// --- training -------------------------------------------------------------------

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainOptions {
  /// Write <out_dir>/loss.csv and <out_dir>/checkpoint.dcsw after every epoch.
  bool write_files = true;
  std::ostream* log = nullptr;
  std::size_t log_every = 100;
};

struct TrainResult {
  Checkpoint<float> checkpoint;
  std::vector<LossRecord> history;
};

/// Fresh model from cfg.model (seeded by cfg.model.seed), sampling matrix
/// from the same seed. The matrix is trainable iff cfg.learn_phi.
Checkpoint<float> initial_checkpoint(const TrainConfig& cfg);

/// Runs epochs x iters_per_epoch Adam steps on the multi-phase loss with
/// measurements drawn from the current phi each step.
TrainResult train(const TrainConfig& cfg, PatchSource& data, const TrainOptions& options = {});
/// Continues from an existing checkpoint.
TrainResult train(const TrainConfig& cfg, PatchSource& data, Checkpoint<float> start,
                  const TrainOptions& options = {});

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& history);

}  // namespace ucs
