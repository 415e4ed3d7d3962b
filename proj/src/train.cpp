#include "ucs/train.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "ucs/errors.hpp"

namespace ucs {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(out)) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

}  // namespace

TrainConfig TrainConfig::parse(std::istream& is) {
  TrainConfig cfg;
  using Setter = std::function<void(TrainConfig&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"data_dir", [](TrainConfig& c, const std::string& v) { c.data_dir = v; }},
      {"out_dir", [](TrainConfig& c, const std::string& v) { c.out_dir = v; }},
      {"crop", [](TrainConfig& c, const std::string& v) { c.crop = parse_count(v); }},
      {"batch", [](TrainConfig& c, const std::string& v) { c.batch = parse_count(v); }},
      {"lr", [](TrainConfig& c, const std::string& v) { c.lr = parse_real(v); }},
      {"halve_every", [](TrainConfig& c, const std::string& v) { c.halve_every = parse_count(v); }},
      {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = parse_count(v); }},
      {"iters_per_epoch", [](TrainConfig& c, const std::string& v) { c.iters_per_epoch = parse_count(v); }},
      {"seed",
       [](TrainConfig& c, const std::string& v) {
         c.seed = parse_count(v);
         c.model.seed = c.seed;
       }},
      {"learn_phi", [](TrainConfig& c, const std::string& v) { c.learn_phi = parse_bool(v); }},
      {"clip_norm", [](TrainConfig& c, const std::string& v) { c.clip_norm = parse_real(v); }},
      {"K", [](TrainConfig& c, const std::string& v) { c.model.phases = parse_count(v); }},
      {"B", [](TrainConfig& c, const std::string& v) { c.model.block = parse_count(v); }},
      {"rate", [](TrainConfig& c, const std::string& v) { c.model.rate = parse_real(v); }},
      {"c", [](TrainConfig& c, const std::string& v) { c.model.channels = parse_count(v); }},
      {"Q", [](TrainConfig& c, const std::string& v) { c.model.febs = parse_count(v); }},
      {"d", [](TrainConfig& c, const std::string& v) { c.model.patch = parse_count(v); }},
      {"ssg", [](TrainConfig& c, const std::string& v) { c.model.ssg = parse_ssg_variant(v); }},
      {"nl", [](TrainConfig& c, const std::string& v) { c.model.nl = parse_nonlocal_kind(v); }},
      {"nl_subsample", [](TrainConfig& c, const std::string& v) { c.model.nl_subsample = parse_count(v); }},
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "train config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return parse(is);
}

void TrainConfig::validate() const {
  model.validate();
  if (crop == 0 || crop % model.block != 0)
    throw ConfigError("crop must be a positive multiple of B=" + std::to_string(model.block));
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (halve_every == 0) throw ConfigError("halve_every must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

TrainConfig TrainConfig::desk_scale() {
  TrainConfig cfg;
  cfg.crop = 33;
  cfg.batch = 2;
  cfg.model.phases = 3;
  cfg.model.channels = 8;
  cfg.model.febs = 1;
  return cfg;
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::ldexp(1.0, -static_cast<int>(epoch / cfg.halve_every));
}

template <typename T>
AdamState AdamState::for_params(const std::vector<Tensor<T>>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].numel() || state.m[p].size() != params[p].numel())
      throw ShapeError("adam_step: gradient " + std::to_string(p) + " does not match its parameter");
    for (double g : grads[p])
      if (!std::isfinite(g)) throw TrainingAborted("adam_step: non-finite gradient in parameter " + std::to_string(p));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = Tensor<T>(params[p]).mutable_data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
      w[i] = static_cast<T>(double(w[i]) - update);
    }
  }
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

// --- data ---------------------------------------------------------------------

Image rotate90(const Image& img, int k) {
  k = ((k % 4) + 4) % 4;
  Image out = img;
  for (int r = 0; r < k; ++r) {
    Image next(out.width, out.height);
    for (std::size_t y = 0; y < next.height; ++y)
      for (std::size_t x = 0; x < next.width; ++x) next.at(y, x) = out.at(x, out.width - 1 - y);
    out = std::move(next);
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, img.width - 1 - x);
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) out.at(y, x) = img.at(img.height - 1 - y, x);
  return out;
}

namespace {

Tensor<float> stack(const std::vector<Image>& patches) {
  const std::size_t h = patches.front().height, w = patches.front().width;
  std::vector<float> data;
  data.reserve(patches.size() * h * w);
  for (const auto& p : patches) {
    if (p.height != h || p.width != w) throw ShapeError("patch sizes differ within a batch");
    data.insert(data.end(), p.pixels.begin(), p.pixels.end());
  }
  return Tensor<float>::from_data({patches.size(), 1, h, w}, std::move(data));
}

}  // namespace

AugmentedPatchStream::AugmentedPatchStream(const std::string& dir, std::size_t crop, std::uint64_t seed,
                                           std::ostream* log)
    : crop_(crop), rng_(seed) {
  const auto files = list_images(dir);
  if (files.empty()) throw ConfigError("no PGM/PPM images in " + dir);
  for (const auto& f : files) {
    Image img = load_image(f);
    if (img.height < crop || img.width < crop) {
      if (log) *log << "warning: skipping " << f << " (" << img.height << "x" << img.width << " < crop " << crop << ")\n";
      continue;
    }
    images_.push_back(std::move(img));
  }
  if (images_.empty()) throw ConfigError("no image in " + dir + " is at least " + std::to_string(crop) + " pixels");
}

AugmentedPatchStream::AugmentedPatchStream(std::vector<Image> images, std::size_t crop, std::uint64_t seed)
    : crop_(crop), rng_(seed) {
  for (auto& img : images)
    if (img.height >= crop && img.width >= crop) images_.push_back(std::move(img));
  if (images_.empty()) throw ConfigError("no image is at least " + std::to_string(crop) + " pixels");
}

Image AugmentedPatchStream::next_patch() {
  const Image& src = images_[rng_() % images_.size()];
  const std::size_t y0 = rng_() % (src.height - crop_ + 1);
  const std::size_t x0 = rng_() % (src.width - crop_ + 1);
  Image patch(crop_, crop_);
  for (std::size_t y = 0; y < crop_; ++y)
    for (std::size_t x = 0; x < crop_; ++x) patch.at(y, x) = src.at(y0 + y, x0 + x);
  const int rotation = static_cast<int>(rng_() % 4);
  const bool hflip = rng_() % 2 == 1;
  const bool vflip = rng_() % 2 == 1;
  patch = rotate90(patch, rotation);
  if (hflip) patch = flip_horizontal(patch);
  if (vflip) patch = flip_vertical(patch);
  return patch;
}

Tensor<float> AugmentedPatchStream::next_batch(std::size_t batch) {
  std::vector<Image> patches;
  for (std::size_t i = 0; i < batch; ++i) patches.push_back(next_patch());
  return stack(patches);
}

FixedPatches::FixedPatches(std::vector<Image> patches) : patches_(std::move(patches)) {
  if (patches_.empty()) throw ConfigError("FixedPatches: empty patch list");
}

Tensor<float> FixedPatches::next_batch(std::size_t batch) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < batch; ++i) {
    out.push_back(patches_[cursor_]);
    cursor_ = (cursor_ + 1) % patches_.size();
  }
  return stack(out);
}

Tensor<float> FixedPatches::all() const { return stack(patches_); }

// --- training -------------------------------------------------------------------

Checkpoint<float> initial_checkpoint(const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint<float> ckpt;
  ckpt.config = cfg.model;
  ckpt.params = init_parameters<float>(cfg.model, cfg.model.seed);
  ckpt.op = make_operator<float>(cfg.model.block, cfg.model.rate,
                                 cfg.learn_phi ? MatrixKind::learned_init : MatrixKind::orthogonalized_random,
                                 cfg.model.seed);
  return ckpt;
}

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& history) {
  os << "step,epoch,lr,loss\n";
  os << std::setprecision(9);
  for (const auto& r : history) os << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << '\n';
}

namespace {

void write_outputs(const TrainConfig& cfg, const Checkpoint<float>& ckpt, const std::vector<LossRecord>& history) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  // Write-then-rename so an interrupted write never replaces the last good file.
  const auto tmp = dir / "checkpoint.dcsw.tmp";
  save_checkpoint((tmp).string(), ckpt);
  fs::rename(tmp, dir / "checkpoint.dcsw");
  std::ofstream csv(dir / "loss.csv");
  write_loss_csv(csv, history);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, PatchSource& data, const TrainOptions& options) {
  return train(cfg, data, initial_checkpoint(cfg), options);
}

TrainResult train(const TrainConfig& cfg, PatchSource& data, Checkpoint<float> start, const TrainOptions& options) {
  cfg.validate();
  TrainResult result;
  result.checkpoint = std::move(start);
  auto& ckpt = result.checkpoint;
  if (cfg.learn_phi) ckpt.op.phi.set_requires_grad(true);
  ckpt.op.learnable = cfg.learn_phi;

  std::vector<Tensor<float>> params = ckpt.params.trainable();
  if (cfg.learn_phi) params.push_back(ckpt.op.phi);
  AdamState state = AdamState::for_params(params);
  std::vector<std::vector<double>> grads(params.size());

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it) {
      const auto x = data.next_batch(cfg.batch);
      const auto m = sample(ckpt.op, x);
      const auto fr = forward(ckpt.config, ckpt.params, ckpt.op, m, Mode::train);
      const auto l = loss(fr.outputs, x);
      const double value = l.item();
      if (!std::isfinite(value))
        throw TrainingAborted("non-finite loss at step " + std::to_string(step + 1) + "; last good checkpoint kept");
      backward(l);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto g = params[p].grad();
        grads[p].assign(g.begin(), g.end());
        if (grads[p].empty()) grads[p].assign(params[p].numel(), 0.0);
        params[p].zero_grad();
      }
      clip_global_norm(grads, cfg.clip_norm);
      adam_step(params, grads, state, lr);
      ++step;
      result.history.push_back({step, epoch, lr, value});
      if (options.log && options.log_every > 0 && step % options.log_every == 0)
        *options.log << "step " << step << " epoch " << epoch << " lr " << lr << " loss " << value << std::endl;
    }
    if (options.write_files) write_outputs(cfg, ckpt, result.history);
  }
  if (options.write_files && cfg.epochs == 0) write_outputs(cfg, ckpt, result.history);
  return result;
}

template AdamState AdamState::for_params(const std::vector<Tensor<float>>&);
template AdamState AdamState::for_params(const std::vector<Tensor<double>>&);
template void adam_step(const std::vector<Tensor<float>>&, const std::vector<std::vector<double>>&, AdamState&, double);
template void adam_step(const std::vector<Tensor<double>>&, const std::vector<std::vector<double>>&, AdamState&,
                        double);

}  // namespace ucs
