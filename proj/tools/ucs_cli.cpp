#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "ucs/errors.hpp"
#include "ucs/gradcheck_suite.hpp"
#include "ucs/ista.hpp"
#include "ucs/report.hpp"
#include "ucs/synthetic.hpp"
#include "ucs/train.hpp"

namespace fs = std::filesystem;
using namespace ucs;

namespace {

struct SampleArgs {
  std::string image, out, matrix = "learned", checkpoint;
  double rate = 0.0;
  std::size_t block = 33;
  std::uint64_t seed = 0;
};

int run_sample(const SampleArgs& a) {
  const auto img = load_image(a.image);
  SamplingOperator<float> op;
  if (!a.checkpoint.empty()) {
    auto ck = load_checkpoint<float>(a.checkpoint);
    if (ck.config.block != a.block || ck.config.measurements() != measurement_count(a.block, a.rate))
      throw ConfigError("checkpoint was trained with B=" + std::to_string(ck.config.block) +
                        ", n_B=" + std::to_string(ck.config.measurements()));
    op = ck.op;
  } else {
    const auto kind = a.matrix == "learned" ? MatrixKind::learned_init : MatrixKind::orthogonalized_random;
    op = make_operator<float>(a.block, a.rate, kind, a.seed);
  }
  MeasurementSet<float> m;
  {
    NoGradGuard no_grad;
    m = sample(op, pad_to_blocks(to_tensor<float>(img), a.block));
  }
  save_measurements(a.out, m);
  std::cout << "n_B=" << m.measurements() << " blocks=" << m.blocks_y * m.blocks_x << " (" << m.blocks_y << "x"
            << m.blocks_x << ") image=" << img.height << "x" << img.width << " -> " << a.out << "\n";
  return 0;
}

int run_reconstruct(const std::string& measurements, const std::string& checkpoint, const std::string& out) {
  const auto m = load_measurements<float>(measurements);
  auto ck = load_checkpoint<float>(checkpoint);
  const auto img = from_tensor(reconstruct(ck, m));
  save_pgm(out, img);
  std::cout << "reconstructed " << img.height << "x" << img.width << " with " << ck.config.describe() << " -> "
            << out << "\n";
  return 0;
}

TrainResult train_from_config(const TrainConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("train config: data_dir is required");
  AugmentedPatchStream data(cfg.data_dir, cfg.crop, cfg.seed, &std::cerr);
  std::cout << "training " << cfg.model.describe() << " on " << data.image_count() << " images, "
            << parameter_count(cfg.model) << " parameters\n";
  return train(cfg, data, TrainOptions{true, &std::cout, 100});
}

int run_train(const std::string& config) {
  const auto cfg = TrainConfig::load(config);
  const auto result = train_from_config(cfg);
  if (!result.history.empty()) std::cout << "final loss " << result.history.back().loss << "\n";
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "checkpoint.dcsw").string() << " and loss.csv\n";
  return 0;
}

ReconstructionReport evaluate_dataset(const std::string& dataset, const std::string& checkpoint,
                                      double* mean_initial_psnr) {
  const auto files = list_images(dataset);
  if (files.empty()) throw ConfigError("no PGM/PPM images in " + dataset);
  auto ck = load_checkpoint<float>(checkpoint);
  ReconstructionReport report;
  report.checkpoint_hash = file_hash(checkpoint);
  report.config = ck.config.describe();
  double initial = 0.0;
  for (const auto& f : files) {
    const auto ev = evaluate_image(ck, load_image(f));
    report.rows.push_back({fs::path(f).filename().string(), ck.config.rate, to_string(ck.config.ssg),
                           to_string(ck.config.nl), ev.psnr, ev.ssim});
    initial += ev.initial_psnr.db;
  }
  if (mean_initial_psnr) *mean_initial_psnr = initial / double(files.size());
  return report;
}

void write_report(const std::string& path, const ReconstructionReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  report.write_csv(os);
}

int run_eval(const std::string& dataset, const std::string& checkpoint, const std::string& out) {
  double initial = 0.0;
  const auto report = evaluate_dataset(dataset, checkpoint, &initial);
  write_report(out, report);
  std::cout << std::fixed << std::setprecision(3) << report.rows.size() << " images: mean PSNR "
            << report.mean_psnr() << " dB (initial reconstruction " << initial << " dB), mean SSIM "
            << report.mean_ssim() << " -> " << out << "\n";
  return 0;
}

struct BaselineArgs {
  std::string image, out, trace;
  double rate = 0.0;
  std::size_t iters = 100, block = 33;
  std::uint64_t seed = 0;
  std::optional<double> lambda, rho;
};

int run_baseline(const BaselineArgs& a) {
  const auto img = load_image(a.image);
  const auto op = make_operator<double>(a.block, a.rate, MatrixKind::orthogonalized_random, a.seed);
  const double rho = a.rho.value_or(default_step(op));
  double lambda = 0.0;
  if (a.lambda) {
    lambda = *a.lambda;
  } else {
    // Tuned on a held-out synthetic image, never on the input itself.
    const auto validation = to_tensor<double>(synthetic_image(2 * a.block, 2 * a.block, a.seed + 1));
    lambda = tune_lambda(op, validation, rho, a.iters, default_lambda_grid());
  }
  const auto m = sample(op, pad_to_blocks(to_tensor<double>(img), a.block));
  const auto res = ista_reconstruct(op, m, IstaConfig{rho, lambda, a.iters});
  auto rec = from_tensor(crop(res.image, img.height, img.width));
  for (auto& v : rec.pixels) v = std::clamp(v, 0.0, 1.0);
  save_pgm(a.out, rec);
  std::ofstream trace(a.trace);
  if (!trace) throw std::runtime_error("cannot open " + a.trace + " for writing");
  trace << "iter,fidelity\n" << std::setprecision(12);
  for (std::size_t k = 0; k < res.trace.size(); ++k) trace << k << ',' << res.trace[k] << '\n';
  std::cout << std::setprecision(6) << "ista rho=" << rho << " lambda=" << lambda << " iters=" << a.iters
            << ": PSNR " << psnr(rec, img).db << " dB, SSIM " << ssim(rec, img) << " -> " << a.out << "\n";
  return 0;
}

int run_gradcheck(bool full, std::size_t samples, std::size_t seeds) {
  auto cases = operation_cases();
  for (auto& c : model_cases(full)) cases.push_back(std::move(c));
  bool ok = true;
  for (const auto& o : run_gradcheck_suite(cases, samples, seeds, 1e-4)) {
    ok = ok && o.passed;
    std::cout << (o.passed ? "PASS " : "FAIL ") << o.name << " max_rel=" << std::scientific << std::setprecision(2)
              << o.max_rel_error << std::defaultfloat;
    if (!o.passed)
      std::cout << " failing=" << o.failing_probes << "/" << o.probes << " one_sided_match=" << o.one_sided_matches
                << " worst " << o.worst;
    std::cout << "\n";
  }
  return ok ? 0 : 1;
}

struct AblateArgs {
  std::vector<std::string> ssg{"full"}, nl{"dinlm"};
  std::string config, dataset, out;
};

int run_ablate(const AblateArgs& a) {
  const auto base = TrainConfig::load(a.config);
  const std::string dataset = a.dataset.empty() ? base.data_dir : a.dataset;
  std::ofstream summary(a.out);
  if (!summary) throw std::runtime_error("cannot open " + a.out + " for writing");
  summary << "ssg,nl,mean_psnr_db,mean_ssim,checkpoint_fnv1a64\n" << std::setprecision(10);
  for (const auto& s : a.ssg) {
    for (const auto& n : a.nl) {
      auto cfg = base;
      cfg.model.ssg = parse_ssg_variant(s);
      cfg.model.nl = parse_nonlocal_kind(n);
      cfg.out_dir = (fs::path(base.out_dir) / (s + "_" + n)).string();
      train_from_config(cfg);
      const auto ckpt = (fs::path(cfg.out_dir) / "checkpoint.dcsw").string();
      const auto report = evaluate_dataset(dataset, ckpt, nullptr);
      write_report((fs::path(cfg.out_dir) / "report.csv").string(), report);
      summary << s << ',' << n << ',' << report.mean_psnr() << ',' << report.mean_ssim() << ','
              << report.checkpoint_hash << '\n';
      std::cout << s << "/" << n << ": mean PSNR " << report.mean_psnr() << " dB, mean SSIM "
                << report.mean_ssim() << "\n";
    }
  }
  return 0;
}

int run_synth(const std::string& dir, std::size_t count, std::size_t size, std::uint64_t seed) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream name;
    name << "synth_" << std::setw(3) << std::setfill('0') << i << ".pgm";
    save_pgm((fs::path(dir) / name.str()).string(), synthetic_image(size, size, seed + i));
  }
  std::cout << "wrote " << count << " images of " << size << "x" << size << " to " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep-unfolded compressed sensing: sampling, reconstruction, training and evaluation"};
  app.require_subcommand(1);

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "Block-sample an image into a measurement file");
  sample_cmd->add_option("--image", sa.image, "PGM/PPM input")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--rate", sa.rate, "Sampling rate in (0, 1]")->required();
  sample_cmd->add_option("--block", sa.block, "Block size B")->capture_default_str();
  sample_cmd->add_option("--matrix", sa.matrix, "learned | random")
      ->check(CLI::IsMember({"learned", "random"}))
      ->capture_default_str();
  sample_cmd->add_option("--seed", sa.seed, "Matrix seed")->capture_default_str();
  sample_cmd->add_option("--checkpoint", sa.checkpoint, "Use the sampling matrix stored in this checkpoint")
      ->check(CLI::ExistingFile);
  sample_cmd->add_option("--out", sa.out, "Output .dcsm")->required();

  std::string rec_m, rec_c, rec_out;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Reconstruct an image from measurements");
  rec_cmd->add_option("--measurements", rec_m)->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--checkpoint", rec_c)->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--out", rec_out, "Output PGM")->required();

  std::string train_cfg;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a key=value config");
  train_cmd->add_option("--config", train_cfg)->required()->check(CLI::ExistingFile);

  std::string ev_data, ev_ckpt, ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM report over a directory of images");
  eval_cmd->add_option("--dataset", ev_data)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev_out, "Report CSV")->required();

  BaselineArgs ba;
  auto* base_cmd = app.add_subcommand("baseline", "ISTA with blockwise DCT soft thresholding");
  base_cmd->add_option("--image", ba.image)->required()->check(CLI::ExistingFile);
  base_cmd->add_option("--rate", ba.rate)->required();
  base_cmd->add_option("--iters", ba.iters)->capture_default_str();
  base_cmd->add_option("--block", ba.block)->capture_default_str();
  base_cmd->add_option("--seed", ba.seed)->capture_default_str();
  base_cmd->add_option("--lambda", ba.lambda, "Threshold weight; tuned on a synthetic image when omitted");
  base_cmd->add_option("--rho", ba.rho, "Step size; 0.9 / sigma_max^2 when omitted");
  base_cmd->add_option("--out", ba.out)->required();
  base_cmd->add_option("--trace", ba.trace, "Per-iteration fidelity CSV")->required();

  bool gc_full = false;
  std::size_t gc_samples = 100, gc_seeds = 10;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and the model");
  gc_cmd->add_flag("--full", gc_full, "Model check over every step-map and non-local variant");
  gc_cmd->add_option("--samples", gc_samples, "Probes per seed")->capture_default_str();
  gc_cmd->add_option("--seeds", gc_seeds)->capture_default_str();

  AblateArgs aa;
  auto* abl_cmd = app.add_subcommand("ablate", "Train and evaluate each step-map / non-local variant");
  abl_cmd->add_option("--ssg", aa.ssg, "full,block,global,fixed")->delimiter(',')->capture_default_str();
  abl_cmd->add_option("--nl", aa.nl, "dinlm,nlm,none")->delimiter(',')->capture_default_str();
  abl_cmd->add_option("--config", aa.config, "Base train config")->required()->check(CLI::ExistingFile);
  abl_cmd->add_option("--dataset", aa.dataset, "Evaluation images (default: data_dir)")->check(CLI::ExistingDirectory);
  abl_cmd->add_option("--out", aa.out, "Summary CSV")->required();

  std::string syn_dir;
  std::size_t syn_count = 8, syn_size = 99;
  std::uint64_t syn_seed = 0;
  auto* syn_cmd = app.add_subcommand("synth", "Write synthetic piecewise-smooth test images");
  syn_cmd->add_option("--out", syn_dir)->required();
  syn_cmd->add_option("--count", syn_count)->capture_default_str();
  syn_cmd->add_option("--size", syn_size)->capture_default_str();
  syn_cmd->add_option("--seed", syn_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*sample_cmd) return run_sample(sa);
    if (*rec_cmd) return run_reconstruct(rec_m, rec_c, rec_out);
    if (*train_cmd) return run_train(train_cfg);
    if (*eval_cmd) return run_eval(ev_data, ev_ckpt, ev_out);
    if (*base_cmd) return run_baseline(ba);
    if (*gc_cmd) return run_gradcheck(gc_full, gc_samples, gc_seeds);
    if (*abl_cmd) return run_ablate(aa);
    if (*syn_cmd) return run_synth(syn_dir, syn_count, syn_size, syn_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
