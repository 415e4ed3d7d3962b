#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ucs/errors.hpp"
#include "ucs/synthetic.hpp"
#include "ucs/train.hpp"

using namespace ucs;
namespace fs = std::filesystem;

namespace {

TrainConfig parse(const std::string& text) {
  std::istringstream is(text);
  return TrainConfig::parse(is);
}

Image ramp(std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(y, x) = double(y * w + x);
  return img;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ucs_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("train config parses keys, comments and blank lines") {
  const auto cfg = parse("# desk run\n\nK = 3\nc=8\nQ=1\nrate=0.1\nssg=block\nnl=nlm\nlearn_phi=false\n"
                         "crop=66\nbatch=4\nlr=2e-4\nhalve_every=5\nepochs=7\n");
  CHECK(cfg.model.phases == 3);
  CHECK(cfg.model.channels == 8);
  CHECK(cfg.model.rate == 0.1);
  CHECK(cfg.model.ssg == SsgVariant::block);
  CHECK(cfg.model.nl == NonLocalKind::nlm);
  CHECK_FALSE(cfg.learn_phi);
  CHECK(cfg.crop == 66);
  CHECK(cfg.lr == 2e-4);
  CHECK(cfg.epochs == 7);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("train config errors name the line") {
  for (const std::string bad : {"K=3\nfoo=1\n", "K=three\n", "K 3\n", "learn_phi=maybe\n", "lr=nan\n", "ssg=pixel\n"}) {
    try {
      parse(bad);
      FAIL("accepted: " << bad);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(parse("crop=40\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse("batch=0\n").validate(), ConfigError);
  CHECK_THROWS_AS(TrainConfig::load("/nonexistent/train.cfg"), std::runtime_error);
}

TEST_CASE("learning rate halves every halve_every epochs") {
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.halve_every = 30;
  for (std::size_t e = 0; e < 30; ++e) CHECK(learning_rate(cfg, e) == 1e-4);
  for (std::size_t e = 30; e < 60; ++e) CHECK(learning_rate(cfg, e) == 5e-5);
  CHECK(learning_rate(cfg, 60) == 2.5e-5);
}

TEST_CASE("adam matches a hand-computed two-step trajectory") {
  auto p = Tensor64::from_data({2}, {1.0, -2.0}, true);
  AdamState s = AdamState::for_params(std::vector<Tensor64>{p});
  const std::vector<std::vector<double>> g1{{0.5, -1.0}}, g2{{0.1, 3.0}};
  adam_step(std::vector<Tensor64>{p}, g1, s, 0.01);
  // Step 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  adam_step(std::vector<Tensor64>{p}, g2, s, 0.01);
  for (int i = 0; i < 2; ++i) {
    const double a = g1[0][i], b = g2[0][i];
    const double m = 0.9 * 0.1 * a + 0.1 * b, v = 0.999 * 0.001 * a * a + 0.001 * b * b;
    const double m_hat = m / (1 - 0.81), v_hat = v / (1 - 0.999 * 0.999);
    const double start = i == 0 ? 1.0 : -2.0;
    const double after1 = start - 0.01 * a / (std::abs(a) + 1e-8);
    CHECK(p[i] == doctest::Approx(after1 - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
  }
  CHECK(s.step == 2);
}

TEST_CASE("a non-finite gradient aborts the step without touching any parameter") {
  auto a = Tensor32::from_data({2}, {1.0f, 2.0f}, true);
  auto b = Tensor32::from_data({1}, {3.0f}, true);
  const std::vector<Tensor32> params{a, b};
  AdamState s = AdamState::for_params(params);
  CHECK_THROWS_AS(adam_step(params, {{0.1, 0.2}, {std::numeric_limits<double>::quiet_NaN()}}, s, 0.1),
                  TrainingAborted);
  CHECK(a[0] == 1.0f);
  CHECK(b[0] == 3.0f);
  CHECK(s.step == 0);
  CHECK_THROWS_AS(adam_step(params, {{0.1}, {0.2}}, s, 0.1), ShapeError);
}

TEST_CASE("global norm clipping") {
  std::vector<std::vector<double>> g{{3.0}, {4.0}};
  CHECK(clip_global_norm(g, 10.0) == 5.0);
  CHECK(g[1][0] == 4.0);
  CHECK(clip_global_norm(g, 1.0) == 5.0);
  CHECK(g[0][0] == doctest::Approx(0.6));
  CHECK(g[1][0] == doctest::Approx(0.8));
}

TEST_CASE("rotations and flips") {
  const auto img = ramp(2, 3);  // 0 1 2 / 3 4 5
  const auto r = rotate90(img, 1);
  CHECK(r.height == 3);
  CHECK(r.width == 2);
  // Counter-clockwise: the right column becomes the top row.
  CHECK(r.at(0, 0) == 2.0);
  CHECK(r.at(0, 1) == 5.0);
  CHECK(r.at(2, 0) == 0.0);
  CHECK(rotate90(img, 4).pixels == img.pixels);
  CHECK(rotate90(rotate90(img, 1), -1).pixels == img.pixels);
  CHECK(flip_horizontal(img).at(0, 0) == 2.0);
  CHECK(flip_vertical(img).at(0, 0) == 3.0);
}

TEST_CASE("patch sources") {
  FixedPatches fixed({ramp(4, 4), Image(4, 4, 0.5)});
  const auto b = fixed.next_batch(3);
  CHECK(b.shape() == Shape{3, 1, 4, 4});
  CHECK(b[16] == 0.5f);
  CHECK(b[32 + 5] == 5.0f);
  CHECK(fixed.all().shape() == Shape{2, 1, 4, 4});
  CHECK_THROWS_AS(FixedPatches({}), ConfigError);

  AugmentedPatchStream stream({ramp(9, 9), ramp(4, 4)}, 5, 1);
  CHECK(stream.image_count() == 1);
  for (int i = 0; i < 20; ++i) {
    const auto p = stream.next_patch();
    CHECK(p.height == 5);
    // Each patch is a rigid transform of a window of the ramp, so its values are distinct.
    std::set<double> v(p.pixels.begin(), p.pixels.end());
    CHECK(v.size() == 25);
  }
  CHECK_THROWS_AS(AugmentedPatchStream({ramp(3, 3)}, 5, 1), ConfigError);
}

TEST_CASE("directory streams skip undersized images") {
  const auto dir = scratch_dir("stream");
  save_pgm((dir / "a.pgm").string(), synthetic_image(40, 40, 1));
  save_pgm((dir / "b.pgm").string(), synthetic_image(10, 10, 2));
  std::ostringstream log;
  AugmentedPatchStream s(dir.string(), 33, 0, &log);
  CHECK(s.image_count() == 1);
  CHECK(log.str().find("b.pgm") != std::string::npos);
  CHECK_THROWS_AS(AugmentedPatchStream(dir.string(), 64, 0), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("a short training run writes a checkpoint and a loss log") {
  const auto dir = scratch_dir("train");
  auto cfg = TrainConfig::desk_scale();
  cfg.model.phases = 1;
  cfg.model.channels = 2;
  cfg.model.block = 11;
  cfg.crop = 22;
  cfg.epochs = 2;
  cfg.iters_per_epoch = 2;
  cfg.out_dir = dir.string();
  FixedPatches data(synthetic_patches(2, 22, 3));
  const auto result = train(cfg, data);
  REQUIRE(result.history.size() == 4);
  CHECK(result.history.back().step == 4);
  CHECK(result.history.back().epoch == 1);
  for (const auto& r : result.history) CHECK(std::isfinite(r.loss));
  CHECK(fs::exists(dir / "checkpoint.dcsw"));
  CHECK_FALSE(fs::exists(dir / "checkpoint.dcsw.tmp"));
  std::ifstream csv(dir / "loss.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,epoch,lr,loss");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 4);
  const auto back = load_checkpoint<float>((dir / "checkpoint.dcsw").string());
  CHECK(back.config.describe() == cfg.model.describe());
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic in the seed") {
  auto cfg = TrainConfig::desk_scale();
  cfg.model.phases = 1;
  cfg.model.channels = 2;
  cfg.model.block = 11;
  cfg.crop = 11;
  cfg.epochs = 1;
  cfg.iters_per_epoch = 3;
  auto run = [&] {
    FixedPatches data(synthetic_patches(2, 11, 3));
    return train(cfg, data, TrainOptions{false, nullptr, 0});
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].loss == b.history[i].loss);
}

TEST_CASE("adam with a zero gradient leaves parameters and moments at zero change") {
  auto p = Tensor64::from_data({3}, {0.5, -1.5, 2.0}, true);
  AdamState s = AdamState::for_params(std::vector<Tensor64>{p});
  adam_step(std::vector<Tensor64>{p}, {{0.0, 0.0, 0.0}}, s, 0.1);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == -1.5);
  CHECK(p[2] == 2.0);
  for (double m : s.m[0]) CHECK(m == 0.0);
  for (double v : s.v[0]) CHECK(v == 0.0);
}

TEST_CASE("a half turn applied twice is the identity") {
  const auto img = ramp(3, 5);
  CHECK(rotate90(rotate90(img, 2), 2).pixels == img.pixels);
}

TEST_CASE("zero epochs leave the initialization untouched") {
  const auto dir = scratch_dir("train_zero");
  auto cfg = TrainConfig::desk_scale();
  cfg.model.phases = 1;
  cfg.model.channels = 2;
  cfg.model.block = 11;
  cfg.crop = 11;
  cfg.epochs = 0;
  cfg.out_dir = dir.string();
  FixedPatches data(synthetic_patches(1, 11, 3));
  const auto result = train(cfg, data);
  CHECK(result.history.empty());
  const auto init = initial_checkpoint(cfg);
  const auto got = result.checkpoint.params.named();
  const auto want = init.params.named();
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    const auto a = got[i].tensor.data(), b = want[i].tensor.data();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  fs::remove_all(dir);
}
