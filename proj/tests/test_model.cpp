#include <doctest.h>

#include <cstring>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "ucs/errors.hpp"
#include "ucs/model.hpp"

using namespace ucs;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.phases = 2;
  cfg.block = 8;
  cfg.rate = 0.25;
  cfg.channels = 4;
  cfg.febs = 1;
  cfg.patch = 3;
  cfg.seed = 3;
  return cfg;
}

std::vector<float> bytes_of(const Tensor32& t) { return {t.data().begin(), t.data().end()}; }

Checkpoint<float> make_checkpoint(const ModelConfig& cfg) {
  Checkpoint<float> ck{cfg, init_parameters<float>(cfg, cfg.seed),
                       make_operator<float>(cfg.block, cfg.rate, MatrixKind::learned_init, cfg.seed)};
  // Non-trivial values in every tensor, including zero-initialized ones.
  std::mt19937_64 rng(42);
  for (auto& e : ck.params.named())
    for (auto& v : e.tensor.mutable_data()) v += std::uniform_real_distribution<float>(-0.01f, 0.01f)(rng);
  return ck;
}

}  // namespace

TEST_CASE("parameter_count equals the number of trainable scalars") {
  for (auto ssg : {SsgVariant::full, SsgVariant::block, SsgVariant::global, SsgVariant::fixed}) {
    for (auto nl : {NonLocalKind::dinlm, NonLocalKind::nlm, NonLocalKind::none}) {
      auto cfg = small_config();
      cfg.ssg = ssg;
      cfg.nl = nl;
      cfg.febs = 2;
      const auto params = init_parameters<float>(cfg, 1);
      std::size_t n = 0;
      for (const auto& t : params.trainable()) n += t.numel();
      CHECK(parameter_count(cfg) == n);
    }
  }
}

TEST_CASE("named registry is ordered and unique") {
  const auto params = init_parameters<float>(small_config(), 1);
  const auto named = params.named();
  CHECK(named.front().name.starts_with("init"));
  std::set<std::string> seen;
  bool phase2 = false;
  for (const auto& e : named) {
    CHECK(seen.insert(e.name).second);
    if (e.name.starts_with("phase2")) phase2 = true;
    if (phase2) CHECK_FALSE(e.name.starts_with("phase1"));
  }
}

TEST_CASE("forward produces one output per phase at the padded size") {
  const auto cfg = small_config();
  auto params = init_parameters<float>(cfg, cfg.seed);
  const auto op = make_operator<float>(cfg.block, cfg.rate, MatrixKind::learned_init, 1);
  const auto m = sample(op, pad_to_blocks(Tensor32::full({2, 1, 13, 16}, 0.5f), cfg.block));
  const auto out = forward(cfg, params, op, m, Mode::train);
  CHECK(out.x0.shape() == Shape{2, 1, 16, 16});
  REQUIRE(out.outputs.size() == 2);
  for (const auto& x : out.outputs) CHECK(x.shape() == Shape{2, 1, 16, 16});
  CHECK(out.h.shape() == Shape{2, 4, 16, 16});
  CHECK(out.maps.size() == 2);
  CHECK(out.offsets.size() == 2);
  CHECK(out.offsets[0].shape() == Shape{2, 18, 16, 16});
}

TEST_CASE("multi-phase loss matches the oracle") {
  std::mt19937_64 rng(5);
  std::vector<Tensor64> outs;
  std::vector<oracle::Vec> raw;
  for (int k = 0; k < 3; ++k) {
    raw.push_back(oracle::random_vec(2 * 5 * 4, rng));
    outs.push_back(Tensor64::from_data({2, 1, 5, 4}, raw.back()));
  }
  const auto target = oracle::random_vec(40, rng);
  const double got = loss(outs, Tensor64::from_data({2, 1, 5, 4}, target)).item();
  CHECK(got == doctest::Approx(oracle::multi_phase_loss(raw, target, 2)).epsilon(1e-13));
  CHECK_THROWS_AS(loss(outs, Tensor64::zeros({2, 1, 4, 4})), ShapeError);
  CHECK_THROWS_AS(loss(std::vector<Tensor64>{}, Tensor64::zeros({1})), ShapeError);
}

TEST_CASE("initialization is deterministic in the seed") {
  const auto cfg = small_config();
  const auto a = init_parameters<float>(cfg, 9).named();
  const auto b = init_parameters<float>(cfg, 9).named();
  const auto c = init_parameters<float>(cfg, 10).named();
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(bytes_of(a[i].tensor) == bytes_of(b[i].tensor));
    if (bytes_of(a[i].tensor) != bytes_of(c[i].tensor)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("checkpoints round-trip bit-exactly and reload to identical reconstructions") {
  for (auto nl : {NonLocalKind::dinlm, NonLocalKind::none}) {
    auto cfg = small_config();
    cfg.nl = nl;
    cfg.ssg = nl == NonLocalKind::none ? SsgVariant::block : SsgVariant::full;
    auto ck = make_checkpoint(cfg);
    std::stringstream first;
    write_checkpoint(first, ck);
    auto back = read_checkpoint<float>(first);
    auto want = cfg;
    want.seed = 0;  // the init seed is not persisted
    CHECK(back.config.describe() == want.describe());
    const auto a = ck.params.named();
    const auto b = back.params.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(bytes_of(a[i].tensor) == bytes_of(b[i].tensor));
    }
    CHECK(bytes_of(ck.op.phi) == bytes_of(back.op.phi));
    std::stringstream second;
    write_checkpoint(second, back);
    CHECK(second.str() == first.str());

    std::mt19937_64 rng(1);
    std::vector<float> px(13 * 11);
    for (auto& v : px) v = std::uniform_real_distribution<float>(0, 1)(rng);
    const auto m = sample(ck.op, pad_to_blocks(Tensor32::from_data({1, 1, 13, 11}, px), cfg.block));
    const auto x1 = reconstruct(ck, m);
    const auto x2 = reconstruct(back, m);
    CHECK(x1.shape() == Shape{1, 1, 13, 11});
    CHECK(std::memcmp(x1.data().data(), x2.data().data(), x1.numel() * sizeof(float)) == 0);
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  std::stringstream os;
  write_checkpoint(os, make_checkpoint(small_config()));
  const std::string bytes = os.str();
  for (std::size_t cut : {std::size_t(2), std::size_t(12), bytes.size() / 2, bytes.size() - 1}) {
    std::stringstream is(bytes.substr(0, cut));
    CHECK_THROWS_AS(read_checkpoint<float>(is), FormatError);
  }
  std::string bad = bytes;
  bad[0] = 'Q';
  std::stringstream bad_magic(bad);
  CHECK_THROWS_AS(read_checkpoint<float>(bad_magic), FormatError);
  // Byte 5 is the low byte of K: the tensor list no longer matches.
  std::string wrong_k = bytes;
  wrong_k[5] = 3;
  std::stringstream is_k(wrong_k);
  CHECK_THROWS_AS(read_checkpoint<float>(is_k), FormatError);
  std::stringstream trailing(bytes + std::string(4, '\0'));
  CHECK_THROWS_AS(read_checkpoint<float>(trailing), FormatError);
}

TEST_CASE("reconstruct rejects measurements from another operator") {
  auto ck = make_checkpoint(small_config());
  const auto other = make_operator<float>(8, 0.5, MatrixKind::orthogonalized_random, 1);
  CHECK_THROWS_AS(reconstruct(ck, sample(other, Tensor32::zeros({1, 1, 8, 8}))), ShapeError);
}

TEST_CASE("configuration validation") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.patch = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.phases = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.nl_subsample = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.rate = 0.001;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(small_config().measurements() == 16);
}
