#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "ucs/image.hpp"
#include "ucs/sampling.hpp"
#include "ucs/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "ucs_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const auto log = work_dir() / "stdout.txt";
  const std::string cmd = std::string(UCS_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::ostringstream ss;
  ss << is.rdbuf();
  r.out = ss.str();
  return r;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

std::string read_file(const std::string& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("usage errors exit nonzero") {
  CHECK(cli("").code != 0);
  CHECK(cli("frobnicate").code != 0);
  CHECK(cli("sample --image " + path("missing.pgm") + " --rate 0.1 --out " + path("m.dcsm")).code != 0);
  const auto r = cli("gradcheck --bogus");
  CHECK(r.code != 0);
  CHECK(r.out.find("bogus") != std::string::npos);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("sample at rate 0.01 on one block gives ten measurements") {
  ucs::save_pgm(path("one_block.pgm"), ucs::synthetic_image(33, 33, 1));
  const auto r = cli("sample --image " + path("one_block.pgm") + " --rate 0.01 --block 33 --matrix random --seed 3 --out " +
                     path("one.dcsm"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("n_B=10 blocks=1") != std::string::npos);
  const auto m = ucs::load_measurements<float>(path("one.dcsm"));
  CHECK(m.measurements() == 10);
  CHECK(m.blocks_y * m.blocks_x == 1);
  CHECK(m.original_h == 33);
}

TEST_CASE("bad rates and damaged files are reported") {
  ucs::save_pgm(path("img.pgm"), ucs::synthetic_image(40, 40, 2));
  CHECK(cli("sample --image " + path("img.pgm") + " --rate 1.5 --out " + path("x.dcsm")).code != 0);
  CHECK(cli("sample --image " + path("img.pgm") + " --rate 0.1 --matrix gaussian --out " + path("x.dcsm")).code != 0);
  { std::ofstream(path("junk.dcsm")) << "DCSMjunk"; }
  { std::ofstream(path("junk.dcsw")) << "nothing"; }
  const auto r = cli("reconstruct --measurements " + path("junk.dcsm") + " --checkpoint " + path("junk.dcsw") +
                     " --out " + path("junk.pgm"));
  CHECK(r.code != 0);
  CHECK(r.out.find("error") != std::string::npos);
  { std::ofstream(path("bad.cfg")) << "K=2\nwidth=3\n"; }
  CHECK(cli("train --config " + path("bad.cfg")).code != 0);
}

TEST_CASE("train, sample with the trained matrix, reconstruct and eval") {
  REQUIRE(cli("synth --out " + path("data") + " --count 3 --size 22 --seed 4").code == 0);
  {
    std::ofstream cfg(path("train.cfg"));
    cfg << "data_dir=" << path("data") << "\nout_dir=" << path("run") << "\n"
        << "K=1\nB=11\nrate=0.25\nc=2\nQ=1\ncrop=11\nbatch=2\nepochs=1\niters_per_epoch=3\nlearn_phi=false\n";
  }
  const auto t = cli("train --config " + path("train.cfg"));
  REQUIRE_MESSAGE(t.code == 0, t.out);
  const auto ckpt = path("run/checkpoint.dcsw");
  CHECK(fs::exists(ckpt));
  CHECK(read_file(path("run/loss.csv")).starts_with("step,epoch,lr,loss\n"));

  const auto img = path("data/synth_000.pgm");
  REQUIRE(cli("sample --image " + img + " --rate 0.25 --block 11 --checkpoint " + ckpt + " --out " + path("s.dcsm"))
              .code == 0);
  REQUIRE(cli("reconstruct --measurements " + path("s.dcsm") + " --checkpoint " + ckpt + " --out " + path("s.pgm"))
              .code == 0);
  const auto rec = ucs::load_image(path("s.pgm"));
  CHECK(rec.height == 22);
  CHECK(rec.width == 22);
  // A block size that does not match the checkpoint is refused.
  CHECK(cli("sample --image " + img + " --rate 0.25 --block 33 --checkpoint " + ckpt + " --out " + path("t.dcsm"))
            .code != 0);

  const auto e = cli("eval --dataset " + path("data") + " --checkpoint " + ckpt + " --out " + path("report.csv"));
  REQUIRE_MESSAGE(e.code == 0, e.out);
  const auto report = read_file(path("report.csv"));
  CHECK(report.starts_with("image,rate,ssg,nl,psnr_db,ssim\n"));
  CHECK(report.find("synth_002.pgm,0.25,full,dinlm,") != std::string::npos);
  CHECK(report.find("\nmean,") != std::string::npos);
  CHECK(report.find("# checkpoint_fnv1a64=") != std::string::npos);
  CHECK(report.find("# config K=1 B=11") != std::string::npos);
}

TEST_CASE("baseline writes an image and a fidelity trace") {
  ucs::save_pgm(path("base.pgm"), ucs::synthetic_image(33, 33, 5));
  const auto r = cli("baseline --image " + path("base.pgm") + " --rate 0.25 --iters 20 --lambda 0 --out " +
                     path("base_rec.pgm") + " --trace " + path("trace.csv"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("PSNR") != std::string::npos);
  std::istringstream trace(read_file(path("trace.csv")));
  std::string line;
  std::getline(trace, line);
  CHECK(line == "iter,fidelity");
  // Orthonormal rows: x^0 = phi^T y already fits y, so every entry is at
  // round-off level.
  int rows = 0;
  while (std::getline(trace, line)) {
    CHECK(line.starts_with(std::to_string(rows) + ","));
    const double f = std::stod(line.substr(line.find(',') + 1));
    CHECK(f >= 0.0);
    CHECK(f < 1e-20);
    ++rows;
  }
  CHECK(rows == 21);
}
