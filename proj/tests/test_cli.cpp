#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "depthopt/io.hpp"
#include "depthopt/optimizer.hpp"

using namespace depthopt;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* env = std::getenv("DEPTHOPT_CLI");
  REQUIRE_MESSAGE(env != nullptr, "DEPTHOPT_CLI must point at the binary");
  return env;
}

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() /
                       ("depthopt_cli_log_" + std::to_string(std::random_device{}()));
  const std::string cmd = cli_path() + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  std::ifstream in(log);
  std::ostringstream os;
  os << in.rdbuf();
  fs::remove(log);
  return {WEXITSTATUS(rc), os.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("depthopt_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("full pipeline is deterministic and self-consistent") {
  TempDir tmp;
  const std::string dir_a = (tmp.path / "a").string();
  const std::string dir_b = (tmp.path / "b").string();
  const std::string synth_flags = " --frames 3 --width 48 --height 36 --peds 2 --seed 5";

  REQUIRE(run("synth --out " + dir_a + synth_flags).exit_code == 0);
  REQUIRE(run("synth --out " + dir_b + synth_flags).exit_code == 0);
  // Byte-identical regeneration, file by file.
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    const fs::path twin = fs::path(dir_b) / entry.path().filename();
    REQUIRE(fs::exists(twin));
    CHECK(slurp(entry.path()) == slurp(twin));
  }

  for (int f = 0; f < 3; ++f) {
    REQUIRE(run("sparsify --dir " + dir_a + " --frame " + std::to_string(f) +
                " --seed " + std::to_string(f))
                .exit_code == 0);
    REQUIRE(run("sparsify --dir " + dir_b + " --frame " + std::to_string(f) +
                " --seed " + std::to_string(f))
                .exit_code == 0);
  }

  // steps 0 copies the initialization.
  const std::string out0 = (tmp.path / "out0").string();
  REQUIRE(run("optimize --dir " + dir_a + " --frame 1 --out " + out0 + " --steps 0").exit_code ==
          0);
  const Intrinsics K = read_intrinsics(fs::path(dir_a) / "intrinsics.txt");
  const SparseDepth sparse =
      read_sparse(fs::path(dir_a) / frame_sparse_name(1), K.width, K.height);
  const fs::path expected = tmp.path / "expected_init.pfm";
  write_depth_pfm(expected, init_depth_from_sparse(sparse));
  CHECK(slurp(fs::path(out0) / frame_depth_est_name(1)) == slurp(expected));

  // Identical seeds give byte-identical optimized outputs.
  const std::string out1 = (tmp.path / "out1").string();
  const std::string out2 = (tmp.path / "out2").string();
  const std::string opt_flags = " --frame 1 --steps 40 --seed 9 --patch 5";
  REQUIRE(run("optimize --dir " + dir_a + " --out " + out1 + opt_flags).exit_code == 0);
  REQUIRE(run("optimize --dir " + dir_a + " --out " + out2 + opt_flags).exit_code == 0);
  CHECK(slurp(fs::path(out1) / frame_depth_est_name(1)) ==
        slurp(fs::path(out2) / frame_depth_est_name(1)));
  CHECK(slurp(fs::path(out1) / frame_trace_name(1)) ==
        slurp(fs::path(out2) / frame_trace_name(1)));

  // Perfect estimate evaluates to zero errors and full accuracy.
  const RunResult self = run("eval --est " + (fs::path(dir_a) / frame_depth_gt_name(1)).string() +
                             " --gt " + (fs::path(dir_a) / frame_depth_gt_name(1)).string() +
                             " --mask " + (fs::path(dir_a) / frame_mask_name(1)).string());
  CHECK(self.exit_code == 0);
  CHECK(self.output.find("0.000 / 0.000") != std::string::npos);
  CHECK(self.output.find("1.000 / 1.000") != std::string::npos);

  // Evaluating the optimized frame against groundtruth succeeds.
  const RunResult ev = run("eval --est " + (fs::path(out1) / frame_depth_est_name(1)).string() +
                           " --gt " + (fs::path(dir_a) / frame_depth_gt_name(1)).string());
  CHECK(ev.exit_code == 0);

  // Pose perturbation: deterministic, rewritable, and skip-frame works.
  const std::string noisy1 = (tmp.path / "noisy1.txt").string();
  const std::string noisy2 = (tmp.path / "noisy2.txt").string();
  REQUIRE(run("perturb-pose --poses " + dir_a + "/poses.txt --out " + noisy1 +
              " --angle-deg 5 --seed 3 --skip-frame 1")
              .exit_code == 0);
  REQUIRE(run("perturb-pose --poses " + dir_a + "/poses.txt --out " + noisy2 +
              " --angle-deg 5 --seed 3 --skip-frame 1")
              .exit_code == 0);
  CHECK(slurp(noisy1) == slurp(noisy2));
  const auto original = read_poses(fs::path(dir_a) / "poses.txt");
  const auto perturbed = read_poses(noisy1);
  CHECK((original[1].second.rotation() - perturbed[1].second.rotation()).norm() == 0.0);
  CHECK((original[0].second.rotation() - perturbed[0].second.rotation()).norm() > 1e-4);
}

TEST_CASE("error paths exit nonzero with a message") {
  TempDir tmp;
  // Missing inputs.
  CHECK(run("optimize --dir " + (tmp.path / "nope").string() + " --frame 1 --out " +
            (tmp.path / "out").string())
            .exit_code != 0);
  CHECK(run("eval --est missing.pfm --gt missing.pfm").exit_code != 0);

  // Unknown config key.
  const fs::path cfg = tmp.path / "bad.cfg";
  std::ofstream(cfg) << "stepz = 10\n";
  const RunResult r = run("--config " + cfg.string() + " gradcheck --width 4 --height 4");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("unknown key") != std::string::npos);

  // Malformed file headers.
  const fs::path bad = tmp.path / "bad.pfm";
  std::ofstream(bad, std::ios::binary) << "Px\n1 1\n-1.0\n0000";
  CHECK(run("eval --est " + bad.string() + " --gt " + bad.string()).exit_code != 0);
}

TEST_CASE("gradcheck subcommand passes on the default bundle") {
  const RunResult r = run("gradcheck --width 12 --height 16 --seed 21");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("[PASS] total") != std::string::npos);
}
