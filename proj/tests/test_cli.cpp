#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "smamba/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = smamba::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("smamba_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("selftest passes and filters by group") {
  const auto all = run({"selftest"});
  CHECK(all.code == 0);
  CHECK(all.out.find("FAIL") == std::string::npos);
  const auto oracle = run({"selftest", "--filter", "oracle"});
  CHECK(oracle.code == 0);
  CHECK(oracle.out.find("oracle/") != std::string::npos);
  CHECK(oracle.out.find("fusion/") == std::string::npos);
  CHECK(oracle.out.find("train/") == std::string::npos);
}

TEST_CASE("selftest with a corrupted kernel names the failing invariant") {
  const auto r = run({"selftest", "--inject-fault", "merge-equivalence"});
  CHECK(r.code == 1);
  CHECK(r.out.find("FAIL fusion/merge-equivalence") != std::string::npos);
  CHECK(run({"selftest", "--filter", "nothing"}).code == 2);
}

TEST_CASE("dump-matrix writes csv and pgm") {
  const auto dir = fresh_dir("dump");
  const auto r = run({"--out-dir", dir.string(), "dump-matrix", "--mode", "mamba", "--length", "8"});
  CHECK(r.code == 0);
  CHECK(r.out.find("structure: lower_triangular") != std::string::npos);
  std::ifstream csv(dir / "M.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
  }
  CHECK(rows == 8);
  CHECK(slurp(dir / "M.pgm").rfind("P2\n", 0) == 0);

  const auto s = run({"--out-dir", dir.string(), "dump-matrix", "--mode", "spatial", "--grid", "4x4"});
  CHECK(s.code == 0);
  CHECK(s.out.find("nonzero above diagonal: yes") != std::string::npos);
  CHECK(run({"--out-dir", dir.string(), "dump-matrix", "--mode", "attention", "--length", "1025"}).code == 2);
  CHECK(run({"--out-dir", dir.string(), "dump-matrix", "--mode", "spatial", "--grid", "4by4"}).code == 2);
}

TEST_CASE("viz-states: identity kernel gives identical maps, random kernels differ") {
  const auto a = fresh_dir("viz_a");
  CHECK(run({"--out-dir", a.string(), "viz-states", "--synthetic"}).code == 0);
  CHECK(slurp(a / "x_mean.pgm") == slurp(a / "h_mean.pgm"));
  const auto b = fresh_dir("viz_b");
  CHECK(run({"--out-dir", b.string(), "viz-states", "--synthetic", "--random-fusion"}).code == 0);
  CHECK(slurp(b / "x_mean.pgm") != slurp(b / "h_mean.pgm"));

  const auto img = fs::temp_directory_path() / "smamba_const.pgm";
  {
    std::ofstream out(img);
    out << "P2\n16 16\n255\n";
    for (int i = 0; i < 256; ++i) out << "128 ";
  }
  const auto c = fresh_dir("viz_c");
  CHECK(run({"--out-dir", c.string(), "viz-states", "--image", img.string()}).code == 0);
  CHECK(run({"viz-states", "--image", "/nonexistent/x.pgm"}).code == 3);
  CHECK(run({"viz-states"}).code == 2);
}

TEST_CASE("train-toy: zero steps, determinism") {
  const auto a = fresh_dir("train_a"), b = fresh_dir("train_b");
  const auto r0 = run({"--out-dir", a.string(), "train-toy", "--steps", "0"});
  CHECK(r0.code == 0);
  CHECK(r0.out.find("final/initial ratio") != std::string::npos);
  CHECK(slurp(a / "loss.csv").find("\n1,") == std::string::npos);
  CHECK(fs::exists(a / "checkpoint.ssmw"));
  CHECK(run({"--out-dir", a.string(), "train-toy", "--steps", "3"}).code == 0);
  CHECK(run({"--out-dir", b.string(), "train-toy", "--steps", "3"}).code == 0);
  CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));
  CHECK(slurp(a / "checkpoint.ssmw") == slurp(b / "checkpoint.ssmw"));
  CHECK(run({"train-toy", "--samples", "10"}).code == 2);
}

TEST_CASE("bench subcommand") {
  const auto dir = fresh_dir("bench");
  const auto r = run({"--out-dir", dir.string(), "bench", "--which", "all", "--lengths", "16,32", "--grids", "8x8"});
  CHECK(r.code == 0);
  CHECK(r.out.find("matrix") != std::string::npos);
  CHECK(r.out.find("sasf-merged") != std::string::npos);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  CHECK(lines(slurp(dir / "bench_scan.csv")) == 5);
  CHECK(lines(slurp(dir / "bench_sasf.csv")) == 3);
  CHECK(run({"--out-dir", dir.string(), "bench", "--which", "sasf", "--grids", "8x8", "--inject-fault",
             "merge-equivalence"})
            .code == 1);
}

TEST_CASE("erf subcommand and usage errors") {
  const auto dir = fresh_dir("erf");
  CHECK(run({"--out-dir", dir.string(), "erf", "--synthetic"}).code == 0);
  CHECK(fs::exists(dir / "erf.pgm"));
  CHECK(run({"--bogus-flag", "selftest"}).code == 2);
  CHECK(run({"selftest", "--unknown"}).code == 2);
  CHECK(run({}).code == 2);

  const auto cfg = fs::temp_directory_path() / "smamba_bad_config.json";
  {
    std::ofstream out(cfg);
    out << R"({"not_a_key": 1})";
  }
  CHECK(run({"--config", cfg.string(), "erf", "--synthetic"}).code == 2);
  CHECK(run({"--config", "/nonexistent/cfg.json", "erf", "--synthetic"}).code == 3);
}
