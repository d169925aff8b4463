#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fhalab/synth_data.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

CmdResult run_cmd(const std::string& args) {
  std::string cmd = std::string(FHALAB_BINARY_DIR) + "/fha-lab " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof(buf), pipe)) out += buf;
  int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

std::string work_dir() {
  std::string d = std::string(FHALAB_BINARY_DIR) + "/cli_test";
  fs::create_directories(d);
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_CASE("data make-blobs and shift round-trip through csv") {
  std::string dir = work_dir();
  auto made = run_cmd("data make-blobs --classes 3 --per-class 20 --spread 0.4 --seed 9 --out " +
                      dir + "/blobs.csv");
  CHECK(made.exit_code == 0);
  auto ds = fhalab::data::load_csv(dir + "/blobs.csv");
  CHECK(ds.size() == 60);
  CHECK(ds.class_count() == 3);

  auto shifted = run_cmd("data shift --in " + dir + "/blobs.csv --out " + dir +
                         "/shifted.csv --angle-degrees 60 --offset 1,0");
  CHECK(shifted.exit_code == 0);
  auto target = fhalab::data::load_csv(dir + "/shifted.csv");
  CHECK(target.domain == fhalab::data::DomainTag::target);
  CHECK(target.size() == 60);

  auto identity = run_cmd("data shift --in " + dir + "/blobs.csv --out " + dir +
                          "/same.csv --angle-degrees 0");
  CHECK(identity.exit_code == 0);
  auto same = fhalab::data::load_csv(dir + "/same.csv");
  CHECK(same.features.data == ds.features.data);
}

TEST_CASE("hsic subcommand prints the closed-form two-point value") {
  std::string dir = work_dir();
  {
    std::ofstream x(dir + "/x.csv");
    x << "0\n1\n";
  }
  auto plain = run_cmd("hsic --x " + dir + "/x.csv --y " + dir + "/x.csv --sigma 1");
  CHECK(plain.exit_code == 0);
  CHECK(plain.output.substr(0, 8) == "0.154818");

  auto rooted = run_cmd("hsic --x " + dir + "/x.csv --y " + dir + "/x.csv --sigma 1 --sqrt");
  CHECK(rooted.exit_code == 0);
  double v = std::stod(plain.output);
  double r = std::stod(rooted.output);
  CHECK(std::abs(r - std::sqrt(v)) < 1e-12);

  // constant batch against anything is zero
  {
    std::ofstream x(dir + "/const.csv");
    x << "2.5\n2.5\n";
  }
  auto zero = run_cmd("hsic --x " + dir + "/const.csv --y " + dir + "/x.csv --sigma 1");
  CHECK(zero.exit_code == 0);
  CHECK(std::stod(zero.output) == 0.0);

  {
    std::ofstream y(dir + "/y3.csv");
    y << "0\n1\n2\n";
  }
  auto mismatch = run_cmd("hsic --x " + dir + "/x.csv --y " + dir + "/y3.csv");
  CHECK(mismatch.exit_code == 2);
}

TEST_CASE("logcoef subcommand computes the correlated binary joint") {
  std::string dir = work_dir();
  {
    std::ofstream j(dir + "/joint.csv");
    j << "z1,z2,p\n0,0,0.4\n0,1,0.1\n1,0,0.1\n1,1,0.4\n";
  }
  auto res = run_cmd("logcoef --in " + dir + "/joint.csv");
  CHECK(res.exit_code == 0);
  CHECK(std::abs(std::stod(res.output) - std::log(2.0)) < 1e-10);

  {
    std::ofstream j(dir + "/bad.csv");
    j << "z1,z2,p\n0,0,0.5\n1,1,0.5\n";  // incomplete table: (0,1) and (1,0) missing
  }
  auto bad = run_cmd("logcoef --in " + dir + "/bad.csv");
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("incomplete") != std::string::npos);
}

TEST_CASE("complexity subcommand prints the worked example and sweeps alpha") {
  auto res = run_cmd("complexity --epsilon 0.1 --delta 0.05 --alpha 0 --vc-dim 4 --split-count 1");
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("m_u=400") != std::string::npos);
  CHECK(res.output.find("m_l=102") != std::string::npos);

  auto sweep = run_cmd(
      "complexity --epsilon 0.1 --delta 0.05 --alpha 0 --vc-dim 4 --split-count 1 --sweep");
  CHECK(sweep.exit_code == 0);
  CHECK(sweep.output.find("alpha,m_u,m_l") != std::string::npos);
  CHECK(sweep.output.find("0.45,") != std::string::npos);

  auto rejected = run_cmd("complexity --alpha 0.5");
  CHECK(rejected.exit_code == 2);
  CHECK(rejected.output.find("1/2") != std::string::npos);
}

TEST_CASE("train runs the smoke config, deterministically") {
  std::string dir = work_dir();
  std::string cfg = std::string(FHALAB_SOURCE_DIR) + "/configs/rot60_smoke.json";
  auto first = run_cmd("train --config " + cfg + " --out " + dir + "/run1 --jobs 2");
  CHECK(first.exit_code == 0);
  std::string metrics1 = dir + "/run1/DEGNET_ml5_seed1.csv";
  REQUIRE(fs::exists(metrics1));
  std::string content = slurp(metrics1);
  // row count == epochs (plus header)
  std::size_t lines = static_cast<std::size_t>(std::count(content.begin(), content.end(), '\n'));
  CHECK(lines == 60 + 1);

  auto second = run_cmd("train --config " + cfg + " --out " + dir + "/run2");
  CHECK(second.exit_code == 0);
  CHECK(slurp(dir + "/run2/DEGNET_ml5_seed1.csv") == content);
  CHECK(fs::exists(dir + "/run1/summary_DEGNET_ml5.json"));
}

TEST_CASE("train runs the full rot60 config with one row per epoch") {
  std::string dir = work_dir();
  std::string cfg = std::string(FHALAB_SOURCE_DIR) + "/configs/rot60_degnet.json";
  auto res = run_cmd("train --config " + cfg + " --out " + dir + "/full --jobs 2");
  CHECK(res.exit_code == 0);
  for (int seed : {1, 2, 3, 4, 5}) {
    std::string path = dir + "/full/DEGNET_ml5_seed" + std::to_string(seed) + ".csv";
    REQUIRE(fs::exists(path));
    std::string content = slurp(path);
    std::size_t lines =
        static_cast<std::size_t>(std::count(content.begin(), content.end(), '\n'));
    CHECK(lines == 600 + 1);  // T_max rows plus the header
    CHECK(content.find("nan") == std::string::npos);
  }
}

TEST_CASE("train rejects invalid configs naming the field, exit code 2") {
  std::string dir = work_dir();
  {
    std::ofstream cfg(dir + "/bad.json");
    cfg << R"({"method": "DEGNET", "alphaa": 0.3})";
  }
  auto res = run_cmd("train --config " + dir + "/bad.json --out " + dir + "/bad_out");
  CHECK(res.exit_code == 2);
  CHECK(res.output.find("alphaa") != std::string::npos);

  auto missing = run_cmd("train --config " + dir + "/does_not_exist.json --out " + dir);
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("does_not_exist.json") != std::string::npos);
}

TEST_CASE("seed override via environment variable") {
  std::string dir = work_dir();
  std::string cfg = std::string(FHALAB_SOURCE_DIR) + "/configs/rot60_smoke.json";
  std::string cmd = "FHA_LAB_SEED=42 " + std::string(FHALAB_BINARY_DIR) + "/fha-lab train --config " +
                    cfg + " --out " + dir + "/env_run 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[256];
  while (std::fgets(buf, sizeof(buf), pipe)) {}
  CHECK(WEXITSTATUS(pclose(pipe)) == 0);
  CHECK(fs::exists(dir + "/env_run/DEGNET_ml5_seed42.csv"));
  CHECK(!fs::exists(dir + "/env_run/DEGNET_ml5_seed1.csv"));
}

TEST_CASE("report builds grids from summaries and rejects empty dirs") {
  std::string dir = work_dir();
  REQUIRE(fs::exists(dir + "/run1/summary_DEGNET_ml5.json"));  // from the train test
  auto res = run_cmd("report --dir " + dir + "/run1 --out " + dir + "/rep");
  CHECK(res.exit_code == 0);
  CHECK(fs::exists(dir + "/rep/accuracy_grid.csv"));
  CHECK(fs::exists(dir + "/rep/diversity.csv"));
  std::string grid = slurp(dir + "/rep/accuracy_grid.csv");
  CHECK(grid.find("DEGNET") != std::string::npos);

  fs::create_directories(dir + "/empty");
  auto empty = run_cmd("report --dir " + dir + "/empty");
  CHECK(empty.exit_code == 2);
}

TEST_CASE("unknown flags are rejected") {
  auto res = run_cmd("complexity --alpha 0.1 --bogus-flag 3");
  CHECK(res.exit_code == 2);
  auto help = run_cmd("--help");
  CHECK(help.exit_code == 0);
  for (const char* sub : {"data", "hsic", "logcoef", "complexity", "train", "report"})
    CHECK(help.output.find(sub) != std::string::npos);
}
