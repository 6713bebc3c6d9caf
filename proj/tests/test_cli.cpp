// End-to-end tests of the command-line surface: every subcommand is exercised
// through a real subprocess against the shipped config files.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_repo;
fs::path g_work;

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = g_binary + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  std::array<char, 4096> buf;
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string smoke_config() { return (g_repo / "configs" / "smoke_2x2.json").string(); }

std::vector<std::vector<double>> read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

TEST_CASE("simulate: fixed-time baseline prints metrics and succeeds") {
  const auto out_dir = (g_work / "sim-ft").string();
  const RunResult r = run("simulate --config " + smoke_config() +
                          " --controller fixed-time --seed 3 --out " + out_dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("AvgTT=") != std::string::npos);
  double avg_tt = 0.0;
  std::sscanf(r.output.c_str(), "controller=fixed-time AvgTT=%lf", &avg_tt);
  CHECK(avg_tt > 0.0);
  CHECK(fs::exists(fs::path(out_dir) / "sim_metrics.csv"));
}

TEST_CASE("simulate honors --seed deterministically") {
  const std::string base = "simulate --config " + smoke_config() +
                           " --controller max-pressure --seed 11 --out " +
                           (g_work / "sim-det").string();
  const RunResult a = run(base);
  const RunResult b = run(base);
  CHECK(a.exit_code == 0);
  CHECK(a.output == b.output);
  const RunResult c = run("simulate --config " + smoke_config() +
                          " --controller max-pressure --seed 12 --out " +
                          (g_work / "sim-det2").string());
  CHECK(c.output != a.output);
}

TEST_CASE("config errors exit with code 1 and one-line diagnostics") {
  const RunResult missing = run("simulate --config /nonexistent.json --controller fixed-time");
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.find("config error:") != std::string::npos);

  const RunResult bad_ctrl = run("simulate --config " + smoke_config() +
                                 " --controller banana --out " + (g_work / "x").string());
  CHECK(bad_ctrl.exit_code == 1);

  const RunResult bad_abl =
      run("train --config " + smoke_config() + " --ablation nope --out " +
          (g_work / "y").string());
  CHECK(bad_abl.exit_code == 1);
}

TEST_CASE("grad-check: full-model finite differences pass under 1e-4") {
  const RunResult r = run("grad-check --seed 1");
  CHECK(r.exit_code == 0);
  double err = 1.0;
  REQUIRE(std::sscanf(r.output.c_str(), "max_rel_err=%lf", &err) == 1);
  CHECK(err < 1e-4);
}

TEST_CASE("train, evaluate, dump-attention round trip") {
  const fs::path out = g_work / "train-smoke";
  const RunResult tr =
      run("train --config " + smoke_config() + " --seed 5 --out " + out.string());
  CHECK(tr.exit_code == 0);
  CHECK(fs::exists(out / "checkpoint.json"));
  CHECK(fs::exists(out / "curve.csv"));
  CHECK(fs::exists(out / "sim_metrics.csv"));

  // curve has a header plus one row per round
  std::ifstream curve(out / "curve.csv");
  std::string line;
  int rows = 0;
  std::getline(curve, line);
  CHECK(line == "round,stage,loss,avg_tt,avg_que,epsilon");
  while (std::getline(curve, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  const RunResult ev = run("evaluate --config " + smoke_config() + " --checkpoint " +
                           (out / "checkpoint.json").string() + " --seed 6");
  CHECK(ev.exit_code == 0);
  CHECK(ev.output.find("AvgTT=") != std::string::npos);

  const RunResult sim = run("simulate --config " + smoke_config() +
                            " --controller dept --checkpoint " +
                            (out / "checkpoint.json").string() + " --seed 6 --out " +
                            (g_work / "sim-dept").string());
  CHECK(sim.exit_code == 0);

  const RunResult dump = run("dump-attention --config " + smoke_config() + " --checkpoint " +
                             (out / "checkpoint.json").string() + " --block 0 --head 1 --step 4" +
                             " --out " + out.string() + " --seed 5");
  CHECK(dump.exit_code == 0);

  const auto cone = read_matrix_csv(out / "attn_b0_h1_s4_cone.csv");
  const auto time_lut = read_matrix_csv(out / "attn_b0_h1_s4_time_lut.csv");
  const auto residual = read_matrix_csv(out / "attn_b0_h1_s4_residual.csv");
  const auto total = read_matrix_csv(out / "attn_b0_h1_s4_total.csv");
  REQUIRE(!total.empty());
  REQUIRE(cone.size() == total.size());
  for (size_t r = 0; r < total.size(); ++r)
    for (size_t c = 0; c < total[r].size(); ++c) {
      const double sum = cone[r][c] + time_lut[r][c] + residual[r][c];
      CHECK(std::abs(sum - total[r][c]) < 1e-9);
    }
}

TEST_CASE("evaluate without a checkpoint is a config error") {
  const RunResult r = run("evaluate --config " + smoke_config());
  CHECK(r.exit_code == 1);
}

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: test_cli <dept-binary> <repo-root>\n");
    return 1;
  }
  g_binary = argv[1];
  g_repo = argv[2];
  g_work = fs::temp_directory_path() / "dept-cli-tests";
  std::error_code ec;
  fs::remove_all(g_work, ec);
  fs::create_directories(g_work);

  doctest::Context ctx;
  const int rc = ctx.run();
  fs::remove_all(g_work, ec);
  return rc;
}
