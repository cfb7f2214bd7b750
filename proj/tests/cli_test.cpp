// End-to-end tests of the command-line driver: each test shells out to
// the built binary with a config written into a scratch directory.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "entrosched/eval.hpp"

namespace fs = std::filesystem;
using namespace entrosched;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "entrosched_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  std::string cmd = std::string(ENTROSCHED_CLI_BIN) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  EXPECT_NE(p, nullptr);
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  int status = pclose(p);
  if (output) *output = out;
  return WEXITSTATUS(status);
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

// Quadrature oracle for the 1D cond-marg rate (trapezoid over the
// marginal, conditional divergence in closed form).
double quadrature_rate_oracle(const BridgeMixture& mix, double s,
                              double lo = -4.0, double hi = 4.0,
                              int npts = 4001) {
  const double h = 1e-4;
  double marg = 0.0;
  for (int i = 0; i < npts; ++i) {
    double x = lo + (hi - lo) * i / (npts - 1);
    Vec xp{x + h}, xm{x - h}, xv{x};
    double div = (mixture_marginal_field(mix, xp, s)[0] -
                  mixture_marginal_field(mix, xm, s)[0]) /
                 (2.0 * h);
    double w = (i == 0 || i == npts - 1) ? 0.5 : 1.0;
    marg += w * mixture_marginal_density(mix, xv, s) * div;
  }
  marg *= (hi - lo) / (npts - 1);
  return std::abs(bb_flow_divergence(1, s) - marg);
}

const char* kTwoPairCalibrate = R"({
  "seed": 21,
  "mixture": {"sigma0": 0.5,
    "sources": [[-1.0], [1.0]], "targets": [[1.0], [-1.0]],
    "coupling": [[0.5, 0.0], [0.0, 0.5]]},
  "mesh": {"size": 9, "eps": 0.2},
  "states_per_time": 2000,
  "probes": {"count": 4}
})";

}  // namespace

TEST(Calibrate, TwoPairMatchesQuadratureOracle) {
  fs::path dir = scratch("cal_two_pair");
  write_file(dir / "cfg.json", kTwoPairCalibrate);
  ASSERT_EQ(run_cli("calibrate --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  json rj = read_json(dir / "rate.json");
  RateCurve rate = curve_from_json(rj);
  ASSERT_EQ(rate.mesh.size(), 9u);
  ASSERT_EQ(rate.se.size(), 9u);
  BridgeMixture mix = mixture_from_json(read_json(dir / "mixture.json"));
  for (std::size_t j = 0; j < rate.mesh.size(); ++j) {
    double oracle = quadrature_rate_oracle(mix, rate.mesh[j]);
    EXPECT_LE(std::abs(rate.values[j] - oracle), 3.0 * rate.se[j] + 1e-6)
        << "mesh point " << rate.mesh[j];
  }
}

TEST(Calibrate, SinglePairIsNearZero) {
  fs::path dir = scratch("cal_single_pair");
  write_file(dir / "cfg.json", R"({
    "seed": 4,
    "mixture": {"sigma0": 0.7, "sources": [[0.0, 1.0]],
                "targets": [[2.0, -1.0]], "coupling": [[1.0]]},
    "mesh": {"size": 11, "eps": 0.05},
    "states_per_time": 50
  })");
  ASSERT_EQ(run_cli("calibrate --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  RateCurve rate = curve_from_json(read_json(dir / "rate.json"));
  for (double v : rate.values) EXPECT_LT(v, 1e-8);
}

TEST(Calibrate, MissingSigma0NamesField) {
  fs::path dir = scratch("cal_missing_sigma0");
  write_file(dir / "cfg.json", R"({
    "mixture": {"sources": [[0.0]], "targets": [[1.0]]},
    "mesh": {"size": 5}
  })");
  std::string out;
  EXPECT_EQ(run_cli("calibrate --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string(), &out),
            1);
  EXPECT_NE(out.find("sigma0"), std::string::npos) << out;
}

TEST(Schedule, ConstantRateGivesLinearNodes) {
  fs::path dir = scratch("sched_constant");
  RateCurve rate;
  rate.mesh = {0.1, 0.3, 0.5, 0.7, 0.9};
  rate.values = Vec(5, 2.0);
  write_file(dir / "rate.json", to_json(rate).dump());
  write_file(dir / "cfg.json", R"({
    "schedule": {"kind": "entropic", "transform": "raw",
                 "steps": 4, "smoothing_window": 1},
    "rate_file": "rate.json"
  })");
  ASSERT_EQ(run_cli("schedule --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  json sj = read_json(dir / "schedule.json");
  Vec nodes = sj.at("nodes").get<Vec>();
  ASSERT_EQ(nodes.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k)
    EXPECT_NEAR(nodes[k], 0.25 * k, 1e-12);
}

TEST(Schedule, CosineTwoSteps) {
  fs::path dir = scratch("sched_cosine");
  write_file(dir / "cfg.json", R"({
    "schedule": {"kind": "cosine", "steps": 2}
  })");
  ASSERT_EQ(run_cli("schedule --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  Vec nodes = read_json(dir / "schedule.json").at("nodes").get<Vec>();
  ASSERT_EQ(nodes.size(), 3u);
  EXPECT_DOUBLE_EQ(nodes[0], 0.0);
  EXPECT_DOUBLE_EQ(nodes[1], 0.5);
  EXPECT_DOUBLE_EQ(nodes[2], 1.0);
}

TEST(Schedule, RawHasLargerBcrThanLog1p) {
  fs::path dir = scratch("sched_bcr");
  // tabulated BB |divergence| profile in d=2
  RateCurve rate;
  for (int i = 1; i <= 99; ++i) {
    double t = i / 100.0;
    rate.mesh.push_back(t);
    rate.values.push_back(std::abs(bb_flow_divergence(2, t)));
  }
  write_file(dir / "rate.json", to_json(rate).dump());
  write_file(dir / "cfg.json", R"({
    "schedule": {"kind": "entropic", "transform": "raw",
                 "steps": 16, "smoothing_window": 1},
    "rate_file": "rate.json", "bcr_eps": 0.1
  })");
  ASSERT_EQ(run_cli("schedule --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string() +
                    " --set schedule_file=raw.json"),
            0);
  ASSERT_EQ(run_cli("schedule --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string() +
                    " --set schedule_file=log1p.json" +
                    " --set schedule.transform=log1p"),
            0);
  double bcr_raw = read_json(dir / "raw.json").at("bcr").at("value");
  double bcr_log = read_json(dir / "log1p.json").at("bcr").at("value");
  EXPECT_GT(bcr_raw, bcr_log);
  EXPECT_GT(bcr_log, 1.0);
}

TEST(Sample, ConstantFieldEndpoints) {
  fs::path dir = scratch("sample_constant");
  TimeGrid g;
  g.nodes = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  write_file(dir / "grid.json", to_json(g).dump());
  write_file(dir / "cfg.json", R"({
    "schedule_file": "grid.json",
    "solver": "ode_euler",
    "field": {"type": "constant", "value": [1.5, -0.5]},
    "init": {"type": "points", "values": [[2.0, 3.0], [0.0, 0.0]]}
  })");
  ASSERT_EQ(run_cli("sample --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  std::string csv = read_file(dir / "samples.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x_1,x_2");
  std::getline(in, line);
  double a, b;
  ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf", &a, &b), 2);
  EXPECT_NEAR(a, 3.5, 1e-13);
  EXPECT_NEAR(b, 2.5, 1e-13);
}

TEST(Sample, SameSeedByteIdentical) {
  fs::path dir = scratch("sample_seed");
  TimeGrid g;
  for (int k = 0; k <= 20; ++k) g.nodes.push_back(k / 20.0);
  write_file(dir / "grid.json", to_json(g).dump());
  write_file(dir / "cfg.json", R"({
    "seed": 99,
    "schedule_file": "grid.json",
    "solver": "euler_maruyama",
    "field": {"type": "mixture", "mixture": {"sigma0": 0.5,
      "sources": [[0.0, 0.0]], "targets": [[3.0, 1.0]], "coupling": [[1.0]]}},
    "init": {"type": "mixture_sources"}
  })");
  for (const char* sub : {"a", "b"}) {
    fs::create_directories(dir / sub);
    fs::copy_file(dir / "grid.json", dir / sub / "grid.json",
                  fs::copy_options::overwrite_existing);
    ASSERT_EQ(run_cli("sample --config " + (dir / "cfg.json").string() +
                      " --out " + (dir / sub).string()),
              0);
  }
  std::string sa = read_file(dir / "a" / "samples.csv");
  EXPECT_EQ(sa, read_file(dir / "b" / "samples.csv"));
  EXPECT_NE(sa.find('\n'), std::string::npos);
}

TEST(Sample, BridgeMeanLineHitsTarget) {
  fs::path dir = scratch("sample_meanline");
  TimeGrid g;
  g.nodes = {0.0, 0.13, 0.5, 0.77, 1.0};  // irregular but valid
  write_file(dir / "grid.json", to_json(g).dump());
  write_file(dir / "cfg.json", R"({
    "schedule_file": "grid.json",
    "solver": "ode_heun",
    "field": {"type": "mixture", "mixture": {"sigma0": 0.4,
      "sources": [[-1.0, 2.0]], "targets": [[2.0, -0.5]], "coupling": [[1.0]]}},
    "init": {"type": "mixture_sources"}
  })");
  ASSERT_EQ(run_cli("sample --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  std::string csv = read_file(dir / "samples.csv");
  double a, b;
  ASSERT_EQ(std::sscanf(csv.c_str(), "x_1,x_2\n%lf,%lf", &a, &b), 2);
  EXPECT_NEAR(a, 2.0, 1e-8);
  EXPECT_NEAR(b, -0.5, 1e-8);
}

TEST(Evaluate, IdenticalSetsGiveZeroMmdAndZeroCi) {
  fs::path dir = scratch("eval_identical");
  // one shared sample file, compared against itself under two arm names
  std::string csv = "x_1,x_2\n";
  auto rng = make_rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  char buf[80];
  for (int i = 0; i < 64; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", gauss(rng), gauss(rng));
    csv += buf;
  }
  write_file(dir / "a.csv", csv);
  write_file(dir / "cfg.json", R"({
    "seed": 2,
    "pairs": [
      {"x": "a.csv", "y": "a.csv", "scheduler": "cand", "seed": 1},
      {"x": "a.csv", "y": "a.csv", "scheduler": "base", "seed": 1},
      {"x": "a.csv", "y": "a.csv", "scheduler": "cand", "seed": 2},
      {"x": "a.csv", "y": "a.csv", "scheduler": "base", "seed": 2}
    ],
    "bootstrap": {"a": "cand", "b": "base", "R": 200}
  })");
  ASSERT_EQ(run_cli("evaluate --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  auto records = records_from_csv(read_file(dir / "records.csv"));
  ASSERT_EQ(records.size(), 4u);
  for (const auto& r : records) EXPECT_LE(r.value, 1e-12);
  json summary = read_json(dir / "summary.json");
  EXPECT_DOUBLE_EQ(summary.at("bootstrap").at("ci_lo").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(summary.at("bootstrap").at("ci_hi").get<double>(), 0.0);
}

TEST(Evaluate, NoMatchedUnitsIsNumericalFailure) {
  fs::path dir = scratch("eval_unmatched");
  write_file(dir / "a.csv", "x_1\n0.1\n0.4\n0.9\n");
  write_file(dir / "cfg.json", R"({
    "pairs": [{"x": "a.csv", "y": "a.csv", "scheduler": "cand", "seed": 1}],
    "bootstrap": {"a": "cand", "b": "missing", "R": 200}
  })");
  std::string out;
  EXPECT_EQ(run_cli("evaluate --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string(), &out),
            2);
  EXPECT_NE(out.find("NoMatchedUnits"), std::string::npos) << out;
}

TEST(Bench, TwoSchedulersOneBudgetThreeSeeds) {
  fs::path dir = scratch("bench_small");
  write_file(dir / "cfg.json", R"({
    "master_seed": 5,
    "budgets": [5], "seeds": [1, 2, 3],
    "scenarios": ["CC"], "sigma0s": [0.5], "solvers": ["ode_heun"],
    "samples_per_cell": 64, "endpoint_n": 16,
    "train_steps": 30, "train_batch": 64,
    "mesh_size": 9, "mesh_eps": 0.02, "states_per_time": 8,
    "schedulers": [{"kind": "entropic", "transform": "log1p",
                    "smoothing_window": 3},
                   {"kind": "linear"}],
    "improvement": {"candidate": "entropic-log1p", "baseline": "linear",
                    "R": 300}
  })");
  ASSERT_EQ(run_cli("bench --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  auto records = records_from_csv(read_file(dir / "records.csv"));
  EXPECT_EQ(records.size(), 6u);
  json summary = read_json(dir / "summary.json");
  const json& by_budget = summary.at("improvement").at("by_budget");
  ASSERT_EQ(by_budget.size(), 1u);
  EXPECT_EQ(by_budget.at("5").at("units").get<std::size_t>(), 3u);
}

TEST(Replay, ReproducesByteIdenticalArtifacts) {
  fs::path dir = scratch("replay_golden");
  write_file(dir / "cfg.json", kTwoPairCalibrate);
  ASSERT_EQ(run_cli("calibrate --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string()),
            0);
  std::string rate_before = read_file(dir / "rate.json");
  std::string cal_before = read_file(dir / "calibration.json");
  std::string out;
  EXPECT_EQ(run_cli("replay --manifest " +
                    (dir / "calibrate_manifest.json").string(), &out),
            0)
      << out;
  EXPECT_NE(out.find("replay ok"), std::string::npos);
  EXPECT_EQ(read_file(dir / "rate.json"), rate_before);
  EXPECT_EQ(read_file(dir / "calibration.json"), cal_before);
}

TEST(Replay, FlagOverridesAreCapturedInManifest) {
  fs::path dir = scratch("replay_override");
  write_file(dir / "cfg.json", R"({
    "schedule": {"kind": "power", "steps": 4, "gamma": 1.0}
  })");
  ASSERT_EQ(run_cli("schedule --config " + (dir / "cfg.json").string() +
                    " --out " + dir.string() +
                    " --set schedule.gamma=2.0 --set schedule.steps=8"),
            0);
  Vec nodes = read_json(dir / "schedule.json").at("nodes").get<Vec>();
  ASSERT_EQ(nodes.size(), 9u);
  EXPECT_NEAR(nodes[4], 0.25, 1e-12);  // (4/8)^2 with the overridden gamma
  // replay uses the resolved config, so overrides survive the round trip
  std::string before = read_file(dir / "schedule.json");
  ASSERT_EQ(run_cli("replay --manifest " +
                    (dir / "schedule_manifest.json").string()),
            0);
  EXPECT_EQ(read_file(dir / "schedule.json"), before);
}
