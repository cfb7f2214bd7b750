#pragma once

// Sample-quality and schedule-geometry metrics plus the matched-NFE
// benchmarking protocol: MMD, paired bootstrap CIs, DTW grid alignment,
// and the sweep harness.

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "entrosched/bridges.hpp"
#include "entrosched/core.hpp"
#include "entrosched/entropy.hpp"
#include "entrosched/flowmodel.hpp"
#include "entrosched/scheduling.hpp"
#include "entrosched/solvers.hpp"

namespace entrosched {

// --- MMD --------------------------------------------------------------------

struct Bandwidth {
  bool median_heuristic = true;
  double fixed = 1.0;
};

inline double median_pairwise_distance(const Matrix& pts) {
  Vec dists;
  dists.reserve(pts.rows * (pts.rows - 1) / 2);
  for (std::size_t i = 0; i < pts.rows; ++i)
    for (std::size_t j = i + 1; j < pts.rows; ++j) {
      double q = 0.0;
      for (std::size_t k = 0; k < pts.cols; ++k) {
        double d = pts(i, k) - pts(j, k);
        q += d * d;
      }
      dists.push_back(std::sqrt(q));
    }
  auto mid = dists.begin() + dists.size() / 2;
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid;
}

// Unbiased U-statistic squared MMD with Gaussian kernel
// k(a,b) = exp(-||a-b||^2 / (2 h^2)).  Can be negative.
inline double mmd(const SampleBatch& X, const SampleBatch& Y,
                  const Bandwidth& bw = {}) {
  if (X.n() < 2 || Y.n() < 2)
    throw Error("TooFewSamples", "mmd needs at least 2 samples per side");
  if (X.dim() != Y.dim()) throw Error("SizeMismatch", "mmd dim mismatch");
  const std::size_t d = X.dim();

  double h = bw.fixed;
  if (bw.median_heuristic) {
    Matrix pooled(X.n() + Y.n(), d);
    std::copy(X.points.data.begin(), X.points.data.end(),
              pooled.data.begin());
    std::copy(Y.points.data.begin(), Y.points.data.end(),
              pooled.data.begin() + X.points.data.size());
    h = median_pairwise_distance(pooled);
  }
  if (!(h > 0.0)) throw Error("BadValue", "nonpositive bandwidth");
  const double inv = 1.0 / (2.0 * h * h);

  auto kern = [&](std::span<const double> a, std::span<const double> b) {
    double q = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      double dd = a[k] - b[k];
      q += dd * dd;
    }
    return std::exp(-q * inv);
  };

  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  const std::size_t m = X.n(), n = Y.n();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      kxx += kern(X.points.row(i), X.points.row(j));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      kyy += kern(Y.points.row(i), Y.points.row(j));
  // accumulate the cross term in both traversal orders and average, so
  // mmd(X,Y) == mmd(Y,X) bit-exactly
  double kyx = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      kxy += kern(X.points.row(i), Y.points.row(j));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i)
      kyx += kern(X.points.row(i), Y.points.row(j));
  kxy = 0.5 * (kxy + kyx);

  return 2.0 * kxx / (double(m) * double(m - 1)) +
         2.0 * kyy / (double(n) * double(n - 1)) -
         2.0 * kxy / (double(m) * double(n));
}

// --- metric records and paired bootstrap ------------------------------------

struct MetricRecord {
  std::string scheduler;
  std::size_t nfe = 0;  // interval budget N
  std::string solver;
  std::uint64_t seed = 0;
  std::string scenario;
  double sigma0 = 0.0;
  std::string metric;
  double value = 0.0;
};

// Match key: everything except the scheduler and the value.
using MatchKey =
    std::tuple<std::uint64_t, std::string, double, std::size_t, std::string,
               std::string>;

inline MatchKey match_key(const MetricRecord& r) {
  return {r.seed, r.scenario, r.sigma0, r.nfe, r.solver, r.metric};
}

struct BootstrapResult {
  double mean_delta = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t units = 0;
};

// Percentile bootstrap over matched (a, b) units.  `combine` maps a pair
// of metric values to the per-unit delta (default a - b).
inline BootstrapResult paired_bootstrap(
    const std::vector<MetricRecord>& a, const std::vector<MetricRecord>& b,
    std::size_t R, double alpha, std::uint64_t seed,
    const std::function<double(double, double)>& combine = {}) {
  if (R < 100) throw Error("BadValue", "need R >= 100 bootstrap draws");
  std::map<MatchKey, double> bmap;
  for (const auto& r : b) bmap[match_key(r)] = r.value;
  // set semantics: deltas keyed and ordered by match key so the result is
  // independent of record order
  std::map<MatchKey, double> dmap;
  auto comb = combine ? combine
                      : [](double x, double y) { return x - y; };
  for (const auto& r : a) {
    auto it = bmap.find(match_key(r));
    if (it != bmap.end()) dmap[match_key(r)] = comb(r.value, it->second);
  }
  if (dmap.empty()) throw Error("NoMatchedUnits", "no matched units");
  Vec deltas;
  deltas.reserve(dmap.size());
  for (const auto& [k, d] : dmap) deltas.push_back(d);

  BootstrapResult res;
  res.units = deltas.size();
  for (double d : deltas) res.mean_delta += d;
  res.mean_delta /= static_cast<double>(deltas.size());

  Vec means(R);
  auto rng = make_rng(seed, 0xb007ULL);
  std::uniform_int_distribution<std::size_t> pick(0, deltas.size() - 1);
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < deltas.size(); ++i) s += deltas[pick(rng)];
    means[r] = s / static_cast<double>(deltas.size());
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    double pos = q * static_cast<double>(R - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, R - 1);
    double w = pos - static_cast<double>(lo);
    return means[lo] + w * (means[hi] - means[lo]);
  };
  res.ci_lo = quantile(alpha / 2.0);
  res.ci_hi = quantile(1.0 - alpha / 2.0);
  return res;
}

// --- DTW grid alignment -----------------------------------------------------

struct DtwResult {
  double distance = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;
};

// Classical DP with absolute-difference local cost over node values.
// Accepts any non-empty node sequences (alignment diagnostics are also
// useful for degenerate grids with repeated nodes).
inline DtwResult dtw_align(const TimeGrid& a, const TimeGrid& b) {
  if (a.nodes.empty() || b.nodes.empty())
    throw Error("TooShort", "dtw needs non-empty grids");
  const std::size_t na = a.nodes.size(), nb = b.nodes.size();
  const double inf = std::numeric_limits<double>::infinity();
  Matrix D(na, nb, inf);
  D(0, 0) = std::abs(a.nodes[0] - b.nodes[0]);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      if (i == 0 && j == 0) continue;
      double best = inf;
      if (i > 0) best = std::min(best, D(i - 1, j));
      if (j > 0) best = std::min(best, D(i, j - 1));
      if (i > 0 && j > 0) best = std::min(best, D(i - 1, j - 1));
      D(i, j) = std::abs(a.nodes[i] - b.nodes[j]) + best;
    }

  DtwResult res;
  res.distance = D(na - 1, nb - 1);
  std::size_t i = na - 1, j = nb - 1;
  res.path.push_back({i, j});
  while (i > 0 || j > 0) {
    double best = inf;
    std::size_t bi = i, bj = j;
    if (i > 0 && j > 0 && D(i - 1, j - 1) <= best) {
      best = D(i - 1, j - 1);
      bi = i - 1;
      bj = j - 1;
    }
    if (i > 0 && D(i - 1, j) < best) {
      best = D(i - 1, j);
      bi = i - 1;
      bj = j;
    }
    if (j > 0 && D(i, j - 1) < best) {
      best = D(i, j - 1);
      bi = i;
      bj = j - 1;
    }
    i = bi;
    j = bj;
    res.path.push_back({i, j});
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

// --- matched-NFE sweep ------------------------------------------------------

struct SweepConfig {
  std::vector<ScheduleSpec> schedulers;
  std::vector<std::size_t> budgets{10, 25, 50};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<ScenarioKind> scenarios{ScenarioKind::CC, ScenarioKind::CD,
                                      ScenarioKind::DC, ScenarioKind::DD};
  std::vector<double> sigma0s{0.1, 0.5, 1.0};
  std::vector<std::string> solvers{"ode_heun", "sde_heun"};
  std::size_t samples_per_cell = 2000;
  std::size_t endpoint_n = 64;  // mixture endpoints per side
  TrainHyper hyper;
  std::size_t mesh_size = 50;
  double mesh_eps = 1e-3;
  std::size_t states_per_time = 64;
  ProbeConfig probes;
  std::uint64_t master_seed = 0;
  // Optional per-scheduler solver override (same length as schedulers).
  // Deliberately mismatched methods across arms trip the NfeMismatch
  // guard; this exists to keep that guard testable end to end.
  std::vector<std::string> arm_solver_override;
};

// Everything derived once per (scenario, sigma0): endpoint coupling,
// trained flow and drift models, and the entropic rate profile.
struct SweepCell {
  BridgeMixture mixture;
  ResidualFieldParams flow_params;
  ResidualFieldParams drift_params;
  RateCurve rate;  // raw learned cond-marg profile
};

inline SweepCell prepare_sweep_cell(ScenarioKind scenario, double sigma0,
                                    const SweepConfig& cfg) {
  SweepCell cell;
  ScenarioSpec spec{scenario, sigma0,
                    splitmix64(cfg.master_seed) ^ (std::uint64_t)scenario};
  SampleBatch src = scenario_sampler(spec, cfg.endpoint_n, Endpoint::Source);
  SampleBatch tgt = scenario_sampler(spec, cfg.endpoint_n, Endpoint::Target);
  auto sk = sinkhorn_coupling(src, tgt, 2.0 * sigma0 * sigma0, 1e-8, 20000);
  cell.mixture = BridgeMixture{src, tgt, sk.coupling, sigma0};

  TrainHyper h = cfg.hyper;
  h.seed = splitmix64(spec.seed ^ 0x7241ULL);
  h.target = TargetKind::Flow;
  cell.flow_params = cfm_train(cell.mixture, h).params;
  h.target = TargetKind::Drift;
  h.seed = splitmix64(spec.seed ^ 0xd21f7ULL);
  cell.drift_params = cfm_train(cell.mixture, h).params;

  CalibrationSet cal =
      build_calibration_set(cell.mixture, cfg.mesh_size, cfg.mesh_eps,
                            cfg.states_per_time, splitmix64(spec.seed ^ 0xca1ULL));
  ProbeConfig probes = cfg.probes;
  probes.seed = splitmix64(spec.seed ^ 0x9806ULL);
  cell.rate = learned_rate_profile(cell.flow_params, cell.mixture, cal, probes);
  return cell;
}

inline TimeGrid sweep_grid(const ScheduleSpec& sched, const RateCurve& rate,
                           std::size_t N) {
  if (sched.kind == ScheduleKind::Entropic) {
    RateCurve post = postprocess_rate(rate, default_floor(rate),
                                      sched.smoothing_window);
    return build_entropic_grid(apply_transform(post, sched.transform), N);
  }
  ScheduleSpec s = sched;
  s.steps = N;
  return baseline_grid(s);
}

inline std::vector<MetricRecord> matched_nfe_run(const SweepConfig& cfg) {
  if (cfg.schedulers.empty()) throw Error("BadSpec", "no schedulers");
  std::vector<MetricRecord> records;
  std::map<std::tuple<std::string, double>, SweepCell> cells;

  for (ScenarioKind scenario : cfg.scenarios) {
    for (double sigma0 : cfg.sigma0s) {
      auto& cell = cells
                       .emplace(std::make_tuple(to_string(scenario), sigma0),
                                prepare_sweep_cell(scenario, sigma0, cfg))
                       .first->second;
      FieldHandle flow = model_field_handle(cell.flow_params);
      FieldHandle drift = model_field_handle(cell.drift_params);
      SigmaFn sig = [sigma0](double) { return sigma0; };

      for (std::size_t N : cfg.budgets) {
        for (const std::string& solver : cfg.solvers) {
          for (std::uint64_t seed : cfg.seeds) {
            // Reference target sample and bandwidth shared across arms.
            std::uint64_t unit_seed =
                splitmix64(cfg.master_seed ^ splitmix64(seed) ^
                           splitmix64(N * 131 + (std::uint64_t)scenario) ^
                           std::hash<std::string>{}(solver)) ^
                std::bit_cast<std::uint64_t>(sigma0);
            ScenarioSpec rspec{scenario, sigma0, splitmix64(unit_seed ^ 0xef1ULL)};
            SampleBatch reference =
                scenario_sampler(rspec, cfg.samples_per_cell, Endpoint::Target);
            Bandwidth bw;
            bw.median_heuristic = false;
            bw.fixed = median_pairwise_distance(reference.points);

            ScenarioSpec ispec{scenario, sigma0, splitmix64(unit_seed ^ 0x15ULL)};
            SampleBatch init =
                scenario_sampler(ispec, cfg.samples_per_cell, Endpoint::Source);

            if (!cfg.arm_solver_override.empty() &&
                cfg.arm_solver_override.size() != cfg.schedulers.size())
              throw Error("BadSpec", "arm_solver_override length mismatch");
            std::size_t expected_nfe = 0;
            bool first_arm = true;
            for (std::size_t arm = 0; arm < cfg.schedulers.size(); ++arm) {
              const auto& sched = cfg.schedulers[arm];
              const std::string arm_solver = cfg.arm_solver_override.empty()
                                                 ? solver
                                                 : cfg.arm_solver_override[arm];
              TimeGrid grid = sweep_grid(sched, cell.rate, N);
              std::size_t nfe = 0;
              SampleBatch generated;
              if (arm_solver == "ode_heun" || arm_solver == "ode_euler") {
                OdeMethod m = arm_solver == "ode_heun" ? OdeMethod::Heun
                                                       : OdeMethod::Euler;
                generated = sample_endpoints_ode(flow, init, grid, m, &nfe);
              } else if (arm_solver == "sde_heun" ||
                         arm_solver == "euler_maruyama") {
                SdeMethod m = arm_solver == "sde_heun"
                                  ? SdeMethod::SdeHeun
                                  : SdeMethod::EulerMaruyama;
                generated = sample_endpoints_sde(drift, sig, init, grid, m,
                                                 splitmix64(unit_seed ^ 0x5deULL),
                                                 &nfe);
              } else {
                throw Error("BadSpec", "unknown solver: " + arm_solver);
              }
              if (first_arm) {
                expected_nfe = nfe;
                first_arm = false;
              } else if (nfe != expected_nfe) {
                throw Error("NfeMismatch",
                            "arm NFE " + std::to_string(nfe) + " != " +
                                std::to_string(expected_nfe));
              }
              MetricRecord rec;
              rec.scheduler = to_string(sched.kind);
              if (sched.kind == ScheduleKind::Entropic)
                rec.scheduler +=
                    sched.transform == Transform::Log1p ? "-log1p" : "-raw";
              if (sched.kind == ScheduleKind::Power)
                rec.scheduler += "-" + std::to_string((int)sched.gamma);
              rec.nfe = N;
              rec.solver = solver;
              rec.seed = seed;
              rec.scenario = to_string(scenario);
              rec.sigma0 = sigma0;
              rec.metric = "mmd";
              rec.value = mmd(generated, reference, bw);
              records.push_back(std::move(rec));
            }
          }
        }
      }
    }
  }
  return records;
}

// 100 * (baseline - candidate) / baseline; positive = candidate better.
inline BootstrapResult improvement_bootstrap(
    const std::vector<MetricRecord>& candidate,
    const std::vector<MetricRecord>& baseline, std::size_t R, double alpha,
    std::uint64_t seed) {
  return paired_bootstrap(candidate, baseline, R, alpha, seed,
                          [](double cand, double base) {
                            return 100.0 * (base - cand) / base;
                          });
}

inline std::vector<MetricRecord> filter_records(
    const std::vector<MetricRecord>& records, const std::string& scheduler,
    std::size_t nfe = 0, const std::string& solver = "") {
  std::vector<MetricRecord> out;
  for (const auto& r : records) {
    if (r.scheduler != scheduler) continue;
    if (nfe != 0 && r.nfe != nfe) continue;
    if (!solver.empty() && r.solver != solver) continue;
    out.push_back(r);
  }
  return out;
}

// --- CSV / JSON export ------------------------------------------------------

inline std::string records_to_csv(const std::vector<MetricRecord>& records) {
  std::string out = "scheduler,nfe,solver,seed,scenario,sigma0,metric,value\n";
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%s,%llu,%s,%.17g,%s,%.17g\n",
                  r.scheduler.c_str(), r.nfe, r.solver.c_str(),
                  (unsigned long long)r.seed, r.scenario.c_str(), r.sigma0,
                  r.metric.c_str(), r.value);
    out += buf;
  }
  return out;
}

inline std::vector<MetricRecord> records_from_csv(const std::string& csv) {
  std::vector<MetricRecord> out;
  std::size_t pos = csv.find('\n');  // skip header
  if (pos == std::string::npos) return out;
  ++pos;
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string::npos) end = csv.size();
    std::string line = csv.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t p = 0;
    while (true) {
      std::size_t c = line.find(',', p);
      if (c == std::string::npos) {
        fields.push_back(line.substr(p));
        break;
      }
      fields.push_back(line.substr(p, c - p));
      p = c + 1;
    }
    if (fields.size() != 8) throw Error("BadValue", "malformed record row");
    MetricRecord r;
    r.scheduler = fields[0];
    r.nfe = std::stoull(fields[1]);
    r.solver = fields[2];
    r.seed = std::stoull(fields[3]);
    r.scenario = fields[4];
    r.sigma0 = std::stod(fields[5]);
    r.metric = fields[6];
    r.value = std::stod(fields[7]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace entrosched
