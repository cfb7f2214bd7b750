// File-based pipeline driver: calibrate / schedule / sample / evaluate /
// bench / replay.  Every run is a pure function of (config, flags, seed)
// and writes a manifest with the resolved config and artifact hashes so
// any output can be reproduced byte-for-byte from the manifest alone.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "entrosched/eval.hpp"

namespace fs = std::filesystem;
using namespace entrosched;

namespace {

// Error codes that indicate a numerical failure rather than bad input.
const std::set<std::string> kNumericalCodes = {
    "NonFiniteState",     "NonFiniteField",    "NonFiniteParams",
    "DivergedTraining",   "NfeMismatch",       "UnderflowAllComponents",
    "DegenerateCoupling", "AllValuesNonFinite", "ZeroTotalMass",
    "NoMatchedUnits",     "EmptyTimeSlice",    "ReplayMismatch"};

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a:%016llx", (unsigned long long)h);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("MissingFile", "cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const std::exception& e) {
    throw Error("BadConfig", what + ": " + e.what());
  }
}

// Output workspace: all artifact paths are relative to --out, and every
// write is recorded (name + content hash) for the manifest.
struct Workspace {
  fs::path out;
  json artifacts = json::array();

  void write(const std::string& rel, const std::string& bytes) {
    fs::path p = out / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("MissingFile", "cannot write " + p.string());
    f << bytes;
    artifacts.push_back(json{{"file", rel}, {"hash", fnv1a_hex(bytes)}});
  }
  std::string read(const std::string& rel) const { return read_file(out / rel); }
  json read_json(const std::string& rel) const {
    return parse_json(read(rel), rel);
  }
};

// --- config plumbing --------------------------------------------------------

const json& need(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t pos = 0;
  while (true) {
    std::size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot - pos);
    if (!cur->is_object() || !cur->contains(key))
      throw Error("ConfigError", "config field \"" + path + "\" is required");
    cur = &cur->at(key);
    if (dot == std::string::npos) return *cur;
    pos = dot + 1;
  }
}

// --set a.b.c=value ; value parsed as JSON when possible, else a string.
void apply_override(json& cfg, const std::string& kv) {
  std::size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw Error("ConfigError", "--set expects key=value, got \"" + kv + "\"");
  std::string path = kv.substr(0, eq);
  std::string raw = kv.substr(eq + 1);
  json val;
  try {
    val = json::parse(raw);
  } catch (...) {
    val = raw;
  }
  json* cur = &cfg;
  std::size_t pos = 0;
  while (true) {
    std::size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot - pos);
    if (key.empty()) throw Error("ConfigError", "empty key in --set path");
    if (dot == std::string::npos) {
      (*cur)[key] = val;
      return;
    }
    cur = &(*cur)[key];
    pos = dot + 1;
  }
}

// --- shared builders --------------------------------------------------------

Matrix matrix_from_rows(const json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty())
    throw Error("ConfigError", what + " must be a non-empty array of rows");
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < m.rows; ++i) {
    Vec r = rows[i].get<Vec>();
    if (r.size() != m.cols)
      throw Error("ConfigError", what + " rows have inconsistent dimension");
    std::copy(r.begin(), r.end(), m.row(i).begin());
  }
  return m;
}

BridgeMixture build_mixture(const json& m, const Workspace& ws) {
  if (m.contains("file"))
    return mixture_from_json(ws.read_json(m.at("file").get<std::string>()));
  if (!m.contains("sigma0"))
    throw Error("ConfigError", "config field \"mixture.sigma0\" is required");
  const double sigma0 = m.at("sigma0").get<double>();

  BridgeMixture mix;
  mix.sigma0 = sigma0;
  if (m.contains("scenario")) {
    ScenarioSpec spec{scenario_from_string(m.at("scenario").get<std::string>()),
                      sigma0, m.value("seed", std::uint64_t{0})};
    std::size_t n = m.value("n", std::size_t{64});
    mix.sources = scenario_sampler(spec, n, Endpoint::Source);
    mix.targets = scenario_sampler(spec, n, Endpoint::Target);
  } else {
    mix.sources.points = matrix_from_rows(need(m, "sources"), "mixture.sources");
    mix.targets.points = matrix_from_rows(need(m, "targets"), "mixture.targets");
  }
  if (m.contains("coupling")) {
    mix.coupling = matrix_from_rows(m.at("coupling"), "mixture.coupling");
  } else {
    double eps_ot = m.value("epsilon_ot", 2.0 * sigma0 * sigma0);
    auto sk = sinkhorn_coupling(mix.sources, mix.targets, eps_ot,
                                m.value("sinkhorn_tol", 1e-8),
                                m.value("sinkhorn_iters", std::size_t{20000}));
    mix.coupling = sk.coupling;
  }
  mix.validate();
  return mix;
}

ProbeConfig build_probes(const json& cfg, std::uint64_t seed) {
  ProbeConfig probes;
  probes.seed = seed;
  if (cfg.contains("probes")) {
    const json& p = cfg.at("probes");
    probes.count = p.value("count", probes.count);
    std::string d = p.value("distribution", std::string("rademacher"));
    if (d == "rademacher")
      probes.distribution = ProbeDistribution::Rademacher;
    else if (d == "gaussian")
      probes.distribution = ProbeDistribution::Gaussian;
    else
      throw Error("ConfigError", "probes.distribution must be rademacher|gaussian");
  }
  return probes;
}

ScheduleSpec build_schedule_spec(const json& s) {
  ScheduleSpec spec;
  spec.kind = schedule_kind_from_string(need(s, "kind").get<std::string>());
  std::string tr = s.value("transform", std::string("log1p"));
  if (tr != "log1p" && tr != "raw")
    throw Error("ConfigError", "schedule.transform must be log1p|raw");
  spec.transform = tr == "log1p" ? Transform::Log1p : Transform::Raw;
  spec.gamma = s.value("gamma", spec.gamma);
  spec.alpha = s.value("alpha", spec.alpha);
  spec.sigmoid_a = s.value("sigmoid_a", spec.sigmoid_a);
  spec.steps = s.value("steps", spec.steps);
  spec.floor_frac = s.value("floor_frac", spec.floor_frac);
  spec.smoothing_window = s.value("smoothing_window", spec.smoothing_window);
  spec.validate();
  return spec;
}

std::string batch_to_csv(const SampleBatch& batch) {
  std::string out;
  for (std::size_t k = 0; k < batch.dim(); ++k)
    out += (k ? ",x_" : "x_") + std::to_string(k + 1);
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < batch.n(); ++i) {
    for (std::size_t k = 0; k < batch.dim(); ++k) {
      std::snprintf(buf, sizeof buf, k ? ",%.17g" : "%.17g",
                    batch.points(i, k));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

SampleBatch batch_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line))
    throw Error("BadValue", "empty sample csv");
  std::vector<Vec> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Vec row;
    std::size_t p = 0;
    while (true) {
      std::size_t c = line.find(',', p);
      row.push_back(std::stod(line.substr(p, c - p)));
      if (c == std::string::npos) break;
      p = c + 1;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error("BadValue", "sample csv has no rows");
  SampleBatch out;
  out.points = Matrix(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != out.dim())
      throw Error("BadValue", "ragged sample csv");
    std::copy(rows[i].begin(), rows[i].end(), out.points.row(i).begin());
  }
  out.validate();
  return out;
}

// --- commands ---------------------------------------------------------------

json cmd_calibrate(const json& cfg, Workspace& ws) {
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
  BridgeMixture mix = build_mixture(need(cfg, "mixture"), ws);
  const json& mesh = need(cfg, "mesh");
  CalibrationSet cal = build_calibration_set(
      mix, need(mesh, "size").get<std::size_t>(), mesh.value("eps", 1e-3),
      cfg.value("states_per_time", std::size_t{100}), seed);
  ProbeConfig probes = build_probes(cfg, splitmix64(seed ^ 0x9b0be5ULL));

  CondFieldFactory cond = [&mix](std::size_t i, std::size_t j) {
    return bb_field_handle(mix.pair_spec(i, j));
  };
  RateCurve rate;
  const std::string estimator =
      cfg.value("estimator", std::string("cond_marg"));
  if (estimator == "cond_marg") {
    FieldHandle marg = mixture_field_handle(mix);
    AnalyticDivergence analytic;
    if (cfg.value("analytic_conditional", true)) {
      std::size_t d = mix.dim();
      analytic = [d](std::span<const double>, double t) {
        return bb_flow_divergence(d, t);
      };
    }
    rate = cond_marg_rate(cal, cond, marg, probes, analytic);
  } else if (estimator == "score_form") {
    CondScoreFn cs = [&mix](std::size_t i, std::size_t j,
                            std::span<const double> x, double t) {
      return bb_cond_score(mix.pair_spec(i, j), x, t);
    };
    ScoreFn ms = [&mix](std::span<const double> x, double t) {
      return mixture_marginal_score(mix, x, t);
    };
    rate = score_form_rate(cal, cond, cs, ms);
  } else {
    throw Error("ConfigError", "estimator must be cond_marg|score_form");
  }

  ws.write(cfg.value("rate_file", std::string("rate.json")),
           to_json(rate).dump(2) + "\n");
  ws.write("calibration.json", to_json(cal).dump(2) + "\n");
  ws.write("mixture.json", to_json(mix).dump(2) + "\n");
  return json{{"seed", seed}};
}

json cmd_schedule(const json& cfg, Workspace& ws) {
  ScheduleSpec spec = build_schedule_spec(need(cfg, "schedule"));
  TimeGrid grid;
  if (spec.kind == ScheduleKind::Entropic) {
    RateCurve rate = curve_from_json(
        ws.read_json(need(cfg, "rate_file").get<std::string>()));
    RateCurve post = postprocess_rate(rate, default_floor(rate, spec.floor_frac),
                                      spec.smoothing_window);
    grid = build_entropic_grid(apply_transform(post, spec.transform),
                               spec.steps);
  } else {
    grid = baseline_grid(spec);
  }
  const double bcr_eps = cfg.value("bcr_eps", 0.1);
  json sj = schedule_to_json(grid, spec.kind, spec.transform, bcr_eps);
  ws.write(cfg.value("schedule_file", std::string("schedule.json")),
           sj.dump(2) + "\n");
  return json{{"bcr", sj.at("bcr")}};
}

json cmd_sample(const json& cfg, Workspace& ws) {
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
  json gj = ws.read_json(need(cfg, "schedule_file").get<std::string>());
  TimeGrid grid = grid_from_json(gj.contains("nodes") ? [&] {
    // schedule files carry extra metadata; rebuild the grid json shape
    return json{{"version", gj.value("version", 0)}, {"orientation", "increasing"},
                {"nodes", gj.at("nodes")}};
  }() : gj);

  const json& fieldcfg = need(cfg, "field");
  const std::string ftype = need(fieldcfg, "type").get<std::string>();
  const std::string solver = need(cfg, "solver").get<std::string>();
  const bool is_sde = solver == "sde_heun" || solver == "euler_maruyama";

  BridgeMixture mix;
  bool have_mix = false;
  FieldHandle field;
  if (ftype == "mixture") {
    mix = build_mixture(need(fieldcfg, "mixture"), ws);
    have_mix = true;
    if (is_sde) {
      field.name = "mixture_sde_drift";
      field.dim = mix.dim();
      field.eval = [mix](std::span<const double> x, double t,
                         std::span<double> out) {
        Vec v = mixture_drift_clipped(mix, x, t);
        std::copy(v.begin(), v.end(), out.begin());
      };
    } else {
      field = mixture_field_handle(mix);
    }
  } else if (ftype == "params") {
    ResidualFieldParams p = params_from_json(
        ws.read_json(need(fieldcfg, "file").get<std::string>()));
    field = model_field_handle(p);
  } else if (ftype == "constant") {
    Vec v = need(fieldcfg, "value").get<Vec>();
    field.name = "constant";
    field.dim = v.size();
    field.eval = [v](std::span<const double>, double, std::span<double> out) {
      std::copy(v.begin(), v.end(), out.begin());
    };
  } else {
    throw Error("ConfigError", "field.type must be mixture|params|constant");
  }

  const json& initcfg = need(cfg, "init");
  const std::string itype = need(initcfg, "type").get<std::string>();
  SampleBatch init;
  if (itype == "points") {
    init.points = matrix_from_rows(need(initcfg, "values"), "init.values");
  } else if (itype == "mixture_sources") {
    if (!have_mix)
      throw Error("ConfigError", "init.type mixture_sources needs a mixture field");
    init = mix.sources;
  } else if (itype == "scenario_source") {
    ScenarioSpec spec{
        scenario_from_string(need(initcfg, "scenario").get<std::string>()),
        initcfg.value("sigma0", 0.5), splitmix64(seed ^ 0x1417ULL)};
    init = scenario_sampler(spec, need(initcfg, "n").get<std::size_t>(),
                            Endpoint::Source);
  } else {
    throw Error("ConfigError",
                "init.type must be points|mixture_sources|scenario_source");
  }
  if (init.dim() != field.dim)
    throw Error("ConfigError", "init dimension does not match field");

  std::size_t nfe = 0;
  SampleBatch endpoints;
  if (solver == "ode_heun" || solver == "ode_euler") {
    OdeMethod m = solver == "ode_heun" ? OdeMethod::Heun : OdeMethod::Euler;
    endpoints = sample_endpoints_ode(field, init, grid, m, &nfe);
  } else if (is_sde) {
    double sigma =
        cfg.contains("sigma") ? cfg.at("sigma").get<double>()
                              : (have_mix ? mix.sigma0 : 1.0);
    SigmaFn sf = [sigma](double) { return sigma; };
    SdeMethod m = solver == "sde_heun" ? SdeMethod::SdeHeun
                                       : SdeMethod::EulerMaruyama;
    endpoints = sample_endpoints_sde(field, sf, init, grid, m, seed, &nfe);
  } else {
    throw Error("ConfigError",
                "solver must be ode_heun|ode_euler|sde_heun|euler_maruyama");
  }
  ws.write(cfg.value("samples_file", std::string("samples.csv")),
           batch_to_csv(endpoints));

  if (cfg.value("trajectories", false)) {
    if (is_sde)
      throw Error("ConfigError", "trajectories are only written for ODE solvers");
    OdeMethod m = solver == "ode_heun" ? OdeMethod::Heun : OdeMethod::Euler;
    std::string out;
    Vec x0(init.dim());
    for (std::size_t p = 0; p < init.n(); ++p) {
      auto r = init.points.row(p);
      x0.assign(r.begin(), r.end());
      Trajectory traj = ode_integrate(field, x0, grid, m);
      out += "# path " + std::to_string(p) + "\n";
      out += trajectory_to_csv(traj);
    }
    ws.write("trajectories.csv", out);
  }
  return json{{"seed", seed}, {"nfe", nfe}};
}

json summarize_by_scheduler(const std::vector<MetricRecord>& records) {
  std::map<std::string, Vec> groups;
  for (const auto& r : records) groups[r.scheduler].push_back(r.value);
  json out = json::object();
  for (const auto& [name, vals] : groups) {
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var = vals.size() > 1 ? var / static_cast<double>(vals.size() - 1) : 0.0;
    out[name] = json{{"n", vals.size()}, {"mean", mean},
                     {"stddev", std::sqrt(var)}};
  }
  return out;
}

json bootstrap_json(const BootstrapResult& b) {
  return json{{"mean_delta", b.mean_delta}, {"ci_lo", b.ci_lo},
              {"ci_hi", b.ci_hi}, {"units", b.units}};
}

json cmd_evaluate(const json& cfg, Workspace& ws) {
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});
  Bandwidth bw;
  if (cfg.contains("bandwidth")) {
    bw.median_heuristic = cfg.at("bandwidth").value("median", true);
    bw.fixed = cfg.at("bandwidth").value("fixed", 1.0);
  }
  std::vector<MetricRecord> records;
  for (const json& p : need(cfg, "pairs")) {
    SampleBatch x = batch_from_csv(ws.read(need(p, "x").get<std::string>()));
    SampleBatch y = batch_from_csv(ws.read(need(p, "y").get<std::string>()));
    MetricRecord rec;
    rec.scheduler = need(p, "scheduler").get<std::string>();
    rec.nfe = p.value("nfe", std::size_t{0});
    rec.solver = p.value("solver", std::string("ode_heun"));
    rec.seed = p.value("seed", std::uint64_t{0});
    rec.scenario = p.value("scenario", std::string(""));
    rec.sigma0 = p.value("sigma0", 0.0);
    rec.metric = "mmd";
    rec.value = mmd(x, y, bw);
    records.push_back(std::move(rec));
  }
  ws.write("records.csv", records_to_csv(records));

  json summary{{"version", 1}, {"by_scheduler", summarize_by_scheduler(records)}};
  if (cfg.contains("bootstrap")) {
    const json& b = cfg.at("bootstrap");
    auto a = filter_records(records, need(b, "a").get<std::string>());
    auto bb = filter_records(records, need(b, "b").get<std::string>());
    BootstrapResult res = paired_bootstrap(
        a, bb, b.value("R", std::size_t{1000}), b.value("alpha", 0.05),
        splitmix64(seed ^ 0xb00ULL));
    summary["bootstrap"] = bootstrap_json(res);
  }
  ws.write("summary.json", summary.dump(2) + "\n");
  return json{{"seed", seed}};
}

json cmd_bench(const json& cfg, Workspace& ws) {
  SweepConfig sw;
  sw.master_seed = cfg.value("master_seed", std::uint64_t{0});
  if (cfg.contains("budgets")) sw.budgets = cfg.at("budgets").get<std::vector<std::size_t>>();
  if (cfg.contains("seeds"))
    sw.seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  if (cfg.contains("scenarios")) {
    sw.scenarios.clear();
    for (const json& s : cfg.at("scenarios"))
      sw.scenarios.push_back(scenario_from_string(s.get<std::string>()));
  }
  if (cfg.contains("sigma0s")) sw.sigma0s = cfg.at("sigma0s").get<Vec>();
  if (cfg.contains("solvers"))
    sw.solvers = cfg.at("solvers").get<std::vector<std::string>>();
  sw.samples_per_cell = cfg.value("samples_per_cell", sw.samples_per_cell);
  sw.endpoint_n = cfg.value("endpoint_n", sw.endpoint_n);
  sw.mesh_size = cfg.value("mesh_size", sw.mesh_size);
  sw.mesh_eps = cfg.value("mesh_eps", sw.mesh_eps);
  sw.states_per_time = cfg.value("states_per_time", sw.states_per_time);
  sw.hyper.steps = cfg.value("train_steps", sw.hyper.steps);
  sw.hyper.batch = cfg.value("train_batch", sw.hyper.batch);
  sw.schedulers.clear();
  for (const json& s : need(cfg, "schedulers"))
    sw.schedulers.push_back(build_schedule_spec(s));

  std::vector<MetricRecord> records = matched_nfe_run(sw);
  ws.write("records.csv", records_to_csv(records));

  json summary{{"version", 1},
               {"by_scheduler", summarize_by_scheduler(records)}};
  if (cfg.contains("improvement")) {
    const json& imp = cfg.at("improvement");
    const std::string cand = need(imp, "candidate").get<std::string>();
    const std::string base = need(imp, "baseline").get<std::string>();
    const std::size_t R = imp.value("R", std::size_t{1000});
    const double alpha = imp.value("alpha", 0.05);
    json matrix = json::object();
    for (std::size_t N : sw.budgets) {
      BootstrapResult res = improvement_bootstrap(
          filter_records(records, cand, N), filter_records(records, base, N),
          R, alpha, splitmix64(sw.master_seed ^ (N * 0x51edULL)));
      matrix[std::to_string(N)] = bootstrap_json(res);
    }
    summary["improvement"] =
        json{{"candidate", cand}, {"baseline", base}, {"by_budget", matrix}};
  }
  ws.write("summary.json", summary.dump(2) + "\n");
  return json{{"cells", records.size()}};
}

json dispatch(const std::string& command, const json& cfg, Workspace& ws) {
  if (command == "calibrate") return cmd_calibrate(cfg, ws);
  if (command == "schedule") return cmd_schedule(cfg, ws);
  if (command == "sample") return cmd_sample(cfg, ws);
  if (command == "evaluate") return cmd_evaluate(cfg, ws);
  if (command == "bench") return cmd_bench(cfg, ws);
  throw Error("ConfigError", "unknown command: " + command);
}

void write_manifest(Workspace& ws, const std::string& command,
                    const json& cfg, const json& extras) {
  json manifest{{"version", 1},
                {"command", command},
                {"config", cfg},
                {"result", extras},
                {"artifacts", ws.artifacts}};
  fs::create_directories(ws.out);
  const std::string bytes = manifest.dump(2) + "\n";
  // pipelines share an --out; keep a per-command copy so every stage
  // stays replayable after later stages overwrite manifest.json
  for (const std::string& name :
       {std::string("manifest.json"), command + "_manifest.json"}) {
    std::ofstream f(ws.out / name, std::ios::binary);
    f << bytes;
  }
}

int run_command(const std::string& command, const std::string& config_path,
                const std::string& out_dir,
                const std::vector<std::string>& overrides,
                std::optional<std::uint64_t> seed_flag) {
  Workspace ws;
  ws.out = out_dir;
  fs::create_directories(ws.out);
  json cfg = parse_json(read_file(config_path), config_path);
  for (const std::string& kv : overrides) apply_override(cfg, kv);
  if (seed_flag) {
    cfg["seed"] = *seed_flag;
    if (command == "bench") cfg["master_seed"] = *seed_flag;
  }
  json extras = dispatch(command, cfg, ws);
  write_manifest(ws, command, cfg, extras);
  return 0;
}

int run_replay(const std::string& manifest_path, std::string out_dir) {
  fs::path mp = manifest_path;
  if (!fs::exists(mp)) mp = fs::path(out_dir) / manifest_path;
  // default: re-execute in place, where upstream input artifacts live
  if (out_dir.empty()) out_dir = mp.parent_path().string();
  if (out_dir.empty()) out_dir = ".";
  json manifest = parse_json(read_file(mp), manifest_path);
  if (manifest.value("version", 0) != 1)
    throw Error("BadVersion", "manifest json");
  const std::string command = need(manifest, "command").get<std::string>();
  const json& cfg = need(manifest, "config");

  Workspace ws;
  ws.out = out_dir;
  fs::create_directories(ws.out);
  json extras = dispatch(command, cfg, ws);
  write_manifest(ws, command, cfg, extras);

  std::map<std::string, std::string> want, got;
  for (const json& a : need(manifest, "artifacts"))
    want[a.at("file").get<std::string>()] = a.at("hash").get<std::string>();
  for (const json& a : ws.artifacts)
    got[a.at("file").get<std::string>()] = a.at("hash").get<std::string>();
  if (want != got) {
    std::string detail;
    for (const auto& [f, h] : want)
      if (!got.count(f) || got[f] != h) detail += f + " ";
    throw Error("ReplayMismatch", "artifacts differ: " + detail);
  }
  std::printf("replay ok: %zu artifacts reproduced\n", got.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entropy-rate schedule toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", manifest_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed_flag;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "JSON config file");
    if (needs_config) c->required();
    sub->add_option("--out", out_dir, "output directory (all paths relative)");
    sub->add_option("--set", overrides,
                    "override a config field, e.g. --set schedule.steps=20");
    sub->add_option("--seed", seed_flag, "override the run seed");
  };
  for (const char* name :
       {"calibrate", "schedule", "sample", "evaluate", "bench"})
    add_common(app.add_subcommand(name), true);
  auto* replay = app.add_subcommand("replay");
  replay->add_option("--manifest", manifest_path, "manifest to re-execute")
      ->required();
  std::string replay_out;
  replay->add_option("--out", replay_out,
                     "output directory (default: the manifest's directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub->get_name() == "replay")
      return run_replay(manifest_path, replay_out);
    return run_command(sub->get_name(), config_path, out_dir, overrides,
                       seed_flag);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericalCodes.count(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
