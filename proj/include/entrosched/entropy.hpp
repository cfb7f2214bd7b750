#pragma once

// Calibration-set construction and the conditional-marginal entropy-rate
// estimator, with Hutchinson and finite-difference derivative machinery.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "entrosched/bridges.hpp"
#include "entrosched/core.hpp"

namespace entrosched {

enum class ProbeDistribution { Rademacher, Gaussian };

struct ProbeConfig {
  std::size_t count = 4;
  ProbeDistribution distribution = ProbeDistribution::Rademacher;
  std::uint64_t seed = 0;
  bool shared_across_fields = true;
};

struct CalibrationRecord {
  Vec state;
  std::size_t cond_i = 0;  // index into mixture sources
  std::size_t cond_j = 0;  // index into mixture targets
  double time = 0.0;
};

struct CalibrationSet {
  std::vector<CalibrationRecord> records;
  Vec mesh;  // strictly increasing, inside (0,1)
  std::uint64_t seed = 0;

  void validate() const {
    for (std::size_t j = 0; j + 1 < mesh.size(); ++j)
      if (mesh[j + 1] <= mesh[j])
        throw Error("NonMonotone", "calibration mesh not strictly increasing");
    if (!mesh.empty() && (mesh.front() <= 0.0 || mesh.back() >= 1.0))
      throw Error("BadValue", "calibration mesh must lie inside (0,1)");
  }
};

// Uniform mesh on [eps, 1-eps] with M points; for each mesh time, n
// condition pairs drawn categorically from the coupling and states drawn
// from the conditional bridge Gaussian x = m_t + sigma(t) g.
inline CalibrationSet build_calibration_set(const BridgeMixture& mix,
                                            std::size_t mesh_size,
                                            double eps,
                                            std::size_t states_per_time,
                                            std::uint64_t seed) {
  if (!(eps > 0.0 && eps < 0.5)) throw Error("BadEps", "need 0 < eps < 0.5");
  if (mesh_size < 2) throw Error("TooShort", "mesh needs >= 2 points");
  if (states_per_time < 1) throw Error("BadValue", "need n >= 1");

  double total = 0.0;
  for (double p : mix.coupling.data) total += p;
  if (!(total > 0.0))
    throw Error("DegenerateCoupling", "coupling has zero total mass");

  // cumulative over flattened coupling for categorical draws
  Vec cum(mix.coupling.data.size());
  double acc = 0.0;
  for (std::size_t e = 0; e < cum.size(); ++e) {
    acc += mix.coupling.data[e];
    cum[e] = acc / total;
  }
  cum.back() = 1.0;

  CalibrationSet cal;
  cal.seed = seed;
  cal.mesh.resize(mesh_size);
  for (std::size_t j = 0; j < mesh_size; ++j)
    cal.mesh[j] =
        eps + (1.0 - 2.0 * eps) * static_cast<double>(j) /
                  static_cast<double>(mesh_size - 1);

  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t j = 0; j < mesh_size; ++j) {
    const double t = cal.mesh[j];
    const double st = mix.sigma0 * std::sqrt(t * (1.0 - t));
    for (std::size_t i = 0; i < states_per_time; ++i) {
      auto rng = make_rng(seed, j * states_per_time + i);
      double u = unif(rng);
      std::size_t e = static_cast<std::size_t>(
          std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
      CalibrationRecord rec;
      rec.cond_i = e / n1;
      rec.cond_j = e % n1;
      rec.time = t;
      rec.state.resize(d);
      auto xi0 = mix.sources.points.row(rec.cond_i);
      auto xj1 = mix.targets.points.row(rec.cond_j);
      for (std::size_t k = 0; k < d; ++k) {
        double mt = (1.0 - t) * xi0[k] + t * xj1[k];
        rec.state[k] = mt + st * gauss(rng);
      }
      cal.records.push_back(std::move(rec));
    }
  }
  return cal;
}

namespace detail {

inline void draw_probe(std::mt19937_64& rng, ProbeDistribution dist,
                       std::span<double> u) {
  if (dist == ProbeDistribution::Rademacher) {
    std::uniform_int_distribution<int> coin(0, 1);
    for (double& ui : u) ui = coin(rng) ? 1.0 : -1.0;
  } else {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& ui : u) ui = gauss(rng);
  }
}

// u^T (dv/dx) u for one probe, via exact JVP when the field exposes one
// and central finite differences otherwise.
inline double quad_form(const FieldHandle& field, std::span<const double> x,
                        double t, std::span<const double> u, Vec& work_a,
                        Vec& work_b) {
  const std::size_t d = x.size();
  work_a.resize(d);
  if (field.jvp) {
    field.jvp(x, t, u, work_a);
  } else {
    double xinf = 0.0;
    for (double xi : x) xinf = std::max(xinf, std::abs(xi));
    const double h =
        std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + xinf);
    work_b.assign(x.begin(), x.end());
    for (std::size_t k = 0; k < d; ++k) work_b[k] += h * u[k];
    Vec vp(d), vm(d);
    field.eval(work_b, t, vp);
    for (std::size_t k = 0; k < d; ++k) work_b[k] -= 2.0 * h * u[k];
    field.eval(work_b, t, vm);
    for (std::size_t k = 0; k < d; ++k) work_a[k] = (vp[k] - vm[k]) / (2.0 * h);
  }
  double q = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    if (!std::isfinite(work_a[k]))
      throw Error("NonFiniteField", "field returned non-finite derivative");
    q += u[k] * work_a[k];
  }
  return q;
}

}  // namespace detail

struct HutchinsonEstimate {
  double estimate = 0.0;
  Vec per_probe;
};

inline HutchinsonEstimate hutchinson_divergence(const FieldHandle& field,
                                                std::span<const double> x,
                                                double t,
                                                const ProbeConfig& probes) {
  if (field.dim != x.size())
    throw Error("SizeMismatch", "field/state dimension mismatch");
  auto rng = make_rng(probes.seed);
  Vec u(x.size()), wa, wb;
  HutchinsonEstimate out;
  out.per_probe.reserve(probes.count);
  for (std::size_t l = 0; l < probes.count; ++l) {
    detail::draw_probe(rng, probes.distribution, u);
    out.per_probe.push_back(detail::quad_form(field, x, t, u, wa, wb));
  }
  for (double q : out.per_probe) out.estimate += q;
  out.estimate /= static_cast<double>(probes.count);
  return out;
}

// Per-condition conditional field factory and optional analytic conditional
// divergence (x, t) -> real.
using CondFieldFactory =
    std::function<FieldHandle(std::size_t i, std::size_t j)>;
using AnalyticDivergence = std::function<double(std::span<const double>, double)>;

namespace detail {

// Shared core of the two rate estimators: per mesh time, average a
// per-record scalar and collect its standard error.
template <class PerRecord>
inline RateCurve per_time_rate(const CalibrationSet& calset, PerRecord&& fn) {
  calset.validate();
  if (calset.records.empty()) throw Error("EmptyTimeSlice", "empty calset");
  RateCurve out;
  out.mesh = calset.mesh;
  out.values.resize(calset.mesh.size());
  out.se.resize(calset.mesh.size());
  for (std::size_t j = 0; j < calset.mesh.size(); ++j) {
    const double t = calset.mesh[j];
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < calset.records.size(); ++r) {
      const auto& rec = calset.records[r];
      if (rec.time != t) continue;
      double dr = fn(rec, r);
      sum += dr;
      sumsq += dr * dr;
      ++n;
    }
    if (n == 0) throw Error("EmptyTimeSlice", "no records at mesh time");
    double mean = sum / static_cast<double>(n);
    out.values[j] = std::abs(mean);
    double var = n > 1 ? (sumsq - sum * sum / static_cast<double>(n)) /
                             static_cast<double>(n - 1)
                       : 0.0;
    out.se[j] = std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
  return out;
}

}  // namespace detail

// |E[div v_cond - div v_marg]| per mesh time, shared probes per record
// across the two terms.  When analytic_cond is supplied the conditional
// term is evaluated exactly instead of by Hutchinson.
inline RateCurve cond_marg_rate(const CalibrationSet& calset,
                                const CondFieldFactory& cond_field,
                                const FieldHandle& marg_field,
                                const ProbeConfig& probes,
                                const AnalyticDivergence& analytic_cond = {}) {
  Vec u(marg_field.dim), wa, wb;
  return detail::per_time_rate(calset, [&](const CalibrationRecord& rec,
                                           std::size_t r) {
    auto rng = make_rng(probes.seed ^ 0x5eedc0deULL, r);
    double cond_div = 0.0, marg_div = 0.0;
    FieldHandle cf;
    if (!analytic_cond) cf = cond_field(rec.cond_i, rec.cond_j);
    for (std::size_t l = 0; l < probes.count; ++l) {
      detail::draw_probe(rng, probes.distribution, u);
      marg_div += detail::quad_form(marg_field, rec.state, rec.time, u, wa, wb);
      if (!analytic_cond)
        cond_div += detail::quad_form(cf, rec.state, rec.time, u, wa, wb);
    }
    marg_div /= static_cast<double>(probes.count);
    if (analytic_cond)
      cond_div = analytic_cond(rec.state, rec.time);
    else
      cond_div /= static_cast<double>(probes.count);
    return cond_div - marg_div;
  });
}

// Variant with independent probes per term; used to verify the variance
// reduction from probe sharing.
inline RateCurve cond_marg_rate_independent_probes(
    const CalibrationSet& calset, const CondFieldFactory& cond_field,
    const FieldHandle& marg_field, const ProbeConfig& probes) {
  Vec u(marg_field.dim), wa, wb;
  return detail::per_time_rate(
      calset, [&](const CalibrationRecord& rec, std::size_t r) {
        auto rng = make_rng(probes.seed ^ 0x7a11bf01ULL, r);
        FieldHandle cf = cond_field(rec.cond_i, rec.cond_j);
        double cond_div = 0.0, marg_div = 0.0;
        for (std::size_t l = 0; l < probes.count; ++l) {
          detail::draw_probe(rng, probes.distribution, u);
          marg_div +=
              detail::quad_form(marg_field, rec.state, rec.time, u, wa, wb);
        }
        for (std::size_t l = 0; l < probes.count; ++l) {
          detail::draw_probe(rng, probes.distribution, u);
          cond_div += detail::quad_form(cf, rec.state, rec.time, u, wa, wb);
        }
        return (cond_div - marg_div) / static_cast<double>(probes.count);
      });
}

using CondScoreFn =
    std::function<Vec(std::size_t i, std::size_t j, std::span<const double>,
                      double)>;
using ScoreFn = std::function<Vec(std::span<const double>, double)>;

// Score form of the same rate:
// |E[-(s_cond - s_marg)^T v_cond]| per mesh time.  Analytic-oracle only.
inline RateCurve score_form_rate(const CalibrationSet& calset,
                                 const CondFieldFactory& cond_field,
                                 const CondScoreFn& cond_score,
                                 const ScoreFn& marg_score) {
  return detail::per_time_rate(
      calset, [&](const CalibrationRecord& rec, std::size_t) {
        FieldHandle cf = cond_field(rec.cond_i, rec.cond_j);
        Vec v = cf(rec.state, rec.time);
        Vec sc = cond_score(rec.cond_i, rec.cond_j, rec.state, rec.time);
        Vec sm = marg_score(rec.state, rec.time);
        double dot = 0.0;
        for (std::size_t k = 0; k < v.size(); ++k)
          dot += (sc[k] - sm[k]) * v[k];
        return -dot;
      });
}

// Checks a score function against the finite-difference gradient of a
// log-density; used as the precondition guard for score_form_rate inputs.
inline double score_max_abs_error(const ScoreFn& score,
                                  const std::function<double(
                                      std::span<const double>, double)>& logp,
                                  std::span<const double> x, double t,
                                  double h = 1e-4) {
  Vec xs(x.begin(), x.end());
  Vec s = score(x, t);
  double worst = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    double orig = xs[k];
    xs[k] = orig + h;
    double lp = logp(xs, t);
    xs[k] = orig - h;
    double lm = logp(xs, t);
    xs[k] = orig;
    worst = std::max(worst, std::abs((lp - lm) / (2.0 * h) - s[k]));
  }
  return worst;
}

// dH/dt of the marginal = E[div vbar], Monte-Carlo over marginal samples.
inline double marginal_entropy_rate(const FieldHandle& marg_field,
                                    const SampleBatch& samples, double t,
                                    const ProbeConfig& probes) {
  samples.validate();
  double sum = 0.0;
  Vec u(marg_field.dim), wa, wb;
  for (std::size_t i = 0; i < samples.n(); ++i) {
    auto rng = make_rng(probes.seed, i);
    double div = 0.0;
    for (std::size_t l = 0; l < probes.count; ++l) {
      detail::draw_probe(rng, probes.distribution, u);
      div += detail::quad_form(marg_field, samples.points.row(i), t, u, wa, wb);
    }
    sum += div / static_cast<double>(probes.count);
  }
  return sum / static_cast<double>(samples.n());
}

inline json to_json(const CalibrationSet& cal) {
  json recs = json::array();
  for (const auto& r : cal.records)
    recs.push_back(json{{"state", r.state},
                        {"cond", {r.cond_i, r.cond_j}},
                        {"time", r.time}});
  return json{{"version", 1},
              {"seed", cal.seed},
              {"mesh", cal.mesh},
              {"records", recs}};
}

}  // namespace entrosched
