#pragma once

// Analytic Gaussian/Brownian-bridge conditional objects, entropic-OT
// endpoint coupling, and the exact mixture marginal density/field/score.
// This layer is the ground-truth oracle everything else is checked against.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "entrosched/core.hpp"

namespace entrosched {

// Time domain for analytic bridge objects is clipped away from the
// t(1-t) singularity.
inline constexpr double kEpsMin = 1e-6;

inline void check_open_time(double t) {
  if (!(t > 0.0 && t < 1.0))
    throw Error("TimeOutOfOpenInterval", "t must lie in (0,1)");
}

inline double clip_time(double t, double eps = kEpsMin) {
  return std::clamp(t, eps, 1.0 - eps);
}

struct BrownianBridgeSpec {
  Vec x0;
  Vec x1;
  double sigma0 = 1.0;

  std::size_t dim() const { return x0.size(); }
  void validate() const {
    if (x0.size() != x1.size())
      throw Error("SizeMismatch", "bridge endpoints differ in dimension");
    if (!(sigma0 > 0.0)) throw Error("NonpositiveSigma", "sigma0 must be > 0");
    if (!all_finite(x0) || !all_finite(x1))
      throw Error("BadValue", "non-finite bridge endpoint");
  }
};

// m_t = (1-t) x0 + t x1,  sigma(t) = sigma0 sqrt(t(1-t))
inline std::pair<Vec, double> bb_moments(const BrownianBridgeSpec& spec,
                                         double t) {
  check_open_time(t);
  Vec mean(spec.dim());
  for (std::size_t i = 0; i < mean.size(); ++i)
    mean[i] = (1.0 - t) * spec.x0[i] + t * spec.x1[i];
  return {std::move(mean), spec.sigma0 * std::sqrt(t * (1.0 - t))};
}

// Contraction coefficient of the probability-flow field; sigma0 cancels.
inline double bb_flow_coeff(double t) {
  check_open_time(t);
  return (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));
}

// v_t(x | x0,x1) = (x1-x0) + (1-2t)/(2t(1-t)) (x - m_t)
inline Vec bb_flow_field(const BrownianBridgeSpec& spec,
                         std::span<const double> x, double t) {
  const double c = bb_flow_coeff(t);
  Vec out(spec.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double mt = (1.0 - t) * spec.x0[i] + t * spec.x1[i];
    out[i] = (spec.x1[i] - spec.x0[i]) + c * (x[i] - mt);
  }
  return out;
}

// div v = d (1-2t) / (2t(1-t)); independent of x and of the endpoints.
inline double bb_flow_divergence(std::size_t d, double t) {
  return static_cast<double>(d) * bb_flow_coeff(t);
}

// SDE drift u(x | x0,x1) = (x1-x0) + (1-2t)/(t(1-t)) (x - m_t).
// Satisfies u = 2 v - (x1 - x0) exactly.
inline Vec bb_sde_drift(const BrownianBridgeSpec& spec,
                        std::span<const double> x, double t) {
  check_open_time(t);
  const double c = (1.0 - 2.0 * t) / (t * (1.0 - t));
  Vec out(spec.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double mt = (1.0 - t) * spec.x0[i] + t * spec.x1[i];
    out[i] = (spec.x1[i] - spec.x0[i]) + c * (x[i] - mt);
  }
  return out;
}

// grad_x log p_t(x | x0,x1) = (m_t - x) / (sigma0^2 t(1-t))
inline Vec bb_cond_score(const BrownianBridgeSpec& spec,
                         std::span<const double> x, double t) {
  check_open_time(t);
  const double denom = spec.sigma0 * spec.sigma0 * t * (1.0 - t);
  Vec out(spec.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double mt = (1.0 - t) * spec.x0[i] + t * spec.x1[i];
    out[i] = (mt - x[i]) / denom;
  }
  return out;
}

// Velocity of a general Gaussian path N(mu(t), sigma(t)^2 I):
// v = mu' + sigma'/sigma (x - mu)
inline Vec gaussian_path_velocity(std::span<const double> mu,
                                  std::span<const double> dmu, double sigma,
                                  double dsigma, std::span<const double> x) {
  if (!(sigma > 0.0)) throw Error("NonpositiveSigma", "sigma must be > 0");
  Vec out(mu.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = dmu[i] + dsigma * (x[i] - mu[i]) / sigma;
  return out;
}

// --- entropic OT coupling ---------------------------------------------------

struct SinkhornResult {
  Matrix coupling;
  bool converged = false;
  std::size_t iterations = 0;
  double marginal_violation = 0.0;  // L1 over both marginals
};

// Log-domain Sinkhorn on squared-Euclidean cost with uniform endpoint
// weights.  Stable for small epsilon.
inline SinkhornResult sinkhorn_coupling(const SampleBatch& sources,
                                        const SampleBatch& targets,
                                        double epsilon_ot, double tol = 1e-9,
                                        std::size_t max_iter = 10000) {
  sources.validate();
  targets.validate();
  if (sources.dim() != targets.dim())
    throw Error("SizeMismatch", "endpoint dimensions differ");
  if (!(epsilon_ot > 0.0))
    throw Error("BadValue", "epsilon_ot must be positive");
  const std::size_t n0 = sources.n(), n1 = targets.n();
  const double la = -std::log(static_cast<double>(n0));
  const double lb = -std::log(static_cast<double>(n1));

  Matrix mlc(n0, n1);  // -cost/epsilon
  for (std::size_t i = 0; i < n0; ++i)
    for (std::size_t j = 0; j < n1; ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < sources.dim(); ++k) {
        double dd = sources.points(i, k) - targets.points(j, k);
        c += dd * dd;
      }
      mlc(i, j) = -c / epsilon_ot;
    }

  Vec f(n0, 0.0), g(n1, 0.0);  // scaled potentials f/eps, g/eps
  auto logsumexp_row = [&](std::size_t i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n1; ++j) m = std::max(m, mlc(i, j) + g[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n1; ++j) s += std::exp(mlc(i, j) + g[j] - m);
    return m + std::log(s);
  };
  auto logsumexp_col = [&](std::size_t j) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n0; ++i) m = std::max(m, mlc(i, j) + f[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n0; ++i) s += std::exp(mlc(i, j) + f[i] - m);
    return m + std::log(s);
  };

  SinkhornResult res;
  res.coupling = Matrix(n0, n1);
  auto fill_plan = [&]() {
    for (std::size_t i = 0; i < n0; ++i)
      for (std::size_t j = 0; j < n1; ++j)
        res.coupling(i, j) = std::exp(f[i] + g[j] + mlc(i, j));
  };
  auto violation = [&]() {
    double viol = 0.0;
    for (std::size_t i = 0; i < n0; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < n1; ++j) r += res.coupling(i, j);
      viol += std::abs(r - 1.0 / static_cast<double>(n0));
    }
    for (std::size_t j = 0; j < n1; ++j) {
      double cmass = 0.0;
      for (std::size_t i = 0; i < n0; ++i) cmass += res.coupling(i, j);
      viol += std::abs(cmass - 1.0 / static_cast<double>(n1));
    }
    return viol;
  };

  // Round the plan onto the exact uniform marginals: scale rows then
  // columns down to their targets, then spread the residual mass as a
  // rank-one correction.  Perturbs the plan by O(marginal_violation) and
  // makes downstream mixture weights exactly uniform.
  auto round_to_marginals = [&]() {
    const double a = 1.0 / static_cast<double>(n0);
    const double b = 1.0 / static_cast<double>(n1);
    Vec erow(n0, 0.0), ecol(n1, 0.0);
    for (std::size_t i = 0; i < n0; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < n1; ++j) r += res.coupling(i, j);
      double s = r > a ? a / r : 1.0;
      if (s < 1.0)
        for (std::size_t j = 0; j < n1; ++j) res.coupling(i, j) *= s;
    }
    for (std::size_t j = 0; j < n1; ++j) {
      double cmass = 0.0;
      for (std::size_t i = 0; i < n0; ++i) cmass += res.coupling(i, j);
      double s = cmass > b ? b / cmass : 1.0;
      if (s < 1.0)
        for (std::size_t i = 0; i < n0; ++i) res.coupling(i, j) *= s;
      ecol[j] = std::max(0.0, b - cmass);
    }
    double missing = 0.0;
    for (std::size_t i = 0; i < n0; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < n1; ++j) r += res.coupling(i, j);
      erow[i] = std::max(0.0, a - r);
      missing += erow[i];
    }
    if (missing > 0.0)
      for (std::size_t i = 0; i < n0; ++i)
        for (std::size_t j = 0; j < n1; ++j)
          res.coupling(i, j) += erow[i] * ecol[j] / missing;
  };

  for (std::size_t it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n0; ++i) f[i] = la - logsumexp_row(i);
    for (std::size_t j = 0; j < n1; ++j) g[j] = lb - logsumexp_col(j);
    res.iterations = it + 1;
    if ((it + 1) % 10 == 0 || it + 1 == max_iter) {
      fill_plan();
      res.marginal_violation = violation();
      if (res.marginal_violation <= tol) {
        res.converged = true;
        round_to_marginals();
        return res;
      }
    }
  }
  fill_plan();
  res.marginal_violation = violation();
  res.converged = res.marginal_violation <= tol;
  round_to_marginals();
  return res;
}

// --- bridge mixture ---------------------------------------------------------

struct BridgeMixture {
  SampleBatch sources;  // n0 x d
  SampleBatch targets;  // n1 x d
  Matrix coupling;      // n0 x n1, total mass 1
  double sigma0 = 1.0;

  std::size_t dim() const { return sources.dim(); }

  void validate(double tol = 1e-8) const {
    sources.validate();
    targets.validate();
    if (!(sigma0 > 0.0)) throw Error("NonpositiveSigma", "sigma0 must be > 0");
    if (coupling.rows != sources.n() || coupling.cols != targets.n())
      throw Error("SizeMismatch", "coupling shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < coupling.rows; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < coupling.cols; ++j) {
        double p = coupling(i, j);
        if (p < 0.0) throw Error("BadValue", "negative coupling entry");
        r += p;
      }
      total += r;
      if (std::abs(r - 1.0 / static_cast<double>(coupling.rows)) > tol)
        throw Error("BadValue", "coupling row sum off uniform weight");
    }
    if (std::abs(total - 1.0) > tol)
      throw Error("BadValue", "coupling total mass != 1");
  }

  BrownianBridgeSpec pair_spec(std::size_t i, std::size_t j) const {
    BrownianBridgeSpec s;
    s.x0.assign(sources.points.row(i).begin(), sources.points.row(i).end());
    s.x1.assign(targets.points.row(j).begin(), targets.points.row(j).end());
    s.sigma0 = sigma0;
    return s;
  }
};

inline constexpr double kDensityFloor = 1e-300;

namespace detail {

// Log of the component weights Pi_ij N(x; m_t^ij, sigma(t)^2 I) for all
// coupling entries with nonzero mass, plus the running max for
// log-sum-exp.  Shared by density/field/score evaluation.
struct MixtureLogTerms {
  std::vector<std::size_t> idx;  // flat i*n1+j of retained entries
  Vec logw;
  double max_logw = -std::numeric_limits<double>::infinity();
  double sigma_t = 0.0;
};

inline MixtureLogTerms mixture_log_terms(const BridgeMixture& mix,
                                         std::span<const double> x, double t) {
  check_open_time(t);
  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  const double st = mix.sigma0 * std::sqrt(t * (1.0 - t));
  const double inv2var = 1.0 / (2.0 * st * st);
  const double lognorm =
      -0.5 * static_cast<double>(d) *
      std::log(2.0 * std::numbers::pi * st * st);

  MixtureLogTerms out;
  out.sigma_t = st;
  for (std::size_t i = 0; i < mix.sources.n(); ++i) {
    auto xi0 = mix.sources.points.row(i);
    for (std::size_t j = 0; j < n1; ++j) {
      double pij = mix.coupling(i, j);
      if (pij <= 0.0) continue;
      auto xj1 = mix.targets.points.row(j);
      double q = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double mt = (1.0 - t) * xi0[k] + t * xj1[k];
        double dd = x[k] - mt;
        q += dd * dd;
      }
      double lw = std::log(std::max(pij, kDensityFloor)) + lognorm -
                  q * inv2var;
      out.idx.push_back(i * n1 + j);
      out.logw.push_back(lw);
      out.max_logw = std::max(out.max_logw, lw);
    }
  }
  return out;
}

}  // namespace detail

// p_t(x) = sum_ij Pi_ij N(x; m_t^ij, sigma(t)^2 I), log-sum-exp stabilized.
inline double mixture_marginal_logdensity(const BridgeMixture& mix,
                                          std::span<const double> x,
                                          double t) {
  auto terms = detail::mixture_log_terms(mix, x, t);
  if (terms.idx.empty()) throw Error("DegenerateCoupling", "zero total mass");
  double s = 0.0;
  for (double lw : terms.logw) s += std::exp(lw - terms.max_logw);
  return terms.max_logw + std::log(s);
}

inline double mixture_marginal_density(const BridgeMixture& mix,
                                       std::span<const double> x, double t) {
  return std::exp(mixture_marginal_logdensity(mix, x, t));
}

// Marginal field as the posterior-weighted average of conditional fields.
inline Vec mixture_marginal_field(const BridgeMixture& mix,
                                  std::span<const double> x, double t) {
  auto terms = detail::mixture_log_terms(mix, x, t);
  if (terms.idx.empty()) throw Error("DegenerateCoupling", "zero total mass");
  if (!std::isfinite(terms.max_logw))
    throw Error("UnderflowAllComponents", "all component densities underflow");
  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  const double c = bb_flow_coeff(t);
  Vec out(d, 0.0);
  double wsum = 0.0;
  for (std::size_t e = 0; e < terms.idx.size(); ++e) {
    double w = std::exp(terms.logw[e] - terms.max_logw);
    if (w == 0.0) continue;
    std::size_t i = terms.idx[e] / n1, j = terms.idx[e] % n1;
    auto xi0 = mix.sources.points.row(i);
    auto xj1 = mix.targets.points.row(j);
    for (std::size_t k = 0; k < d; ++k) {
      double mt = (1.0 - t) * xi0[k] + t * xj1[k];
      out[k] += w * ((xj1[k] - xi0[k]) + c * (x[k] - mt));
    }
    wsum += w;
  }
  for (double& v : out) v /= wsum;
  return out;
}

// Marginal score: posterior-weighted average of (m_t^ij - x)/sigma(t)^2.
inline Vec mixture_marginal_score(const BridgeMixture& mix,
                                  std::span<const double> x, double t) {
  auto terms = detail::mixture_log_terms(mix, x, t);
  if (terms.idx.empty()) throw Error("DegenerateCoupling", "zero total mass");
  if (!std::isfinite(terms.max_logw))
    throw Error("UnderflowAllComponents", "all component densities underflow");
  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  const double invvar = 1.0 / (terms.sigma_t * terms.sigma_t);
  Vec out(d, 0.0);
  double wsum = 0.0;
  for (std::size_t e = 0; e < terms.idx.size(); ++e) {
    double w = std::exp(terms.logw[e] - terms.max_logw);
    if (w == 0.0) continue;
    std::size_t i = terms.idx[e] / n1, j = terms.idx[e] % n1;
    auto xi0 = mix.sources.points.row(i);
    auto xj1 = mix.targets.points.row(j);
    for (std::size_t k = 0; k < d; ++k) {
      double mt = (1.0 - t) * xi0[k] + t * xj1[k];
      out[k] += w * (mt - x[k]) * invvar;
    }
    wsum += w;
  }
  for (double& v : out) v /= wsum;
  return out;
}

// Generative SDE drift of the mixture: the posterior-weighted pinned
// drifts (x1-x0) - (x-m_t)/(1-t), which equals v_marg + (sigma0^2/2) score.
// With constant diffusion sigma0 this transports the source marginal to
// the target marginal (per-bridge variance sigma0^2 t(1-t)).  Note this is
// deliberately NOT the posterior average of bb_sde_drift: that conditional
// object is not a transport drift under constant-sigma0 noise.
inline Vec mixture_sde_drift(const BridgeMixture& mix,
                             std::span<const double> x, double t) {
  auto terms = detail::mixture_log_terms(mix, x, t);
  if (terms.idx.empty()) throw Error("DegenerateCoupling", "zero total mass");
  if (!std::isfinite(terms.max_logw))
    throw Error("UnderflowAllComponents", "all component densities underflow");
  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  const double c = -1.0 / (1.0 - t);
  Vec out(d, 0.0);
  double wsum = 0.0;
  for (std::size_t e = 0; e < terms.idx.size(); ++e) {
    double w = std::exp(terms.logw[e] - terms.max_logw);
    if (w == 0.0) continue;
    std::size_t i = terms.idx[e] / n1, j = terms.idx[e] % n1;
    auto xi0 = mix.sources.points.row(i);
    auto xj1 = mix.targets.points.row(j);
    for (std::size_t k = 0; k < d; ++k) {
      double mt = (1.0 - t) * xi0[k] + t * xj1[k];
      out[k] += w * ((xj1[k] - xi0[k]) + c * (x[k] - mt));
    }
    wsum += w;
  }
  for (double& v : out) v /= wsum;
  return out;
}

// Exact (d vbar / dx) u.  With posterior weights w_i, component fields
// v_i (Jacobian c(t) I) and component scores s_i,
//   grad w_i = w_i (s_i - sbar),  sbar = sum w_j s_j,
// so (J vbar) u = sum_i w_i [ c u + ((s_i - sbar)^T u) v_i ].
inline Vec mixture_field_jvp(const BridgeMixture& mix,
                             std::span<const double> x, double t,
                             std::span<const double> u) {
  auto terms = detail::mixture_log_terms(mix, x, t);
  if (terms.idx.empty()) throw Error("DegenerateCoupling", "zero total mass");
  if (!std::isfinite(terms.max_logw))
    throw Error("UnderflowAllComponents", "all component densities underflow");
  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  const double c = bb_flow_coeff(t);
  const double invvar = 1.0 / (terms.sigma_t * terms.sigma_t);

  double wsum = 0.0;
  Vec sbar(d, 0.0);
  std::vector<Vec> vi(terms.idx.size(), Vec(d));
  std::vector<Vec> si(terms.idx.size(), Vec(d));
  Vec w(terms.idx.size());
  for (std::size_t e = 0; e < terms.idx.size(); ++e) {
    w[e] = std::exp(terms.logw[e] - terms.max_logw);
    std::size_t i = terms.idx[e] / n1, j = terms.idx[e] % n1;
    auto xi0 = mix.sources.points.row(i);
    auto xj1 = mix.targets.points.row(j);
    for (std::size_t k = 0; k < d; ++k) {
      double mt = (1.0 - t) * xi0[k] + t * xj1[k];
      vi[e][k] = (xj1[k] - xi0[k]) + c * (x[k] - mt);
      si[e][k] = (mt - x[k]) * invvar;
      sbar[k] += w[e] * si[e][k];
    }
    wsum += w[e];
  }
  for (double& s : sbar) s /= wsum;

  Vec out(d, 0.0);
  for (std::size_t e = 0; e < terms.idx.size(); ++e) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += (si[e][k] - sbar[k]) * u[k];
    for (std::size_t k = 0; k < d; ++k)
      out[k] += w[e] * (c * u[k] + dot * vi[e][k]);
  }
  for (double& v : out) v /= wsum;
  return out;
}

// Field evaluation at clipped time: the posterior weights and the
// contraction coefficient use the clipped time (the Gaussian terms are
// singular at the endpoints) but the conditional means stay at the
// requested time, so the bridge mean line is an exact invariant even on
// grids that touch t=0 or t=1.
inline Vec mixture_field_clipped(const BridgeMixture& mix,
                                 std::span<const double> x, double t) {
  const double tc = clip_time(t);
  if (tc == t) return mixture_marginal_field(mix, x, t);
  auto terms = detail::mixture_log_terms(mix, x, tc);
  if (terms.idx.empty()) throw Error("DegenerateCoupling", "zero total mass");
  if (!std::isfinite(terms.max_logw))
    throw Error("UnderflowAllComponents", "all component densities underflow");
  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  const double c = bb_flow_coeff(tc);
  Vec out(d, 0.0);
  double wsum = 0.0;
  for (std::size_t e = 0; e < terms.idx.size(); ++e) {
    double w = std::exp(terms.logw[e] - terms.max_logw);
    if (w == 0.0) continue;
    std::size_t i = terms.idx[e] / n1, j = terms.idx[e] % n1;
    auto xi0 = mix.sources.points.row(i);
    auto xj1 = mix.targets.points.row(j);
    for (std::size_t k = 0; k < d; ++k) {
      double mt = (1.0 - t) * xi0[k] + t * xj1[k];
      out[k] += w * ((xj1[k] - xi0[k]) + c * (x[k] - mt));
    }
    wsum += w;
  }
  for (double& v : out) v /= wsum;
  return out;
}

// Same clipping convention for the generative SDE drift.
inline Vec mixture_drift_clipped(const BridgeMixture& mix,
                                 std::span<const double> x, double t) {
  const double tc = clip_time(t);
  if (tc == t) return mixture_sde_drift(mix, x, t);
  auto terms = detail::mixture_log_terms(mix, x, tc);
  if (terms.idx.empty()) throw Error("DegenerateCoupling", "zero total mass");
  if (!std::isfinite(terms.max_logw))
    throw Error("UnderflowAllComponents", "all component densities underflow");
  const std::size_t d = mix.dim();
  const std::size_t n1 = mix.targets.n();
  const double c = -1.0 / (1.0 - tc);
  Vec out(d, 0.0);
  double wsum = 0.0;
  for (std::size_t e = 0; e < terms.idx.size(); ++e) {
    double w = std::exp(terms.logw[e] - terms.max_logw);
    if (w == 0.0) continue;
    std::size_t i = terms.idx[e] / n1, j = terms.idx[e] % n1;
    auto xi0 = mix.sources.points.row(i);
    auto xj1 = mix.targets.points.row(j);
    for (std::size_t k = 0; k < d; ++k) {
      double mt = (1.0 - t) * xi0[k] + t * xj1[k];
      out[k] += w * ((xj1[k] - xi0[k]) + c * (x[k] - mt));
    }
    wsum += w;
  }
  for (double& v : out) v /= wsum;
  return out;
}

// FieldHandle adapters over the analytic mixture, with exact JVPs.
inline FieldHandle mixture_field_handle(const BridgeMixture& mix,
                                        bool with_jvp = true) {
  FieldHandle h;
  h.name = "mixture_marginal_field";
  h.dim = mix.dim();
  h.eps_min = kEpsMin;
  h.eval = [mix](std::span<const double> x, double t, std::span<double> out) {
    Vec v = mixture_field_clipped(mix, x, t);
    std::copy(v.begin(), v.end(), out.begin());
  };
  if (with_jvp)
    h.jvp = [mix](std::span<const double> x, double t,
                  std::span<const double> u, std::span<double> out) {
      Vec v = mixture_field_jvp(mix, x, clip_time(t), u);
      std::copy(v.begin(), v.end(), out.begin());
    };
  return h;
}

inline FieldHandle bb_field_handle(const BrownianBridgeSpec& spec) {
  FieldHandle h;
  h.name = "bb_flow_field";
  h.dim = spec.dim();
  h.eps_min = kEpsMin;
  h.eval = [spec](std::span<const double> x, double t, std::span<double> out) {
    // Clip only the contraction coefficient; keep the mean at the
    // requested time so the mean line stays invariant through clipped
    // endpoints.
    double c = bb_flow_coeff(clip_time(t));
    for (std::size_t k = 0; k < x.size(); ++k) {
      double mt = (1.0 - t) * spec.x0[k] + t * spec.x1[k];
      out[k] = (spec.x1[k] - spec.x0[k]) + c * (x[k] - mt);
    }
  };
  h.jvp = [spec](std::span<const double> x, double t,
                 std::span<const double> u, std::span<double> out) {
    double c = bb_flow_coeff(clip_time(t));
    for (std::size_t k = 0; k < u.size(); ++k) out[k] = c * u[k];
  };
  return h;
}

// --- analytic interpolation profiles ---------------------------------------

enum class ProfileKind { LinearOT, VP, Cosine, BrownianBridge };

inline double analytic_profile(ProfileKind kind, double t, std::size_t d) {
  if (!(t > 0.0 && t < 1.0))
    throw Error("TimeOutOfDomain", "profile requires t in (0,1)");
  const double dd = static_cast<double>(d);
  switch (kind) {
    case ProfileKind::LinearOT:
      return 0.0;
    case ProfileKind::VP:
      return dd * t / (1.0 - t * t);
    case ProfileKind::Cosine:
      return dd * std::numbers::pi * std::tan(std::numbers::pi * t / 2.0) / 2.0;
    case ProfileKind::BrownianBridge:
      return bb_flow_divergence(d, t);
  }
  throw Error("TimeOutOfDomain", "unknown profile kind");
}

// --- serialization ----------------------------------------------------------

inline json to_json(const BridgeMixture& mix) {
  auto mat_rows = [](const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows; ++i)
      rows.push_back(Vec(m.row(i).begin(), m.row(i).end()));
    return rows;
  };
  return json{{"version", 1},
              {"sigma0", mix.sigma0},
              {"sources", mat_rows(mix.sources.points)},
              {"targets", mat_rows(mix.targets.points)},
              {"coupling", mat_rows(mix.coupling)}};
}

inline BridgeMixture mixture_from_json(const json& j) {
  if (j.value("version", 0) != 1)
    throw Error("BadVersion", "BridgeMixture json");
  auto read_mat = [](const json& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < m.rows; ++i) {
      Vec r = rows[i].get<Vec>();
      std::copy(r.begin(), r.end(), m.row(i).begin());
    }
    return m;
  };
  BridgeMixture mix;
  mix.sigma0 = j.at("sigma0").get<double>();
  mix.sources.points = read_mat(j.at("sources"));
  mix.targets.points = read_mat(j.at("targets"));
  mix.coupling = read_mat(j.at("coupling"));
  return mix;
}

}  // namespace entrosched
