#pragma once

// Rate postprocessing, transforms, inverse-CDF grid construction, baseline
// schedulers, the boundary-concentration diagnostic, and the order-p
// optimal step density.

#include <cmath>
#include <string>
#include <vector>

#include "entrosched/core.hpp"

namespace entrosched {

enum class ScheduleKind { Entropic, Linear, Cosine, Sigmoid, Power, Log };
enum class Transform { Raw, Log1p };

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::Linear;
  Transform transform = Transform::Log1p;  // entropic only
  double gamma = 2.0;                      // power only
  double alpha = 9.0;                      // log only
  double sigmoid_a = 3.0;
  std::size_t steps = 10;  // N = number of intervals
  double floor_frac = 1e-8;
  std::size_t smoothing_window = 5;  // odd

  void validate() const {
    if (steps < 1) throw Error("BadSpec", "need N >= 1");
    if (!(gamma > 0.0)) throw Error("BadSpec", "gamma must be > 0");
    if (!(alpha > 0.0)) throw Error("BadSpec", "alpha must be > 0");
    if (!(sigmoid_a > 0.0)) throw Error("BadSpec", "sigmoid a must be > 0");
    if (!(floor_frac > 0.0)) throw Error("BadSpec", "floor must be > 0");
    if (smoothing_window % 2 == 0)
      throw Error("BadSpec", "smoothing window must be odd");
  }
};

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "entropic") return ScheduleKind::Entropic;
  if (s == "linear") return ScheduleKind::Linear;
  if (s == "cosine") return ScheduleKind::Cosine;
  if (s == "sigmoid") return ScheduleKind::Sigmoid;
  if (s == "power") return ScheduleKind::Power;
  if (s == "log") return ScheduleKind::Log;
  throw Error("BadSpec", "unknown schedule kind: " + s);
}

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Entropic: return "entropic";
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::Sigmoid: return "sigmoid";
    case ScheduleKind::Power: return "power";
    case ScheduleKind::Log: return "log";
  }
  return "?";
}

// Non-finite repair, positive floor, centered moving average (shrinking
// windows at the mesh boundary).
inline RateCurve postprocess_rate(const RateCurve& curve, double floor_value,
                                  std::size_t window) {
  if (window % 2 == 0 || window < 1 || window > curve.mesh.size())
    throw Error("BadSpec", "window must be odd and <= mesh length");
  const std::size_t M = curve.mesh.size();
  RateCurve out = curve;

  // replace non-finite values by interpolation of finite neighbors
  std::vector<std::size_t> good;
  for (std::size_t j = 0; j < M; ++j)
    if (std::isfinite(curve.values[j])) good.push_back(j);
  if (good.empty()) throw Error("AllValuesNonFinite", "no finite rate values");
  for (std::size_t j = 0; j < M; ++j) {
    if (std::isfinite(out.values[j])) continue;
    auto it = std::lower_bound(good.begin(), good.end(), j);
    if (it == good.begin()) {
      out.values[j] = curve.values[good.front()];
    } else if (it == good.end()) {
      out.values[j] = curve.values[good.back()];
    } else {
      std::size_t hi = *it, lo = *(it - 1);
      double w = (curve.mesh[j] - curve.mesh[lo]) /
                 (curve.mesh[hi] - curve.mesh[lo]);
      out.values[j] =
          curve.values[lo] + w * (curve.values[hi] - curve.values[lo]);
    }
  }

  for (double& v : out.values) v = std::max(v, floor_value);

  if (window > 1) {
    const std::size_t half = window / 2;
    Vec smoothed(M);
    for (std::size_t j = 0; j < M; ++j) {
      std::size_t lo = j >= half ? j - half : 0;
      std::size_t hi = std::min(j + half, M - 1);
      double s = 0.0;
      for (std::size_t k = lo; k <= hi; ++k) s += out.values[k];
      smoothed[j] = s / static_cast<double>(hi - lo + 1);
    }
    out.values = std::move(smoothed);
    for (double& v : out.values) v = std::max(v, floor_value);
  }
  out.se.clear();
  return out;
}

inline double default_floor(const RateCurve& curve, double frac = 1e-8) {
  double mx = 0.0;
  for (double v : curve.values)
    if (std::isfinite(v)) mx = std::max(mx, v);
  return mx > 0.0 ? frac * mx : frac;
}

inline RateCurve apply_transform(const RateCurve& curve, Transform phi) {
  RateCurve out = curve;
  if (phi == Transform::Log1p)
    for (double& v : out.values) v = std::log1p(v);
  out.se.clear();
  return out;
}

// Normalized cumulative of the curve on [0,1] (constant extrapolation
// beyond the mesh hull), evaluated at the given knots.
namespace detail {

struct Cumulative {
  Vec knots;  // 0, mesh..., 1
  Vec q;      // Q at knots, Q(0)=0, Q(1)=1, nondecreasing
};

inline Cumulative normalized_cumulative(const RateCurve& curve) {
  curve.validate();
  Cumulative c;
  c.knots.push_back(0.0);
  for (double s : curve.mesh)
    if (s > 0.0 && s < 1.0) c.knots.push_back(s);
  c.knots.push_back(1.0);
  c.q.resize(c.knots.size());
  c.q[0] = 0.0;
  for (std::size_t j = 1; j < c.knots.size(); ++j) {
    double a = c.knots[j - 1], b = c.knots[j];
    c.q[j] = c.q[j - 1] +
             0.5 * (curve.value_at(a) + curve.value_at(b)) * (b - a);
  }
  double total = c.q.back();
  if (!(total > 0.0)) throw Error("ZeroTotalMass", "rate integrates to zero");
  for (double& v : c.q) v /= total;
  for (std::size_t j = 1; j < c.q.size(); ++j)  // enforce monotonicity
    c.q[j] = std::max(c.q[j], c.q[j - 1]);
  c.q.back() = 1.0;
  return c;
}

}  // namespace detail

// t_k = Q^{-1}(k/N) by monotone piecewise-linear inversion of the
// trapezoid cumulative.
inline TimeGrid build_entropic_grid(const RateCurve& curve, std::size_t N) {
  if (N < 1) throw Error("BadSpec", "need N >= 1");
  auto c = detail::normalized_cumulative(curve);
  TimeGrid grid;
  grid.nodes.resize(N + 1);
  grid.nodes[0] = 0.0;
  grid.nodes[N] = 1.0;
  std::size_t seg = 0;
  for (std::size_t k = 1; k < N; ++k) {
    double target = static_cast<double>(k) / static_cast<double>(N);
    while (seg + 1 < c.q.size() - 1 && c.q[seg + 1] < target) ++seg;
    double q0 = c.q[seg], q1 = c.q[seg + 1];
    double t0 = c.knots[seg], t1 = c.knots[seg + 1];
    double t = q1 > q0 ? t0 + (target - q0) / (q1 - q0) * (t1 - t0) : t1;
    // strict monotonicity even through flat cumulative segments
    t = std::max(t, std::nextafter(grid.nodes[k - 1], 1.0));
    grid.nodes[k] = std::min(t, 1.0 - 1e-15);
  }
  require_valid(grid);
  return grid;
}

inline TimeGrid baseline_grid(const ScheduleSpec& spec) {
  spec.validate();
  const std::size_t N = spec.steps;
  TimeGrid grid;
  grid.nodes.resize(N + 1);
  auto logistic = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (std::size_t k = 0; k <= N; ++k) {
    double u = static_cast<double>(k) / static_cast<double>(N);
    double t;
    switch (spec.kind) {
      case ScheduleKind::Linear:
        t = u;
        break;
      case ScheduleKind::Cosine:
        t = (1.0 - std::cos(std::numbers::pi * u)) / 2.0;
        break;
      case ScheduleKind::Power:
        t = std::pow(u, spec.gamma);
        break;
      case ScheduleKind::Sigmoid: {
        double a = spec.sigmoid_a;
        t = (logistic(a * (2.0 * u - 1.0)) - logistic(-a)) /
            (logistic(a) - logistic(-a));
        break;
      }
      case ScheduleKind::Log:
        t = std::log1p(spec.alpha * u) / std::log1p(spec.alpha);
        break;
      default:
        throw Error("BadSpec", "baseline_grid does not build entropic grids");
    }
    grid.nodes[k] = t;
  }
  grid.nodes.front() = 0.0;
  grid.nodes.back() = 1.0;
  require_valid(grid);
  return grid;
}

// Boundary concentration ratio of a normalized schedule density:
// (mass on [0,eps] + mass on [1-eps,1]) / (2 eps).  Uniform density -> 1.
inline double bcr(const RateCurve& density, double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw Error("BadEps", "need 0 < eps < 0.5");
  double total = integrate_curve(density, 0.0, 1.0);
  if (std::abs(total - 1.0) > 1e-6)
    throw Error("UnnormalizedDensity", "density must integrate to 1");
  double mass = integrate_curve(density, 0.0, eps) +
                integrate_curve(density, 1.0 - eps, 1.0);
  return mass / (2.0 * eps);
}

inline double bcr(const TimeGrid& grid, double eps) {
  return bcr(grid_to_density(grid), eps);
}

// rho*(t) proportional to C(t)^{1/(p+1)}, normalized to unit mass.
inline RateCurve optimal_density(const RateCurve& C, std::size_t p) {
  C.validate();
  RateCurve rho = C;
  rho.se.clear();
  const double expo = 1.0 / static_cast<double>(p + 1);
  for (double& v : rho.values) v = std::pow(v, expo);
  double total = integrate_curve(rho, 0.0, 1.0);
  if (!(total > 0.0)) throw Error("ZeroTotalMass", "C integrates to zero");
  for (double& v : rho.values) v /= total;
  return rho;
}

// CLI-facing schedule export.
inline json schedule_to_json(const TimeGrid& grid, ScheduleKind kind,
                             Transform transform, double bcr_eps) {
  json j{{"version", 1},
         {"kind", to_string(kind)},
         {"transform", transform == Transform::Log1p ? "log1p" : "raw"},
         {"nodes", grid.nodes}};
  j["bcr"] = json{{"eps", bcr_eps}, {"value", bcr(grid, bcr_eps)}};
  return j;
}

}  // namespace entrosched
