#pragma once

// Fixed-grid deterministic and stochastic one-step integrators.  The grid
// is the entire schedule; there is no in-flight adaptation.

#include <cmath>
#include <functional>
#include <vector>

#include "entrosched/core.hpp"

namespace entrosched {

enum class OdeMethod { Euler, Heun };
enum class SdeMethod { EulerMaruyama, SdeHeun };

struct Trajectory {
  TimeGrid times;
  Matrix states;  // (N+1) x d
  std::size_t nfe = 0;
  bool completed = true;
  std::size_t failure_index = 0;  // first non-finite step when !completed
};

inline std::size_t ode_nfe(OdeMethod m, std::size_t intervals) {
  return m == OdeMethod::Euler ? intervals : 2 * intervals;
}
inline std::size_t sde_nfe(SdeMethod m, std::size_t intervals) {
  return m == SdeMethod::EulerMaruyama ? intervals : 2 * intervals;
}

inline Trajectory ode_integrate(const FieldHandle& field, const Vec& x_init,
                                const TimeGrid& grid, OdeMethod method) {
  require_valid(grid);
  const std::size_t d = x_init.size();
  const std::size_t N = grid.intervals();
  Trajectory traj;
  traj.times = grid;
  traj.states = Matrix(N + 1, d);
  traj.nfe = 0;
  std::copy(x_init.begin(), x_init.end(), traj.states.row(0).begin());

  Vec v(d), v2(d), pred(d);
  for (std::size_t k = 0; k < N; ++k) {
    const double t0 = grid.nodes[k], t1 = grid.nodes[k + 1];
    const double dt = t1 - t0;  // signed by orientation
    auto xk = traj.states.row(k);
    auto xk1 = traj.states.row(k + 1);
    field.eval(xk, t0, v);
    ++traj.nfe;
    if (method == OdeMethod::Euler) {
      for (std::size_t i = 0; i < d; ++i) xk1[i] = xk[i] + dt * v[i];
    } else {
      for (std::size_t i = 0; i < d; ++i) pred[i] = xk[i] + dt * v[i];
      field.eval(pred, t1, v2);
      ++traj.nfe;
      for (std::size_t i = 0; i < d; ++i)
        xk1[i] = xk[i] + 0.5 * dt * (v[i] + v2[i]);
    }
    if (!all_finite(xk1)) {
      traj.completed = false;
      traj.failure_index = k + 1;
      return traj;
    }
  }
  return traj;
}

using SigmaFn = std::function<double(double)>;

inline Trajectory sde_integrate(const FieldHandle& drift,
                                const SigmaFn& sigma_fn, const Vec& x_init,
                                const TimeGrid& grid, SdeMethod method,
                                std::uint64_t seed) {
  require_valid(grid);
  const std::size_t d = x_init.size();
  const std::size_t N = grid.intervals();
  Trajectory traj;
  traj.times = grid;
  traj.states = Matrix(N + 1, d);
  traj.nfe = 0;
  std::copy(x_init.begin(), x_init.end(), traj.states.row(0).begin());

  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec v(d), v2(d), pred(d), noise(d);
  for (std::size_t k = 0; k < N; ++k) {
    const double t0 = grid.nodes[k], t1 = grid.nodes[k + 1];
    const double dt = t1 - t0;
    const double sig = sigma_fn(t0);
    if (!std::isfinite(sig))
      throw Error("BadValue", "non-finite diffusion at grid node");
    const double root = std::sqrt(std::abs(dt)) * sig;
    for (std::size_t i = 0; i < d; ++i) noise[i] = root * gauss(rng);

    auto xk = traj.states.row(k);
    auto xk1 = traj.states.row(k + 1);
    drift.eval(xk, t0, v);
    ++traj.nfe;
    if (method == SdeMethod::EulerMaruyama) {
      for (std::size_t i = 0; i < d; ++i)
        xk1[i] = xk[i] + dt * v[i] + noise[i];
    } else {
      // drift by Heun predictor-corrector, noise added once per step
      for (std::size_t i = 0; i < d; ++i)
        pred[i] = xk[i] + dt * v[i] + noise[i];
      drift.eval(pred, t1, v2);
      ++traj.nfe;
      for (std::size_t i = 0; i < d; ++i)
        xk1[i] = xk[i] + 0.5 * dt * (v[i] + v2[i]) + noise[i];
    }
    if (!all_finite(xk1)) {
      traj.completed = false;
      traj.failure_index = k + 1;
      return traj;
    }
  }
  return traj;
}

// Batch endpoint sampling: independent paths with deterministic per-path
// seeds derived from (seed, path index).
inline SampleBatch sample_endpoints_ode(const FieldHandle& field,
                                        const SampleBatch& init,
                                        const TimeGrid& grid, OdeMethod method,
                                        std::size_t* nfe_out = nullptr) {
  SampleBatch out;
  out.points = Matrix(init.n(), init.dim());
  out.seed = init.seed;
  std::size_t nfe = 0;
  Vec x0(init.dim());
  for (std::size_t p = 0; p < init.n(); ++p) {
    auto r = init.points.row(p);
    x0.assign(r.begin(), r.end());
    Trajectory traj = ode_integrate(field, x0, grid, method);
    if (!traj.completed)
      throw Error("NonFiniteState",
                  "path " + std::to_string(p) + " failed at step " +
                      std::to_string(traj.failure_index));
    auto last = traj.states.row(grid.intervals());
    std::copy(last.begin(), last.end(), out.points.row(p).begin());
    nfe = traj.nfe;
  }
  if (nfe_out) *nfe_out = nfe;
  return out;
}

inline SampleBatch sample_endpoints_sde(const FieldHandle& drift,
                                        const SigmaFn& sigma_fn,
                                        const SampleBatch& init,
                                        const TimeGrid& grid, SdeMethod method,
                                        std::uint64_t seed,
                                        std::size_t* nfe_out = nullptr) {
  SampleBatch out;
  out.points = Matrix(init.n(), init.dim());
  out.seed = seed;
  std::size_t nfe = 0;
  Vec x0(init.dim());
  for (std::size_t p = 0; p < init.n(); ++p) {
    auto r = init.points.row(p);
    x0.assign(r.begin(), r.end());
    Trajectory traj = sde_integrate(drift, sigma_fn, x0, grid, method,
                                    splitmix64(seed) ^ p);
    if (!traj.completed)
      throw Error("NonFiniteState",
                  "path " + std::to_string(p) + " failed at step " +
                      std::to_string(traj.failure_index));
    auto last = traj.states.row(grid.intervals());
    std::copy(last.begin(), last.end(), out.points.row(p).begin());
    nfe = traj.nfe;
  }
  if (nfe_out) *nfe_out = nfe;
  return out;
}

// CSV export: one block per path with header "t,x_1,...,x_d".
inline std::string trajectory_to_csv(const Trajectory& traj) {
  std::string out = "t";
  for (std::size_t i = 0; i < traj.states.cols; ++i)
    out += ",x_" + std::to_string(i + 1);
  out += "\n";
  char buf[64];
  for (std::size_t k = 0; k < traj.states.rows; ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", traj.times.nodes[k]);
    out += buf;
    for (std::size_t i = 0; i < traj.states.cols; ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g", traj.states(k, i));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace entrosched
