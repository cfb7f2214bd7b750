#pragma once

// Small trainable residual vector field with exact forward-mode
// derivative-vector products, trained by conditional flow matching on
// four 2D transport scenarios.

#include <cmath>
#include <vector>

#include "entrosched/bridges.hpp"
#include "entrosched/core.hpp"
#include "entrosched/entropy.hpp"

namespace entrosched {

// --- dual numbers for forward-mode JVPs -------------------------------------

struct Dual {
  double val = 0.0;
  double dot = 0.0;

  Dual() = default;
  Dual(double v) : val(v) {}
  Dual(double v, double d) : val(v), dot(d) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.val + b.val, a.dot + b.dot}; }
inline Dual operator-(Dual a, Dual b) { return {a.val - b.val, a.dot - b.dot}; }
inline Dual operator*(Dual a, Dual b) {
  return {a.val * b.val, a.val * b.dot + a.dot * b.val};
}
inline Dual operator*(double a, Dual b) { return {a * b.val, a * b.dot}; }
inline Dual tanh(Dual a) {
  double t = std::tanh(a.val);
  return {t, (1.0 - t * t) * a.dot};
}
inline double value(double x) { return x; }
inline double value(Dual x) { return x.val; }
inline double tangent(double) { return 0.0; }
inline double tangent(Dual x) { return x.dot; }

// --- model ------------------------------------------------------------------

// v(x,t) = x + gate * net([x;t]); net: (d+1) -> h -> h -> d, tanh.
struct ResidualFieldParams {
  std::size_t dim = 2;
  std::size_t hidden = 64;
  Vec w1, b1;  // h x (d+1), h
  Vec w2, b2;  // h x h, h
  Vec w3, b3;  // d x h, d
  double gate = 1.0;

  std::size_t in() const { return dim + 1; }

  void validate() const {
    auto check = [](const Vec& v) {
      if (!all_finite(v)) throw Error("NonFiniteParams", "non-finite weight");
    };
    check(w1);
    check(b1);
    check(w2);
    check(b2);
    check(w3);
    check(b3);
    if (!std::isfinite(gate)) throw Error("NonFiniteParams", "gate");
    if (w1.size() != hidden * in() || w2.size() != hidden * hidden ||
        w3.size() != dim * hidden)
      throw Error("SizeMismatch", "parameter shapes inconsistent");
  }
};

inline ResidualFieldParams init_params(std::size_t dim, std::size_t hidden,
                                       std::uint64_t seed) {
  ResidualFieldParams p;
  p.dim = dim;
  p.hidden = hidden;
  auto rng = make_rng(seed, 0xf10aULL);
  auto fill = [&](Vec& w, std::size_t n, std::size_t fan_in) {
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(double(fan_in)));
    w.resize(n);
    for (double& x : w) x = g(rng);
  };
  fill(p.w1, hidden * p.in(), p.in());
  p.b1.assign(hidden, 0.0);
  fill(p.w2, hidden * hidden, hidden);
  p.b2.assign(hidden, 0.0);
  fill(p.w3, dim * hidden, hidden);
  p.b3.assign(dim, 0.0);
  p.gate = 1.0;
  return p;
}

namespace detail {

// Forward pass templated over the scalar so the same code yields values
// (double) and exact directional derivatives (Dual).
template <class T>
inline void model_forward_t(const ResidualFieldParams& p,
                            const std::vector<T>& in, std::vector<T>& h1,
                            std::vector<T>& h2, std::vector<T>& out) {
  using std::tanh;  // overload set must include the double version
  const std::size_t H = p.hidden, I = p.in(), D = p.dim;
  h1.assign(H, T{});
  for (std::size_t r = 0; r < H; ++r) {
    T a = T{p.b1[r]};
    for (std::size_t c = 0; c < I; ++c) a = a + p.w1[r * I + c] * in[c];
    h1[r] = tanh(a);
  }
  h2.assign(H, T{});
  for (std::size_t r = 0; r < H; ++r) {
    T a = T{p.b2[r]};
    for (std::size_t c = 0; c < H; ++c) a = a + p.w2[r * H + c] * h1[c];
    h2[r] = tanh(a);
  }
  out.assign(D, T{});
  for (std::size_t r = 0; r < D; ++r) {
    T a = T{p.b3[r]};
    for (std::size_t c = 0; c < H; ++c) a = a + p.w3[r * H + c] * h2[c];
    out[r] = in[r] + p.gate * a;  // residual + gated net
  }
}

}  // namespace detail

inline Vec model_field(const ResidualFieldParams& p, std::span<const double> x,
                       double t) {
  std::vector<double> in(x.begin(), x.end());
  in.push_back(t);
  std::vector<double> h1, h2, out;
  detail::model_forward_t(p, in, h1, h2, out);
  return out;
}

// Exact (dv/dx) u by dual-number propagation; time tangent is held at 0.
inline Vec model_jvp(const ResidualFieldParams& p, std::span<const double> x,
                     double t, std::span<const double> u) {
  std::vector<Dual> in(p.in());
  for (std::size_t k = 0; k < p.dim; ++k) in[k] = Dual(x[k], u[k]);
  in[p.dim] = Dual(t, 0.0);
  std::vector<Dual> h1, h2, out;
  detail::model_forward_t(p, in, h1, h2, out);
  Vec jv(p.dim);
  for (std::size_t k = 0; k < p.dim; ++k) jv[k] = out[k].dot;
  return jv;
}

inline FieldHandle model_field_handle(const ResidualFieldParams& p) {
  FieldHandle h;
  h.name = "residual_model_field";
  h.dim = p.dim;
  h.eps_min = 0.0;
  h.eval = [p](std::span<const double> x, double t, std::span<double> out) {
    Vec v = model_field(p, x, t);
    std::copy(v.begin(), v.end(), out.begin());
  };
  h.jvp = [p](std::span<const double> x, double t, std::span<const double> u,
              std::span<double> out) {
    Vec v = model_jvp(p, x, t, u);
    std::copy(v.begin(), v.end(), out.begin());
  };
  return h;
}

// --- scenarios --------------------------------------------------------------

enum class ScenarioKind { CC, CD, DC, DD };
enum class Endpoint { Source, Target };

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::CC;
  double sigma0 = 0.5;
  std::uint64_t seed = 0;
};

inline ScenarioKind scenario_from_string(const std::string& s) {
  if (s == "CC" || s == "cc") return ScenarioKind::CC;
  if (s == "CD" || s == "cd") return ScenarioKind::CD;
  if (s == "DC" || s == "dc") return ScenarioKind::DC;
  if (s == "DD" || s == "dd") return ScenarioKind::DD;
  throw Error("BadSpec", "unknown scenario: " + s);
}

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::CC: return "CC";
    case ScenarioKind::CD: return "CD";
    case ScenarioKind::DC: return "DC";
    case ScenarioKind::DD: return "DD";
  }
  return "?";
}

// Fixed 2D endpoint distributions for the four transport geometries.
//   CC: N(0,I) -> N((4,0), I)
//   CD: N(0,I) -> 4 corners (+-3,+-3), scale 0.05
//   DC: mirror of CD
//   DD: 8-spoke ring radius 3, scale 0.05 -> same ring rotated by pi/8
inline SampleBatch scenario_sampler(const ScenarioSpec& spec, std::size_t n,
                                    Endpoint which) {
  if (n < 1) throw Error("BadValue", "need n >= 1");
  SampleBatch out;
  out.points = Matrix(n, 2);
  out.seed = spec.seed;
  auto rng = make_rng(spec.seed, which == Endpoint::Source ? 11 : 13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> pick4(0, 3);
  std::uniform_int_distribution<int> pick8(0, 7);

  auto corners = [&](std::size_t i) {
    static const double cx[4] = {3.0, 3.0, -3.0, -3.0};
    static const double cy[4] = {3.0, -3.0, 3.0, -3.0};
    int c = pick4(rng);
    out.points(i, 0) = cx[c] + 0.05 * gauss(rng);
    out.points(i, 1) = cy[c] + 0.05 * gauss(rng);
  };
  auto ring = [&](std::size_t i, double phase) {
    int c = pick8(rng);
    double ang = phase + c * std::numbers::pi / 4.0;
    out.points(i, 0) = 3.0 * std::cos(ang) + 0.05 * gauss(rng);
    out.points(i, 1) = 3.0 * std::sin(ang) + 0.05 * gauss(rng);
  };

  for (std::size_t i = 0; i < n; ++i) {
    switch (spec.kind) {
      case ScenarioKind::CC:
        if (which == Endpoint::Source) {
          out.points(i, 0) = gauss(rng);
          out.points(i, 1) = gauss(rng);
        } else {
          out.points(i, 0) = 4.0 + gauss(rng);
          out.points(i, 1) = gauss(rng);
        }
        break;
      case ScenarioKind::CD:
        if (which == Endpoint::Source) {
          out.points(i, 0) = gauss(rng);
          out.points(i, 1) = gauss(rng);
        } else {
          corners(i);
        }
        break;
      case ScenarioKind::DC:
        if (which == Endpoint::Source) {
          corners(i);
        } else {
          out.points(i, 0) = gauss(rng);
          out.points(i, 1) = gauss(rng);
        }
        break;
      case ScenarioKind::DD:
        ring(i, which == Endpoint::Source ? 0.0 : std::numbers::pi / 8.0);
        break;
    }
  }
  return out;
}

// --- conditional flow matching training -------------------------------------

enum class TargetKind { Flow, Drift };

struct TrainHyper {
  std::size_t hidden = 64;
  double lr = 1e-3;
  double momentum = 0.9;
  std::size_t batch = 256;
  std::size_t steps = 5000;
  double eps_time = 1e-2;
  std::uint64_t seed = 0;
  TargetKind target = TargetKind::Flow;
};

struct TrainResult {
  ResidualFieldParams params;
  Vec loss_history;
};

namespace detail {

struct Grads {
  Vec w1, b1, w2, b2, w3, b3;
  double gate = 0.0;
  void zero(const ResidualFieldParams& p) {
    w1.assign(p.w1.size(), 0.0);
    b1.assign(p.b1.size(), 0.0);
    w2.assign(p.w2.size(), 0.0);
    b2.assign(p.b2.size(), 0.0);
    w3.assign(p.w3.size(), 0.0);
    b3.assign(p.b3.size(), 0.0);
    gate = 0.0;
  }
};

// Accumulates gradients of 0.5 ||v(x,t) - y||^2 / batch into g.
inline double backprop_sample(const ResidualFieldParams& p,
                              const std::vector<double>& in, const Vec& y,
                              double scale, Grads& g) {
  const std::size_t H = p.hidden, I = p.in(), D = p.dim;
  std::vector<double> h1, h2, out;
  model_forward_t(p, in, h1, h2, out);

  Vec dv(D);
  double loss = 0.0;
  for (std::size_t k = 0; k < D; ++k) {
    double r = out[k] - y[k];
    loss += 0.5 * r * r;
    dv[k] = r * scale;
  }

  // out = in[:D] + gate * a3, a3 = W3 h2 + b3
  Vec da3(D);
  for (std::size_t k = 0; k < D; ++k) {
    double a3 = p.b3[k];
    for (std::size_t c = 0; c < H; ++c) a3 += p.w3[k * H + c] * h2[c];
    g.gate += dv[k] * a3;
    da3[k] = dv[k] * p.gate;
  }

  Vec dh2(H, 0.0);
  for (std::size_t r = 0; r < D; ++r) {
    for (std::size_t c = 0; c < H; ++c) {
      g.w3[r * H + c] += da3[r] * h2[c];
      dh2[c] += p.w3[r * H + c] * da3[r];
    }
    g.b3[r] += da3[r];
  }

  Vec da2(H);
  for (std::size_t r = 0; r < H; ++r) da2[r] = dh2[r] * (1.0 - h2[r] * h2[r]);
  Vec dh1(H, 0.0);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < H; ++c) {
      g.w2[r * H + c] += da2[r] * h1[c];
      dh1[c] += p.w2[r * H + c] * da2[r];
    }
    g.b2[r] += da2[r];
  }

  for (std::size_t r = 0; r < H; ++r) {
    double da1 = dh1[r] * (1.0 - h1[r] * h1[r]);
    for (std::size_t c = 0; c < I; ++c) g.w1[r * I + c] += da1 * in[c];
    g.b1[r] += da1;
  }
  return loss;
}

}  // namespace detail

// Minimizes E || v_theta(x_t, t) - target(x_t | z) ||^2 with (z, t, x_t)
// drawn per calibration-style sampling: t uniform on [eps, 1-eps], z from
// the coupling, x_t from the conditional bridge Gaussian.
inline TrainResult cfm_train(const BridgeMixture& mix, const TrainHyper& hyper) {
  mix.validate();
  const std::size_t d = mix.dim();
  TrainResult res;
  res.params = init_params(d, hyper.hidden, hyper.seed);
  res.loss_history.reserve(hyper.steps);

  // categorical sampler over coupling entries
  Vec cum(mix.coupling.data.size());
  double acc = 0.0;
  for (std::size_t e = 0; e < cum.size(); ++e) {
    acc += mix.coupling.data[e];
    cum[e] = acc;
  }
  if (!(acc > 0.0)) throw Error("DegenerateCoupling", "zero total mass");
  for (double& c : cum) c /= acc;
  cum.back() = 1.0;

  detail::Grads g, vel;
  vel.zero(res.params);
  auto rng = make_rng(hyper.seed, 0xcf3aULL);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t n1 = mix.targets.n();
  std::vector<double> in(d + 1);
  Vec xt(d), y(d);

  for (std::size_t step = 0; step < hyper.steps; ++step) {
    g.zero(res.params);
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(hyper.batch);
    for (std::size_t b = 0; b < hyper.batch; ++b) {
      double u = unif(rng);
      std::size_t e = static_cast<std::size_t>(
          std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
      std::size_t i = e / n1, j = e % n1;
      double t = hyper.eps_time + (1.0 - 2.0 * hyper.eps_time) * unif(rng);
      auto x0 = mix.sources.points.row(i);
      auto x1 = mix.targets.points.row(j);
      const double st = mix.sigma0 * std::sqrt(t * (1.0 - t));
      // Flow: probability-flow contraction; Drift: pinned-bridge drift,
      // whose posterior mean is the transport drift for constant-sigma0
      // noise (v_marg + (sigma0^2/2) score)
      const double c = hyper.target == TargetKind::Flow
                           ? (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t))
                           : -1.0 / (1.0 - t);
      for (std::size_t k = 0; k < d; ++k) {
        double mt = (1.0 - t) * x0[k] + t * x1[k];
        xt[k] = mt + st * gauss(rng);
        y[k] = (x1[k] - x0[k]) + c * (xt[k] - mt);
        in[k] = xt[k];
      }
      in[d] = t;
      loss += detail::backprop_sample(res.params, in, y, scale, g);
    }
    loss *= scale;
    if (!std::isfinite(loss)) throw Error("DivergedTraining", "loss is NaN");
    res.loss_history.push_back(loss);

    auto update = [&](Vec& w, Vec& v, const Vec& gr) {
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = hyper.momentum * v[k] - hyper.lr * gr[k];
        w[k] += v[k];
      }
    };
    update(res.params.w1, vel.w1, g.w1);
    update(res.params.b1, vel.b1, g.b1);
    update(res.params.w2, vel.w2, g.w2);
    update(res.params.b2, vel.b2, g.b2);
    update(res.params.w3, vel.w3, g.w3);
    update(res.params.b3, vel.b3, g.b3);
    vel.gate = hyper.momentum * vel.gate - hyper.lr * g.gate;
    res.params.gate += vel.gate;
  }
  return res;
}

// Rate profile of a learned field: analytic Brownian conditional
// divergence against Hutchinson on the model JVP.
inline RateCurve learned_rate_profile(const ResidualFieldParams& params,
                                      const BridgeMixture& mix,
                                      const CalibrationSet& calset,
                                      const ProbeConfig& probes) {
  params.validate();
  FieldHandle marg = model_field_handle(params);
  const std::size_t d = params.dim;
  AnalyticDivergence bb = [d](std::span<const double>, double t) {
    return bb_flow_divergence(d, t);
  };
  return cond_marg_rate(calset, {}, marg, probes, bb);
}

// --- serialization ----------------------------------------------------------

inline json to_json(const ResidualFieldParams& p) {
  return json{{"version", 1}, {"dim", p.dim},   {"hidden", p.hidden},
              {"w1", p.w1},   {"b1", p.b1},     {"w2", p.w2},
              {"b2", p.b2},   {"w3", p.w3},     {"b3", p.b3},
              {"gate", p.gate}};
}

inline ResidualFieldParams params_from_json(const json& j) {
  if (j.value("version", 0) != 1)
    throw Error("BadVersion", "ResidualFieldParams json");
  ResidualFieldParams p;
  p.dim = j.at("dim").get<std::size_t>();
  p.hidden = j.at("hidden").get<std::size_t>();
  p.w1 = j.at("w1").get<Vec>();
  p.b1 = j.at("b1").get<Vec>();
  p.w2 = j.at("w2").get<Vec>();
  p.b2 = j.at("b2").get<Vec>();
  p.w3 = j.at("w3").get<Vec>();
  p.b3 = j.at("b3").get<Vec>();
  p.gate = j.at("gate").get<double>();
  p.validate();
  return p;
}

}  // namespace entrosched
