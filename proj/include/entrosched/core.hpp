#pragma once

// Core value types shared across the library: time grids, tabulated rate
// curves, sample batches, and the abstract vector-field handle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace entrosched {

using Vec = std::vector<double>;
using json = nlohmann::ordered_json;

class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

// Row-major dense matrix, just enough linear algebra for this library.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }
  std::span<double> row(std::size_t i) {
    return {data.data() + i * cols, cols};
  }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
};

enum class Orientation { Increasing, Decreasing };

inline std::string to_string(Orientation o) {
  return o == Orientation::Increasing ? "increasing" : "decreasing";
}

// Strictly monotone time nodes on [lo, hi] (default [0,1]).  Grids are
// built increasing and reversed at the solver boundary.
struct TimeGrid {
  Vec nodes;
  Orientation orientation = Orientation::Increasing;
  double lo = 0.0;  // declared endpoints; may record a clipped range
  double hi = 1.0;

  std::size_t intervals() const {
    return nodes.size() < 2 ? 0 : nodes.size() - 1;
  }
  TimeGrid reversed() const {
    TimeGrid g = *this;
    std::reverse(g.nodes.begin(), g.nodes.end());
    g.orientation = orientation == Orientation::Increasing
                        ? Orientation::Decreasing
                        : Orientation::Increasing;
    return g;
  }
};

struct GridIssue {
  std::string code;  // NonMonotone | BadEndpoints | TooShort
  std::string detail;
};

inline std::optional<GridIssue> validate_grid(const TimeGrid& grid) {
  if (grid.nodes.size() < 2) return GridIssue{"TooShort", "need >= 2 nodes"};
  const int dir = grid.orientation == Orientation::Increasing ? 1 : -1;
  for (std::size_t k = 0; k + 1 < grid.nodes.size(); ++k) {
    if (dir * (grid.nodes[k + 1] - grid.nodes[k]) <= 0.0)
      return GridIssue{"NonMonotone",
                       "nodes " + std::to_string(k) + ".." +
                           std::to_string(k + 1) + " not strictly monotone"};
  }
  const double first = grid.nodes.front();
  const double last = grid.nodes.back();
  const double want_first = dir > 0 ? grid.lo : grid.hi;
  const double want_last = dir > 0 ? grid.hi : grid.lo;
  if (first != want_first || last != want_last)
    return GridIssue{"BadEndpoints", "grid does not span declared endpoints"};
  return std::nullopt;
}

inline void require_valid(const TimeGrid& grid) {
  if (auto issue = validate_grid(grid)) throw Error(issue->code, issue->detail);
}

// Nonnegative tabulated function of time, piecewise linear on its mesh
// with constant extrapolation outside the hull.  Rate units: nats per
// unit time.  `se` is an optional per-point standard error (empty = none).
struct RateCurve {
  Vec mesh;
  Vec values;
  Vec se;

  double value_at(double t) const {
    if (mesh.empty()) throw Error("EmptyCurve", "no mesh points");
    if (t <= mesh.front()) return values.front();
    if (t >= mesh.back()) return values.back();
    auto it = std::upper_bound(mesh.begin(), mesh.end(), t);
    std::size_t j = static_cast<std::size_t>(it - mesh.begin());
    double w = (t - mesh[j - 1]) / (mesh[j] - mesh[j - 1]);
    return values[j - 1] + w * (values[j] - values[j - 1]);
  }

  void validate() const {
    if (mesh.size() != values.size())
      throw Error("SizeMismatch", "mesh/values length differ");
    if (!se.empty() && se.size() != mesh.size())
      throw Error("SizeMismatch", "stderr length differs from mesh");
    for (std::size_t j = 0; j + 1 < mesh.size(); ++j)
      if (mesh[j + 1] <= mesh[j])
        throw Error("NonMonotone", "curve mesh not strictly increasing");
    for (double v : values)
      if (!std::isfinite(v) || v < 0.0)
        throw Error("BadValue", "curve values must be finite and >= 0");
  }
};

// Trapezoid integral of the curve over [a, b], constant-extrapolated
// outside the mesh hull.
inline double integrate_curve(const RateCurve& curve, double a, double b) {
  if (b < a) return -integrate_curve(curve, b, a);
  // knots: a, interior mesh points in (a,b), b
  double total = 0.0;
  double prev_t = a;
  double prev_v = curve.value_at(a);
  for (std::size_t j = 0; j < curve.mesh.size(); ++j) {
    double s = curve.mesh[j];
    if (s <= a || s >= b) continue;
    total += 0.5 * (prev_v + curve.values[j]) * (s - prev_t);
    prev_t = s;
    prev_v = curve.values[j];
  }
  total += 0.5 * (prev_v + curve.value_at(b)) * (b - prev_t);
  return total;
}

// Piecewise-constant interval density of a grid as a RateCurve.  Interior
// edges become near-double knots; the ramp keeps the trapezoid integral
// exactly equal to the step integral.
inline RateCurve grid_to_density(const TimeGrid& grid) {
  require_valid(grid);
  Vec nodes = grid.nodes;
  if (grid.orientation == Orientation::Decreasing)
    std::reverse(nodes.begin(), nodes.end());
  const std::size_t N = nodes.size() - 1;
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < N; ++k)
    min_gap = std::min(min_gap, nodes[k + 1] - nodes[k]);
  const double delta = 1e-9 * min_gap;

  RateCurve q;
  q.mesh.push_back(nodes.front());
  q.values.push_back(1.0 / (static_cast<double>(N) * (nodes[1] - nodes[0])));
  for (std::size_t k = 1; k < N; ++k) {
    double vl = 1.0 / (static_cast<double>(N) * (nodes[k] - nodes[k - 1]));
    double vr = 1.0 / (static_cast<double>(N) * (nodes[k + 1] - nodes[k]));
    q.mesh.push_back(nodes[k] - delta);
    q.values.push_back(vl);
    q.mesh.push_back(nodes[k] + delta);
    q.values.push_back(vr);
  }
  q.mesh.push_back(nodes.back());
  q.values.push_back(1.0 / (static_cast<double>(N) * (nodes[N] - nodes[N - 1])));
  return q;
}

inline RateCurve resample_curve(const RateCurve& curve, const Vec& new_mesh) {
  curve.validate();
  for (std::size_t j = 0; j + 1 < new_mesh.size(); ++j)
    if (new_mesh[j + 1] <= new_mesh[j])
      throw Error("NonMonotone", "new mesh not strictly increasing");
  for (double t : new_mesh)
    if (t < curve.mesh.front() || t > curve.mesh.back())
      throw Error("MeshOutOfHull",
                  "resample point " + std::to_string(t) + " outside hull");
  RateCurve out;
  out.mesh = new_mesh;
  out.values.reserve(new_mesh.size());
  for (double t : new_mesh) out.values.push_back(curve.value_at(t));
  return out;
}

// n x d batch of points with seed provenance.
struct SampleBatch {
  Matrix points;
  std::uint64_t seed = 0;

  std::size_t n() const { return points.rows; }
  std::size_t dim() const { return points.cols; }

  void validate() const {
    if (points.rows < 1 || points.cols < 1)
      throw Error("DegenerateInput", "need n >= 1 and d >= 1");
    if (!all_finite(points.data))
      throw Error("BadValue", "non-finite coordinate in batch");
  }
};

// Abstract evaluable time-dependent vector field.  `jvp` (exact
// derivative-vector product) may be absent; callers fall back to central
// finite differences.
struct FieldHandle {
  std::string name;
  std::size_t dim = 0;
  double eps_min = 1e-6;
  std::function<void(std::span<const double>, double, std::span<double>)> eval;
  std::function<void(std::span<const double>, double, std::span<const double>,
                     std::span<double>)>
      jvp;  // (x, t, u) -> (dv/dx) u

  Vec operator()(std::span<const double> x, double t) const {
    Vec out(dim);
    eval(x, t, out);
    return out;
  }
};

// --- deterministic RNG streams ---------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for (seed, stream id); used so per-record work is
// reproducible regardless of evaluation order or worker count.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ stream));
}

// --- JSON serialization -----------------------------------------------------

inline json to_json(const TimeGrid& grid) {
  return json{{"version", 1},
              {"orientation", to_string(grid.orientation)},
              {"nodes", grid.nodes}};
}

inline TimeGrid grid_from_json(const json& j) {
  TimeGrid g;
  if (j.value("version", 0) != 1) throw Error("BadVersion", "TimeGrid json");
  g.orientation = j.at("orientation").get<std::string>() == "decreasing"
                      ? Orientation::Decreasing
                      : Orientation::Increasing;
  g.nodes = j.at("nodes").get<Vec>();
  if (!g.nodes.empty()) {
    g.lo = std::min(g.nodes.front(), g.nodes.back());
    g.hi = std::max(g.nodes.front(), g.nodes.back());
  }
  return g;
}

inline json to_json(const RateCurve& curve) {
  json j{{"version", 1}, {"mesh", curve.mesh}, {"values", curve.values}};
  if (curve.se.empty())
    j["stderr"] = nullptr;
  else
    j["stderr"] = curve.se;
  return j;
}

inline RateCurve curve_from_json(const json& j) {
  if (j.value("version", 0) != 1) throw Error("BadVersion", "RateCurve json");
  RateCurve c;
  c.mesh = j.at("mesh").get<Vec>();
  c.values = j.at("values").get<Vec>();
  if (j.contains("stderr") && !j.at("stderr").is_null())
    c.se = j.at("stderr").get<Vec>();
  return c;
}

}  // namespace entrosched
