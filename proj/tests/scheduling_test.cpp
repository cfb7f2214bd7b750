#include "entrosched/scheduling.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "entrosched/bridges.hpp"

using namespace entrosched;

namespace {

// dense mesh for curves defined by a callable
RateCurve curve_on_mesh(double lo, double hi, std::size_t n,
                        double (*f)(double)) {
  RateCurve c;
  c.mesh.resize(n);
  c.values.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double t = lo + (hi - lo) * static_cast<double>(j) /
                        static_cast<double>(n - 1);
    c.mesh[j] = t;
    c.values[j] = f(t);
  }
  return c;
}

}  // namespace

TEST(PostprocessRate, WindowOneOnlyClips) {
  RateCurve c{{0.0, 0.5, 1.0}, {2.0, 1e-12, 3.0}};
  RateCurve out = postprocess_rate(c, 0.1, 1);
  EXPECT_DOUBLE_EQ(out.values[0], 2.0);
  EXPECT_DOUBLE_EQ(out.values[1], 0.1);  // clipped to floor
  EXPECT_DOUBLE_EQ(out.values[2], 3.0);
}

TEST(PostprocessRate, NanRepairedByNeighborInterpolation) {
  RateCurve c{{0.0, 0.5, 1.0},
              {1.0, std::numeric_limits<double>::quiet_NaN(), 3.0}};
  RateCurve out = postprocess_rate(c, 1e-8, 1);
  EXPECT_DOUBLE_EQ(out.values[0], 1.0);
  EXPECT_DOUBLE_EQ(out.values[1], 2.0);
  EXPECT_DOUBLE_EQ(out.values[2], 3.0);
}

TEST(PostprocessRate, NonFiniteEdgesExtendNearestFiniteValue) {
  double inf = std::numeric_limits<double>::infinity();
  RateCurve c{{0.0, 0.3, 0.7, 1.0}, {inf, 2.0, 4.0, -inf}};
  RateCurve out = postprocess_rate(c, 1e-8, 1);
  EXPECT_DOUBLE_EQ(out.values[0], 2.0);
  EXPECT_DOUBLE_EQ(out.values[3], 4.0);
}

TEST(PostprocessRate, OutputNeverBelowFloor) {
  RateCurve c{{0.0, 0.25, 0.5, 0.75, 1.0}, {0.0, 5.0, 0.0, 5.0, 0.0}};
  RateCurve out = postprocess_rate(c, 0.5, 3);
  for (double v : out.values) EXPECT_GE(v, 0.5);
}

TEST(PostprocessRate, MovingAverageShrinksAtBoundary) {
  RateCurve c{{0.0, 0.25, 0.5, 0.75, 1.0}, {1.0, 2.0, 3.0, 4.0, 5.0}};
  RateCurve out = postprocess_rate(c, 1e-8, 3);
  EXPECT_DOUBLE_EQ(out.values[0], 1.5);  // mean of {1,2}
  EXPECT_DOUBLE_EQ(out.values[2], 3.0);  // mean of {2,3,4}
  EXPECT_DOUBLE_EQ(out.values[4], 4.5);  // mean of {4,5}
}

TEST(PostprocessRate, AllNonFiniteThrows) {
  double nan = std::numeric_limits<double>::quiet_NaN();
  RateCurve c{{0.0, 1.0}, {nan, nan}};
  try {
    postprocess_rate(c, 1e-8, 1);
    FAIL() << "expected AllValuesNonFinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "AllValuesNonFinite");
  }
}

TEST(ApplyTransform, Log1pValues) {
  RateCurve c{{0.0, 0.5, 1.0}, {0.0, std::numbers::e - 1.0, 3.0}};
  RateCurve out = apply_transform(c, Transform::Log1p);
  EXPECT_DOUBLE_EQ(out.values[0], 0.0);
  EXPECT_NEAR(out.values[1], 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(out.values[2], std::log1p(3.0));
  RateCurve raw = apply_transform(c, Transform::Raw);
  EXPECT_EQ(raw.values, c.values);
}

TEST(ApplyTransform, PreservesPointwiseOrder) {
  RateCurve a{{0.0, 0.5, 1.0}, {0.1, 1.0, 2.0}};
  RateCurve b{{0.0, 0.5, 1.0}, {0.2, 1.5, 7.0}};
  for (Transform phi : {Transform::Raw, Transform::Log1p}) {
    RateCurve ta = apply_transform(a, phi);
    RateCurve tb = apply_transform(b, phi);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_LE(ta.values[j], tb.values[j]);
  }
}

TEST(EntropicGrid, ConstantRateGivesLinearGrid) {
  RateCurve flat{{0.0, 1.0}, {3.0, 3.0}};
  TimeGrid g = build_entropic_grid(flat, 4);
  ASSERT_EQ(g.nodes.size(), 5u);
  for (std::size_t k = 0; k <= 4; ++k)
    EXPECT_NEAR(g.nodes[k], 0.25 * static_cast<double>(k), 1e-12);
}

TEST(EntropicGrid, LinearRateGivesSqrtNodes) {
  auto ramp = curve_on_mesh(0.0, 1.0, 2001, [](double t) { return t; });
  TimeGrid g2 = build_entropic_grid(ramp, 2);
  EXPECT_NEAR(g2.nodes[1], 0.70711, 2e-3);
  TimeGrid g4 = build_entropic_grid(ramp, 4);
  ASSERT_EQ(g4.nodes.size(), 5u);
  for (std::size_t k = 0; k <= 4; ++k)
    EXPECT_NEAR(g4.nodes[k], std::sqrt(static_cast<double>(k) / 4.0), 2e-3);
}

TEST(EntropicGrid, StrictlyMonotoneWithExactEndpoints) {
  auto spike = curve_on_mesh(0.0, 1.0, 101, [](double t) {
    return 1e-8 + (t > 0.49 && t < 0.51 ? 1e6 : 0.0);
  });
  TimeGrid g = build_entropic_grid(spike, 32);
  EXPECT_EQ(g.nodes.front(), 0.0);
  EXPECT_EQ(g.nodes.back(), 1.0);
  EXPECT_FALSE(validate_grid(g).has_value());
  for (std::size_t k = 1; k < g.nodes.size(); ++k)
    EXPECT_LT(g.nodes[k - 1], g.nodes[k]);
}

TEST(EntropicGrid, ZeroMassThrows) {
  RateCurve zero{{0.0, 1.0}, {0.0, 0.0}};
  try {
    build_entropic_grid(zero, 4);
    FAIL() << "expected ZeroTotalMass";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ZeroTotalMass");
  }
}

// grid_to_density o build_entropic_grid recovers the input density as the
// budget grows
TEST(EntropicGrid, CompositionConvergesToDensity) {
  auto q = curve_on_mesh(0.0, 1.0, 4001,
                         [](double t) { return 1.5 * std::sqrt(t); });
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t N : {10u, 100u, 1000u}) {
    TimeGrid g = build_entropic_grid(q, N);
    RateCurve qd = grid_to_density(g);
    double err = 0.0;
    for (int j = 0; j <= 400; ++j) {
      double t = 0.05 + 0.9 * j / 400.0;
      err = std::max(err, std::abs(qd.value_at(t) - 1.5 * std::sqrt(t)));
    }
    EXPECT_LT(err, prev) << "N=" << N;
    prev = err;
  }
  EXPECT_LT(prev, 0.01);
}

TEST(EntropicGrid, Log1pGridsOfOrderedCurvesStayValid) {
  auto qa = curve_on_mesh(0.0, 1.0, 401, [](double t) { return 0.2 + t; });
  auto qb =
      curve_on_mesh(0.0, 1.0, 401, [](double t) { return 0.2 + 4.0 * t; });
  for (std::size_t j = 0; j < qa.values.size(); ++j)
    ASSERT_LE(qa.values[j], qb.values[j]);
  for (const RateCurve& q : {qa, qb}) {
    TimeGrid g = build_entropic_grid(apply_transform(q, Transform::Log1p), 16);
    EXPECT_FALSE(validate_grid(g).has_value());
    for (std::size_t k = 1; k < g.nodes.size(); ++k)
      EXPECT_LT(g.nodes[k - 1], g.nodes[k]);
  }
}

TEST(BaselineGrid, LinearNodes) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::Linear;
  spec.steps = 4;
  TimeGrid g = baseline_grid(spec);
  ASSERT_EQ(g.nodes.size(), 5u);
  for (std::size_t k = 0; k <= 4; ++k)
    EXPECT_DOUBLE_EQ(g.nodes[k], 0.25 * static_cast<double>(k));
}

TEST(BaselineGrid, CosineMidpoint) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::Cosine;
  spec.steps = 2;
  TimeGrid g = baseline_grid(spec);
  EXPECT_NEAR(g.nodes[1], 0.5, 1e-15);
}

TEST(BaselineGrid, PowerTwo) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::Power;
  spec.gamma = 2.0;
  spec.steps = 2;
  TimeGrid g = baseline_grid(spec);
  EXPECT_DOUBLE_EQ(g.nodes[1], 0.25);
}

TEST(BaselineGrid, SigmoidAndLogAreValidAndSymmetricAsExpected) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::Sigmoid;
  spec.steps = 8;
  TimeGrid s = baseline_grid(spec);
  EXPECT_FALSE(validate_grid(s).has_value());
  // normalized logistic is symmetric about the midpoint
  for (std::size_t k = 0; k <= 8; ++k)
    EXPECT_NEAR(s.nodes[k], 1.0 - s.nodes[8 - k], 1e-12);
  EXPECT_NEAR(s.nodes[4], 0.5, 1e-12);

  spec.kind = ScheduleKind::Log;
  TimeGrid l = baseline_grid(spec);
  EXPECT_FALSE(validate_grid(l).has_value());
  // alpha = 9 puts the midpoint of the budget at log1p(4.5)/log1p(9)
  EXPECT_NEAR(l.nodes[4], std::log1p(4.5) / std::log1p(9.0), 1e-12);
}

TEST(BaselineGrid, BadSpecRejected) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::Power;
  spec.gamma = -1.0;
  EXPECT_THROW(baseline_grid(spec), Error);
  spec.gamma = 2.0;
  spec.smoothing_window = 4;
  EXPECT_THROW(baseline_grid(spec), Error);
  spec.smoothing_window = 5;
  spec.kind = ScheduleKind::Entropic;
  EXPECT_THROW(baseline_grid(spec), Error);
}

TEST(Bcr, UniformDensityIsOne) {
  RateCurve q{{0.0, 1.0}, {1.0, 1.0}};
  for (double eps : {0.05, 0.1, 0.2}) EXPECT_NEAR(bcr(q, eps), 1.0, 1e-12);
}

TEST(Bcr, LinearGridIsOne) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::Linear;
  spec.steps = 10;
  TimeGrid g = baseline_grid(spec);
  for (double eps : {0.05, 0.1, 0.2}) EXPECT_NEAR(bcr(g, eps), 1.0, 1e-12);
}

TEST(Bcr, BoundaryStepDensity) {
  // density 2 on [0,0.25] u [0.75,1], 0 elsewhere; eps=0.1 -> 0.4/0.2 = 2
  double d = 1e-9;
  RateCurve q{{0.0, 0.25 - d, 0.25 + d, 0.75 - d, 0.75 + d, 1.0},
              {2.0, 2.0, 0.0, 0.0, 2.0, 2.0}};
  EXPECT_NEAR(bcr(q, 0.1), 2.0, 1e-6);
}

TEST(Bcr, RejectsBadEpsAndUnnormalized) {
  RateCurve q{{0.0, 1.0}, {1.0, 1.0}};
  try {
    bcr(q, 0.7);
    FAIL() << "expected BadEps";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "BadEps");
  }
  RateCurve bad{{0.0, 1.0}, {2.0, 2.0}};
  try {
    bcr(bad, 0.1);
    FAIL() << "expected UnnormalizedDensity";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "UnnormalizedDensity");
  }
}

TEST(Bcr, Log1pBridgeDivergenceConcentratesAtBoundary) {
  // |d c(t)| for the Brownian bridge is U-shaped; after log1p tempering the
  // inverse-CDF grid still puts more than uniform mass near the endpoints
  auto rate = curve_on_mesh(1e-3, 1.0 - 1e-3, 2001, [](double t) {
    return std::abs(bb_flow_divergence(1, t));
  });
  RateCurve tempered = apply_transform(rate, Transform::Log1p);
  TimeGrid g = build_entropic_grid(tempered, 50);
  EXPECT_GT(bcr(g, 0.1), 1.0);
}

TEST(OptimalDensity, ConstantIsUniform) {
  RateCurve c{{0.0, 0.5, 1.0}, {7.0, 7.0, 7.0}};
  RateCurve rho = optimal_density(c, 2);
  for (double v : rho.values) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(OptimalDensity, LinearCostOrderOne) {
  auto c = curve_on_mesh(0.0, 1.0, 4001, [](double t) { return t; });
  RateCurve rho = optimal_density(c, 1);
  for (double t : {0.04, 0.25, 0.5, 0.81})
    EXPECT_NEAR(rho.value_at(t), 1.5 * std::sqrt(t), 1e-3) << "t=" << t;
}

TEST(OptimalDensity, LargeOrderApproachesUniform) {
  auto c = curve_on_mesh(0.0, 1.0, 2001, [](double t) { return t; });
  RateCurve rho = optimal_density(c, 100);
  double dev = 0.0;
  for (int j = 0; j <= 200; ++j) {
    double t = 0.01 + 0.98 * j / 200.0;
    dev = std::max(dev, std::abs(rho.value_at(t) - 1.0));
  }
  EXPECT_LT(dev, 0.05);
}

TEST(OptimalDensity, ZeroCostThrows) {
  RateCurve c{{0.0, 1.0}, {0.0, 0.0}};
  try {
    optimal_density(c, 1);
    FAIL() << "expected ZeroTotalMass";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ZeroTotalMass");
  }
}

TEST(ScheduleJson, ExportShape) {
  RateCurve flat{{0.0, 1.0}, {1.0, 1.0}};
  TimeGrid g = build_entropic_grid(flat, 4);
  json j = schedule_to_json(g, ScheduleKind::Entropic, Transform::Log1p, 0.1);
  EXPECT_EQ(j["version"], 1);
  EXPECT_EQ(j["kind"], "entropic");
  EXPECT_EQ(j["transform"], "log1p");
  EXPECT_EQ(j["nodes"].size(), 5u);
  EXPECT_DOUBLE_EQ(j["bcr"]["eps"].get<double>(), 0.1);
  EXPECT_NEAR(j["bcr"]["value"].get<double>(), 1.0, 1e-9);
}
