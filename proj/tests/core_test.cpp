#include "entrosched/core.hpp"

#include <gtest/gtest.h>

#include "entrosched/scheduling.hpp"

using namespace entrosched;

TEST(ValidateGrid, CanonicalValid) {
  TimeGrid g{{0.0, 0.5, 1.0}};
  EXPECT_FALSE(validate_grid(g).has_value());
}

TEST(ValidateGrid, DuplicateNodeIsNonMonotone) {
  TimeGrid g{{0.0, 0.5, 0.5, 1.0}};
  auto issue = validate_grid(g);
  ASSERT_TRUE(issue.has_value());
  EXPECT_EQ(issue->code, "NonMonotone");
}

TEST(ValidateGrid, MissingEndpoint) {
  TimeGrid g{{0.1, 0.5, 1.0}};
  auto issue = validate_grid(g);
  ASSERT_TRUE(issue.has_value());
  EXPECT_EQ(issue->code, "BadEndpoints");
}

TEST(ValidateGrid, TooShort) {
  TimeGrid g{{0.0}};
  auto issue = validate_grid(g);
  ASSERT_TRUE(issue.has_value());
  EXPECT_EQ(issue->code, "TooShort");
}

TEST(ValidateGrid, DecreasingOrientation) {
  TimeGrid g{{1.0, 0.5, 0.0}, Orientation::Decreasing};
  EXPECT_FALSE(validate_grid(g).has_value());
  EXPECT_FALSE(validate_grid(g.reversed()).has_value());
}

TEST(GridToDensity, UniformGridIsConstantOne) {
  TimeGrid g{{0.0, 0.25, 0.5, 0.75, 1.0}};
  RateCurve q = grid_to_density(g);
  for (double v : q.values) EXPECT_NEAR(v, 1.0, 1e-12);
  EXPECT_NEAR(integrate_curve(q, 0.0, 1.0), 1.0, 1e-12);
}

TEST(GridToDensity, TwoIntervalValues) {
  TimeGrid g{{0.0, 0.1, 1.0}};
  RateCurve q = grid_to_density(g);
  EXPECT_NEAR(q.value_at(0.05), 5.0, 1e-9);
  EXPECT_NEAR(q.value_at(0.5), 5.0 / 9.0, 1e-9);
  EXPECT_NEAR(integrate_curve(q, 0.0, 1.0), 1.0, 1e-12);
}

TEST(GridToDensity, IntegratesToOne) {
  TimeGrid g{{0.0, 0.013, 0.2, 0.21, 0.7, 0.99, 1.0}};
  RateCurve q = grid_to_density(g);
  EXPECT_NEAR(integrate_curve(q, 0.0, 1.0), 1.0, 1e-12);
}

TEST(ResampleCurve, IdentityMesh) {
  RateCurve c{{0.2, 0.8}, {1.0, 3.0}};
  RateCurve r = resample_curve(c, c.mesh);
  EXPECT_EQ(r.values, c.values);
}

TEST(ResampleCurve, LinearMidpoint) {
  RateCurve c{{0.2, 0.8}, {1.0, 3.0}};
  RateCurve r = resample_curve(c, {0.5});
  EXPECT_DOUBLE_EQ(r.values[0], 2.0);
}

TEST(ResampleCurve, OutOfHull) {
  RateCurve c{{0.2, 0.8}, {1.0, 3.0}};
  try {
    resample_curve(c, {0.5, 1.5});
    FAIL() << "expected MeshOutOfHull";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MeshOutOfHull");
  }
}

TEST(ResampleCurve, IdempotentOnOwnMesh) {
  RateCurve c{{0.1, 0.3, 0.55, 0.9}, {2.0, 0.5, 1.25, 4.0}};
  RateCurve once = resample_curve(c, c.mesh);
  RateCurve twice = resample_curve(once, once.mesh);
  EXPECT_EQ(once.values, twice.values);
}

// inverse-CDF of a constant curve then back to density recovers the
// constant, at several budgets
TEST(CoreProperties, DensityInverseCdfRoundTrip) {
  RateCurve flat{{0.25, 0.75}, {2.0, 2.0}};
  for (std::size_t N : {4u, 16u, 64u}) {
    TimeGrid g = build_entropic_grid(flat, N);
    RateCurve q = grid_to_density(g);
    for (double t : {0.12, 0.5, 0.88})
      EXPECT_NEAR(q.value_at(t), 1.0, 1e-9) << "N=" << N;
  }
}

TEST(CoreJson, GridRoundTrip) {
  TimeGrid g{{0.0, 0.3, 1.0}};
  json j = to_json(g);
  EXPECT_EQ(j["version"], 1);
  EXPECT_EQ(j["orientation"], "increasing");
  TimeGrid back = grid_from_json(j);
  EXPECT_EQ(back.nodes, g.nodes);
}

TEST(CoreJson, CurveRoundTripWithStderr) {
  RateCurve c{{0.2, 0.8}, {1.0, 3.0}, {0.1, 0.2}};
  RateCurve back = curve_from_json(to_json(c));
  EXPECT_EQ(back.mesh, c.mesh);
  EXPECT_EQ(back.values, c.values);
  EXPECT_EQ(back.se, c.se);

  RateCurve nose{{0.2, 0.8}, {1.0, 3.0}};
  json j = to_json(nose);
  EXPECT_TRUE(j["stderr"].is_null());
  EXPECT_TRUE(curve_from_json(j).se.empty());
}

TEST(CoreRng, StreamsAreDecorrelatedAndDeterministic) {
  auto a1 = make_rng(42, 0);
  auto a2 = make_rng(42, 0);
  auto b = make_rng(42, 1);
  EXPECT_EQ(a1(), a2());
  EXPECT_NE(a1(), b());
}
