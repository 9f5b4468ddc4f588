#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "exo/analysis.hpp"
#include "exo/gait_design.hpp"
#include "test_support.hpp"

using namespace exo;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Rotate the COM vector about the pivot, then subtract the original.
double oracle_velocity(double theta, double cx, double cz, double g) {
  const Eigen::Rotation2Dd r(theta);
  const Eigen::Vector2d d = r * Eigen::Vector2d(cx, cz) - Eigen::Vector2d(cx, cz);
  const double rise = d.x() + d.y();
  return rise < 0.0 ? 0.0 : std::sqrt(2.0 * g * rise);
}

HybridTrace walk(double dt, int steps) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  HybridSystemSpec spec;
  spec.params = p;
  spec.dt = dt;
  WalkingController c(g, ControllerConfig{}, p);
  return hybrid_run(nominal_initial_state(g, p), DomainLabel::RightStance, c, spec, {steps, 10.0});
}

}  // namespace

TEST(ImpactVelocity, ZeroAngleZeroVelocity) {
  const ImpactVelocity v = impact_velocity(0.0, {});
  EXPECT_EQ(v.v, 0.0);
  EXPECT_FALSE(v.com_lowered);
}

TEST(ImpactVelocity, TwoDegreeExample) {
  ImpactAnalysisParams a;
  a.com_x = 0.10;
  a.com_z = 1.00;
  a.g = 9.81;
  for (double theta : {2 * kDeg, -2 * kDeg})
    EXPECT_NEAR(impact_velocity(theta, a).v, oracle_velocity(theta, 0.10, 1.00, 9.81), 1e-12);
  // Rotating (0.1, 1.0) by +2 deg as written lowers Dx + Dz; by -2 deg it raises it.
  EXPECT_TRUE(impact_velocity(2 * kDeg, a).com_lowered);
  const double rise = std::cos(-2 * kDeg) * 1.1 + std::sin(-2 * kDeg) * (0.1 - 1.0) - 1.1;
  EXPECT_NEAR(impact_velocity(-2 * kDeg, a).v, std::sqrt(2 * 9.81 * rise), 1e-12);
}

TEST(ImpactVelocity, MatchesRotationOracleOnGrid) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> th(-0.3, 0.3), cx(-0.3, 0.3), cz(0.3, 1.5);
  for (int n = 0; n < 1000; ++n) {
    ImpactAnalysisParams a;
    a.com_x = cx(rng);
    a.com_z = cz(rng);
    const double t = th(rng);
    const ImpactVelocity v = impact_velocity(t, a);
    EXPECT_NEAR(v.v, oracle_velocity(t, a.com_x, a.com_z, a.g), 1e-12);
    if (v.com_lowered) {
      EXPECT_EQ(v.v, 0.0);
    }
  }
}

TEST(ImpactVelocity, ContinuousAtBoundary) {
  const ImpactAnalysisParams a;
  EXPECT_TRUE(impact_velocity(1e-3, a).com_lowered);
  EXPECT_FALSE(impact_velocity(-1e-3, a).com_lowered);
  EXPECT_LT(impact_velocity(-1e-12, a).v, 1e-4);
}

TEST(VelocityCurve, EndpointsAndRowCount) {
  const ImpactAnalysisParams a;
  const auto c = velocity_curve(a, 0.0, 6 * kDeg, 2);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.front().theta, 0.0);
  EXPECT_EQ(c.back().theta, 6 * kDeg);
  EXPECT_EQ(velocity_curve(a, 0.0, 6 * kDeg, 61).size(), 61u);
  EXPECT_THROW(velocity_curve(a, 0.0, 1.0, 1), Error);
}

TEST(VelocityCurve, RefinedGridReproducesSharedPointsBitwise) {
  const ImpactAnalysisParams a;
  const auto coarse = velocity_curve(a, 0.0, 6 * kDeg, 11);
  const auto fine = velocity_curve(a, 0.0, 6 * kDeg, 101);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    EXPECT_EQ(coarse[i].theta, fine[10 * i].theta);
    EXPECT_EQ(coarse[i].value.v, fine[10 * i].value.v);
  }
}

TEST(VelocityCurve, MonotoneWhereRiseIncreases) {
  const ImpactAnalysisParams a;
  // Dx + Dz grows as the angle becomes more negative.
  const auto c = velocity_curve(a, 0.0, -6 * kDeg, 601);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GE(c[i].value.v, c[i - 1].value.v);
  EXPECT_GT(c.back().value.v, 0.5);
}

TEST(VelocityCurve, RejectsNonPositiveComHeight) {
  ImpactAnalysisParams a;
  a.com_z = 0.0;
  EXPECT_THROW(velocity_curve(a, 0.0, 0.1, 5), Error);
}

TEST(VelocityCurve, CsvHeaderAndRows) {
  std::ostringstream os;
  write_velocity_curve_csv(os, velocity_curve({}, 0.0, 6 * kDeg, 3));
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "theta_deg,v_mps,com_lowered");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}

TEST(ImpactParams, DefaultsFromModel) {
  const RobotParams p;
  const ImpactAnalysisParams a = default_impact_params(p);
  EXPECT_DOUBLE_EQ(a.com_x, p.foot.x_t + p.foot.cop_box_half_x);
  EXPECT_GT(a.com_z, 0.5);
  EXPECT_LT(a.com_z, 1.5);
}

TEST(CopFromForcesAnalysis, SymmetricAndSinglePoint) {
  FootGeometry f;
  f.x_h = f.x_t = 0.12;
  EXPECT_NEAR(cop_from_forces(400.0, 400.0, f), 0.0, 1e-15);
  EXPECT_EQ(cop_from_forces(0.0, 10.0, f), 0.12);
  try {
    cop_from_forces(0.0, 0.0, f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoContact);
  }
}

TEST(CopFromForcesAnalysis, StaysOnTheSole) {
  const FootGeometry f;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  for (int n = 0; n < 1000; ++n) {
    const double c = cop_from_forces(u(rng), u(rng) + 1.0, f);
    EXPECT_GE(c, -f.x_h);
    EXPECT_LE(c, f.x_t);
  }
}

TEST(Metrics, PerfectTrackingHasZeroError) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  HybridTrace tr;
  for (int k = 0; k <= 100; ++k) {
    TraceSample s;
    s.t = 0.006 * k;
    s.diag.phase = k / 100.0;
    s.state.q[kBaseZ] = 0.9;
    s.state.q[kPelvisPitch] = pelvis_reference(g, s.diag.phase).first;
    tr.samples.push_back(s);
  }
  EXPECT_EQ(metrics(tr, g, p).pelvis_pitch_rmse, 0.0);
}

TEST(Metrics, FallAfterFourStepsCountsFour) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  HybridTrace tr;
  tr.samples.resize(10);
  for (int k = 0; k < 10; ++k) tr.samples[k].t = 0.1 * k;
  for (int k = 0; k < 4; ++k) tr.events.push_back({0.1 * (2 * k + 1)});
  tr.termination = Termination::FallPelvisPitch;
  const RunMetrics m = metrics(tr, g, p);
  EXPECT_EQ(m.steps_completed, 4);
  EXPECT_TRUE(m.fell);
  EXPECT_THROW(metrics(HybridTrace{}, g, p), Error);
}

TEST(Metrics, RmseMatchesIndependentSum) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  const HybridTrace tr = walk(1e-3, 3);
  ASSERT_EQ(tr.steps(), 3);
  double se = 0.0;
  int n = 0;
  for (const TraceSample& s : tr.samples) {
    if (s.t > tr.events.back().t) continue;
    const double d = s.state.q[kPelvisPitch] - pelvis_reference(g, s.diag.phase).first;
    se += d * d;
    ++n;
  }
  const RunMetrics m = metrics(tr, g, p);
  EXPECT_NEAR(m.pelvis_pitch_rmse, std::sqrt(se / n), 1e-12);
  EXPECT_GE(m.min_clearance, 0.0);
  EXPECT_LE(m.cop_excursion, p.foot.cop_box_half_x);
}

TEST(Metrics, InsensitiveToIntegrationStep) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  const RunMetrics a = metrics(walk(1e-3, 4), g, p), b = metrics(walk(5e-4, 4), g, p);
  ASSERT_EQ(a.steps_completed, 4);
  ASSERT_EQ(b.steps_completed, 4);
  EXPECT_LE(std::abs(a.pelvis_pitch_rmse - b.pelvis_pitch_rmse), 0.01 * a.pelvis_pitch_rmse);
}

TEST(Metrics, JsonCarriesSchemaVersion) {
  RunMetrics m;
  const nlohmann::json j = metrics_to_json(m);
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_TRUE(j.at("min_clearance").is_null());
  m.min_clearance = 0.08;
  EXPECT_EQ(metrics_to_json(m).at("min_clearance"), 0.08);
}
