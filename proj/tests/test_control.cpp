#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "exo/control.hpp"
#include "exo/gait.hpp"
#include "test_support.hpp"

using namespace exo;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const std::array<double, 6> kNoLimit{1e9, 1e9, 1e9, 1e9, 1e9, 1e9};

}  // namespace

TEST(JointPd, ZeroAtDesired) {
  Vec6 q;
  q << 0.1, 0.2, 0.3, -0.1, -0.2, -0.3;
  const ControllerConfig c;
  EXPECT_EQ(joint_pd(q, q, q, q, c.kp, c.kd, kNoLimit), Vec6::Zero());
}

TEST(JointPd, UnitErrorGivesKp) {
  Vec6 qd = Vec6::Zero();
  qd[1] = 1.0;
  std::array<double, 6> kp{};
  kp.fill(300.0);
  const Vec6 tau = joint_pd(qd, Vec6::Zero(), Vec6::Zero(), Vec6::Zero(), kp, {}, kNoLimit);
  EXPECT_DOUBLE_EQ(tau[1], 300.0);
  EXPECT_DOUBLE_EQ(tau[0], 0.0);
}

TEST(JointPd, MatchesElementwiseFormulaAndClamps) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const ControllerConfig c;
  const RobotParams p;
  for (int n = 0; n < 100; ++n) {
    Vec6 a, b, e, f;
    for (int j = 0; j < 6; ++j) a[j] = u(rng), b[j] = u(rng), e[j] = u(rng), f[j] = u(rng);
    const Vec6 tau = joint_pd(a, b, e, f, c.kp, c.kd, p.torque_limit);
    for (int j = 0; j < 6; ++j) {
      const double raw = c.kp[j] * (a[j] - e[j]) + c.kd[j] * (b[j] - f[j]);
      EXPECT_NEAR(tau[j], std::max(-p.torque_limit[j], std::min(p.torque_limit[j], raw)), 1e-12);
    }
  }
}

TEST(SwingAnkle, PelvisPitchShiftsTargetOneForOne) {
  Sensors s;
  s.joint_pos << 0.1, 0.4, 0.0, -0.3, 0.2, 0.0;
  const auto [q0, r0] = swing_ankle_target(s, Side::Left);
  EXPECT_NEAR(q0, -(0.0 - 0.3 + 0.2), 1e-15);
  s.pelvis_pitch += 5 * kDeg;
  const auto [q1, r1] = swing_ankle_target(s, Side::Left);
  EXPECT_NEAR(q1 - q0, -5 * kDeg, 1e-15);
  // The target makes the foot's absolute pitch vanish.
  EXPECT_NEAR(s.pelvis_pitch + s.joint_pos[kJHipL] + s.joint_pos[kJKneeL] + q1, 0.0, 1e-15);
}

TEST(SwingAnkle, ThreeDimensionalPathLevelsFoot) {
  const ShankAttitude shank{6 * kDeg, -9 * kDeg, 0.0};
  const AnkleAngles a = swing_ankle_target_3d(shank, {});
  const FootAngles f = foot_orientation(shank, a.sagittal, a.henke, {});
  EXPECT_LE(std::abs(f.roll) + std::abs(f.pitch), 1e-9);
}

TEST(PelvisLoop, ZeroAtDesiredAndLinear) {
  EXPECT_EQ(stance_pelvis_control(0.1, 0.2, 0.1, 0.2, 1500, 100), 0.0);
  EXPECT_NEAR(stance_pelvis_control(0.11, 0.2, 0.1, 0.2, 1500, 100), 15.0, 1e-9);
  EXPECT_NEAR(stance_pelvis_control(0.1, 0.25, 0.1, 0.2, 1500, 100), 5.0, 1e-9);
}

TEST(CopFilter, ClampsToToeBound) {
  FootGeometry f;
  f.x_t = 0.14;
  EXPECT_NEAR(cop_filter(200.0, 0.0, 1000.0, f, 0.8), 112.0, 1e-12);
}

TEST(CopFilter, NoContactGivesZero) {
  const FootGeometry f;
  EXPECT_EQ(cop_filter(200.0, 0.0, 0.0, f, 0.8), 0.0);
  EXPECT_EQ(cop_filter(-50.0, 30.0, 0.5, f, 0.8), 0.0);
}

TEST(CopFilter, InsideBoundsUnchangedAndIdempotent) {
  const FootGeometry f;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> tau(-300.0, 300.0), fx(-200.0, 200.0), fz(0.0, 1500.0);
  for (int n = 0; n < 1000; ++n) {
    const double t = tau(rng), x = fx(rng), z = fz(rng);
    const double once = cop_filter(t, x, z, f, 0.8);
    EXPECT_EQ(cop_filter(once, x, z, f, 0.8), once);
    if (z >= 1.0) {
      const TorqueInterval b = cop_torque_bounds(x, z, f, 0.8);
      EXPECT_GE(once, b.lo);
      EXPECT_LE(once, b.hi);
      if (t >= b.lo && t <= b.hi) {
        EXPECT_EQ(once, t);
      }
    }
  }
}

TEST(CopFilter, HenkeBoundExample) {
  FootGeometry f;
  f.z_a = 0.08;
  f.y_i = f.y_c = 0.05;
  const auto [sa, ha] = cop_filter_3d(0.0, 999.0, 0.0, 100.0, 1000.0, f, 1.0);
  EXPECT_NEAR(sa, 0.0, 1e-15);
  EXPECT_NEAR(ha, 42.0, 1e-12);
  const auto [sa0, ha0] = cop_filter_3d(10.0, 10.0, 0.0, 0.0, 0.0, f, 1.0);
  EXPECT_EQ(sa0, 0.0);
  EXPECT_EQ(ha0, 0.0);
}

TEST(CopFilter, BoundsGrowWithNormalForce) {
  const FootGeometry f;
  double lo = 0.0, hi = 0.0;
  for (double fz = 10.0; fz < 2000.0; fz += 10.0) {
    const TorqueInterval b = cop_torque_bounds(40.0, fz, f, 0.8);
    if (fz > 10.0) {
      EXPECT_GT(b.hi, hi);
      EXPECT_LT(b.lo, lo);
    }
    lo = b.lo;
    hi = b.hi;
  }
}

TEST(CopFilter, ConsistentWithAffineContact) {
  // A wrench that depends affinely on the ankle torque: the filtered torque
  // must sit on the bound computed from its own wrench.
  const FootGeometry f;
  const int ankle = kJAnkleR;
  auto probe = [](const Vec6& t) {
    return ContactWrench{-20.0 + 0.3 * t[kJAnkleR], 900.0 - 0.8 * t[kJAnkleR], -t[kJAnkleR]};
  };
  Vec6 tau = Vec6::Zero();
  tau[ankle] = 250.0;
  const double out = cop_filter_consistent(tau, ankle, probe, f, 0.8, 1.0);
  tau[ankle] = out;
  const ContactWrench w = probe(tau);
  const TorqueInterval b = cop_torque_bounds(-w.fx, w.fz, f, 0.8);
  EXPECT_NEAR(out, b.hi, 1e-9);
  EXPECT_LT(out, 250.0);
}

TEST(ImpactDetect, ThresholdIsInclusive) {
  Sensors s;
  EXPECT_FALSE(impact_detect(s, Side::Left, 100.0));
  s.feet[side_index(Side::Left)] = {40.0, 60.0, 0.0};
  EXPECT_TRUE(impact_detect(s, Side::Left, 100.0));
  EXPECT_FALSE(impact_detect(s, Side::Left, 100.0 + 1e-9));
  EXPECT_FALSE(impact_detect(s, Side::Right, 100.0));
}

TEST(Blend, EndpointsAndMidpoint) {
  EXPECT_EQ(blend(3.0, 7.0, 0.0, 0.02), 3.0);
  EXPECT_EQ(blend(3.0, 7.0, 0.02, 0.02), 7.0);
  EXPECT_EQ(blend(3.0, 7.0, 1.0, 0.02), 7.0);
  EXPECT_NEAR(blend(3.0, 7.0, 0.01, 0.02), 5.0, 1e-12);
  EXPECT_EQ(blend(3.0, 7.0, 0.0, 0.0), 7.0);
}

TEST(Blend, WeightMonotone) {
  double prev = -1.0;
  for (double t = 0.0; t <= 0.03; t += 1e-4) {
    const double s = blend_weight(t, 0.02);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(CopFromForces, WorkedExample) {
  FootGeometry f;
  f.x_h = 0.10;
  f.x_t = 0.14;
  EXPECT_NEAR(cop_from_forces(300.0, 700.0, f), 0.068, 1e-12);
  EXPECT_NEAR(cop_from_forces(0.0, 500.0, f), 0.14, 1e-15);
}

TEST(WalkingControllerTest, FlagsOffIsPureJointPd) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  const ControllerConfig cfg = ControllerConfig{}.with_compensation(false);
  WalkingController c(g, cfg, p);
  c.reset(0.0, DomainLabel::LeftStance);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Sensors s;
  for (int j = 0; j < 6; ++j) s.joint_pos[j] = u(rng), s.joint_vel[j] = u(rng);
  s.pelvis_pitch = 0.1;
  const Vec6 tau = c.compute(0.21, s, {});
  const JointReference ref = evaluate(mirror(g), 0.21 / g.step_duration);
  const Vec6 oracle = joint_pd(ref.position, ref.velocity, s.joint_pos, s.joint_vel, cfg.kp, cfg.kd, p.torque_limit);
  EXPECT_LE((tau - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(WalkingControllerTest, ContinuousAcrossDomainSwitch) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  WalkingController c(g, ControllerConfig{}, p);
  c.reset(0.0, DomainLabel::RightStance);
  Sensors s;
  s.joint_pos << 0.2, 0.3, -0.1, -0.2, 0.4, 0.05;
  const double t = 0.58;
  const Vec6 before = c.compute(t, s, {});
  c.on_impact(t, DomainLabel::LeftStance);
  const Vec6 after = c.compute(t, s, {});
  // The lifted ankle (right) may hand over instantly; every other joint is continuous.
  for (int j = 0; j < 6; ++j)
    if (j != kJAnkleR) {
      EXPECT_NEAR(after[j], before[j], 1e-9) << "joint " << j;
    }
}

TEST(ControllerConfigTest, RejectsBadValues) {
  ControllerConfig c;
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.kd[2] = -1.0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NEAR(ControllerConfig{}.threshold_for(RobotParams{}), 0.15 * 105.8 * 9.81, 1e-9);
}
