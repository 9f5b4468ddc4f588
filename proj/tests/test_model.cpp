#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "exo/gait.hpp"
#include "exo/model.hpp"
#include "test_support.hpp"

using namespace exo;

namespace {

// Point-by-point trigonometric chain, written independently of the body table.
// A link of absolute pitch a hanging down by L ends at (-L sin a, -L cos a).
struct TrigFoot {
  double ankle_x, ankle_z, heel_x, heel_z, toe_x, toe_z, pitch;
};

TrigFoot trig_foot(const Configuration& q, int hip_coord, const RobotParams& p) {
  const double a1 = q[2] + q[hip_coord];
  const double a2 = a1 + q[hip_coord + 1];
  const double a3 = a2 + q[hip_coord + 2];
  const double kx = q[0] - p.thigh.length * std::sin(a1), kz = q[1] - p.thigh.length * std::cos(a1);
  const double ax = kx - p.shank.length * std::sin(a2), az = kz - p.shank.length * std::cos(a2);
  const double c = std::cos(a3), s = std::sin(a3);
  const FootGeometry& f = p.foot;
  return {ax, az, ax - f.x_h * c - f.z_a * s, az + f.x_h * s - f.z_a * c, ax + f.x_t * c - f.z_a * s,
          az - f.x_t * s - f.z_a * c, a3};
}

}  // namespace

TEST(Model, DefaultMassesMatchSum) {
  const RobotParams p;
  const double sum = p.torso.mass + 2 * (p.thigh.mass + p.shank.mass + p.foot_inertial.mass);
  EXPECT_NEAR(p.total_mass(), sum, 1e-9);
  EXPECT_NEAR(p.total_mass(), 105.8, 1e-9);
  EXPECT_DOUBLE_EQ(p.payload_mass, 65.8);
  EXPECT_DOUBLE_EQ(p.foot.cop_box_half_x, 0.048);
  EXPECT_DOUBLE_EQ(p.foot.cop_box_half_y, 0.018);
  EXPECT_NO_THROW(p.validate());
}

TEST(Model, ValidateRejectsBadParameters) {
  RobotParams p;
  p.thigh.mass = 0.0;
  EXPECT_THROW(p.validate(), Error);
  p = RobotParams{};
  p.foot.cop_box_half_x = 0.2;
  EXPECT_THROW(p.validate(), Error);
  p = RobotParams{};
  p.knee_min = 3.0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Model, PayloadScaleAddsMassToTorso) {
  const RobotParams p;
  const RobotParams q = p.with_payload_scale(1.02);
  EXPECT_NEAR(q.total_mass() - p.total_mass(), 0.02 * 65.8, 1e-12);
  EXPECT_NEAR(q.torso.mass - p.torso.mass, 0.02 * 65.8, 1e-12);
}

TEST(ForwardKinematics, UprightSymmetricFeetLevel) {
  const RobotParams p;
  Configuration q = Configuration::Zero();
  q[kBaseZ] = 1.0;
  const Kinematics k = forward_kinematics(q, p);
  for (Side s : {Side::Right, Side::Left}) {
    const FootPoints& f = k.foot(s);
    EXPECT_DOUBLE_EQ(f.pitch, 0.0);
    EXPECT_NEAR(f.ankle.y() - f.sole.y(), p.foot.z_a, 1e-15);
    EXPECT_NEAR(f.heel.y(), f.toe.y(), 1e-15);
  }
  EXPECT_EQ(k.foot(Side::Right).ankle, k.foot(Side::Left).ankle);
}

TEST(ForwardKinematics, PelvisPitchRotatesEveryLink) {
  const RobotParams p;
  Configuration q = Configuration::Zero();
  q[kPelvisPitch] = 0.37;
  const Kinematics k = forward_kinematics(q, p);
  for (const BodyPose& b : k.bodies) EXPECT_DOUBLE_EQ(b.pitch, 0.37);
}

TEST(ForwardKinematics, MatchesTrigOracleAtShippedGaitPhaseZero) {
  const RobotParams p;
  const GaitTrajectory g = load_gait(test::data_path("default_gait.json"));
  const Configuration q = configuration_from_stance(evaluate(g, 0.0).position, Side::Right, Vec2(0.0, p.foot.z_a), p);
  const Kinematics k = forward_kinematics(q, p);
  for (Side s : {Side::Right, Side::Left}) {
    const TrigFoot o = trig_foot(q, s == Side::Right ? kHipR : kHipL, p);
    const FootPoints& f = k.foot(s);
    EXPECT_NEAR(f.heel.y(), o.heel_z, 1e-12);
    EXPECT_NEAR(f.toe.y(), o.toe_z, 1e-12);
    EXPECT_NEAR(f.heel.x(), o.heel_x, 1e-12);
    EXPECT_NEAR(f.toe.x(), o.toe_x, 1e-12);
    EXPECT_NEAR(f.ankle.x(), o.ankle_x, 1e-12);
    EXPECT_NEAR(f.pitch, o.pitch, 1e-12);
  }
  // The stance foot is flat on the ground by construction.
  EXPECT_NEAR(k.foot(Side::Right).heel.y(), 0.0, 1e-12);
  EXPECT_NEAR(k.foot(Side::Right).toe.y(), 0.0, 1e-12);
}

TEST(ForwardKinematics, MatchesTrigOracleOnRandomConfigurations) {
  const RobotParams p;
  std::mt19937_64 rng(11);
  for (int n = 0; n < 100; ++n) {
    const Configuration q = test::random_configuration(rng);
    const Kinematics k = forward_kinematics(q, p);
    for (Side s : {Side::Right, Side::Left}) {
      const TrigFoot o = trig_foot(q, s == Side::Right ? kHipR : kHipL, p);
      EXPECT_NEAR(k.foot(s).heel.y(), o.heel_z, 1e-12);
      EXPECT_NEAR(k.foot(s).toe.x(), o.toe_x, 1e-12);
    }
  }
}

TEST(ForwardKinematics, TranslationEquivariance) {
  const RobotParams p;
  std::mt19937_64 rng(3);
  for (int n = 0; n < 20; ++n) {
    const Configuration q = test::random_configuration(rng);
    Configuration q2 = q;
    q2[kBaseX] += 0.731;
    q2[kBaseZ] -= 0.127;
    const Kinematics a = forward_kinematics(q, p), b = forward_kinematics(q2, p);
    for (Side s : {Side::Right, Side::Left}) {
      const Vec2 d_heel = b.foot(s).heel - a.foot(s).heel;
      const Vec2 d_toe = b.foot(s).toe - a.foot(s).toe;
      EXPECT_NEAR(d_heel.x(), 0.731, 1e-12);
      EXPECT_NEAR(d_heel.y(), -0.127, 1e-12);
      EXPECT_NEAR(d_toe.x(), 0.731, 1e-12);
      EXPECT_NEAR(d_toe.y(), -0.127, 1e-12);
    }
  }
}

TEST(ForwardKinematics, MirrorSwapsFeet) {
  const RobotParams p;
  std::mt19937_64 rng(5);
  for (int n = 0; n < 20; ++n) {
    Configuration q = test::random_configuration(rng);
    q[kPelvisPitch] = 0.0;
    const Kinematics a = forward_kinematics(q, p), b = forward_kinematics(mirror_legs(q), p);
    EXPECT_TRUE(a.foot(Side::Right).heel.isApprox(b.foot(Side::Left).heel, 1e-14));
    EXPECT_TRUE(a.foot(Side::Left).toe.isApprox(b.foot(Side::Right).toe, 1e-14));
  }
}

TEST(CenterOfMass, SymmetricStanceOnMidline) {
  const RobotParams p;
  Configuration q = Configuration::Zero();
  q[kBaseZ] = 1.0;
  q[kHipR] = 0.2;
  q[kHipL] = -0.2;
  q[kAnkleR] = -0.2;
  q[kAnkleL] = 0.2;
  const Kinematics k = forward_kinematics(q, p);
  const double mid = 0.5 * (k.foot(Side::Right).ankle.x() + k.foot(Side::Left).ankle.x());
  EXPECT_NEAR(center_of_mass(q, p).position.x(), mid, 1e-12);
}

TEST(CenterOfMass, PointMassInPelvis) {
  RobotParams p;
  p.torso.com_offset = 0.0;
  p.torso.mass = 1e6;
  p.thigh.mass = p.shank.mass = p.foot_inertial.mass = 1e-9;
  std::mt19937_64 rng(8);
  const Configuration q = test::random_configuration(rng);
  const Vec2 c = center_of_mass(q, p).position;
  EXPECT_NEAR(c.x(), q[kBaseX], 1e-12);
  EXPECT_NEAR(c.y(), q[kBaseZ], 1e-12);
}

TEST(CenterOfMass, JacobianMatchesCentralDifferences) {
  const RobotParams p;
  std::mt19937_64 rng(21);
  const double h = 1e-6;
  for (int n = 0; n < 100; ++n) {
    const Configuration q = test::random_configuration(rng);
    const Mat29 j = center_of_mass(q, p).jacobian;
    for (int i = 0; i < 9; ++i) {
      Configuration qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      const Vec2 fd = (center_of_mass(qp, p).position - center_of_mass(qm, p).position) / (2 * h);
      EXPECT_LE((fd - j.col(i)).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Model, ConfigurationFromStancePutsFootFlat) {
  const RobotParams p;
  Vec6 j;
  j << 0.1, 0.3, -0.2, -0.3, 0.7, 0.1;
  const Configuration q = configuration_from_stance(j, Side::Left, Vec2(0.4, p.foot.z_a), p);
  const FootPoints f = forward_kinematics(q, p).foot(Side::Left);
  EXPECT_NEAR(f.pitch, 0.0, 1e-15);
  EXPECT_NEAR(f.ankle.x(), 0.4, 1e-14);
  EXPECT_NEAR(f.heel.y(), 0.0, 1e-14);
  EXPECT_NEAR(f.toe.y(), 0.0, 1e-14);
}
