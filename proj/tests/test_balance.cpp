#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "exo/balance.hpp"
#include "test_support.hpp"

using namespace exo;

namespace {

struct Fixture {
  RobotParams p;
  Equilibrium eq;
  BalancePlant plant;
  Linearization lin;
  ClfData clf;

  Fixture()
      : eq(find_equilibrium(p)),
        plant(eq, p),
        lin(linearize(plant)),
        clf(make_clf_data(lin, Eigen::MatrixXd::Identity(12, 12), 10.0)) {}
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Eigen::MatrixXd ctle_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
  return a.transpose() * p + p * a + q;
}

auto plant_field(const BalancePlant& plant) {
  return [&plant](const Eigen::VectorXd& x, double u) -> Eigen::VectorXd { return plant(Vec12(x), u); };
}

}  // namespace

TEST(Ctle, TwoByTwoWorkedExample) {
  Eigen::MatrixXd a(2, 2), expected(2, 2);
  a << 0, 1, -2, -3;
  expected << 1.25, 0.25, 0.25, 0.25;
  const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2, 2);
  // The hand solution satisfies the equation exactly.
  EXPECT_LE(ctle_residual(a, expected, q).norm(), 1e-15);
  EXPECT_LE((synthesize_clf(a, q) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ctle, NegativeIdentity) {
  for (int n : {1, 3, 12}) {
    const Eigen::MatrixXd a = -Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd p = synthesize_clf(a, 2.0 * Eigen::MatrixXd::Identity(n, n));
    EXPECT_LE((p - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Ctle, RandomStableMatrices) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd a(12, 12);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
    a -= (max_real_eigenvalue(a) + 0.5) * Eigen::MatrixXd::Identity(12, 12);
    const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(12, 12);
    const Eigen::MatrixXd p = synthesize_clf(a, q);
    EXPECT_LE(ctle_residual(a, p, q).norm(), 1e-8);
    EXPECT_LE((p - p.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Ctle, RejectsUnstableMatrix) {
  Eigen::MatrixXd a(2, 2);
  a << 0.1, 1, 0, -1;
  try {
    synthesize_clf(a, Eigen::MatrixXd::Identity(2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotHurwitz);
  }
}

TEST(Equilibrium, HeldAtRestByFeedForward) {
  const Fixture& f = fixture();
  EXPECT_LE(f.plant.drift(Vec12::Zero()).norm(), 1e-8);
  // Independent check through the full constrained dynamics.
  State s{f.eq.q, Vec9::Zero()};
  ContactOptions o;
  o.anchor = anchor_from(s.q, f.p, Side::Right);
  o.gravity = gravity_vector(f.p.g);
  EXPECT_LE(constrained_accel(s, f.eq.u_ff, f.eq.stance, f.p, o).vdot.norm(), 1e-8);
}

TEST(Equilibrium, ComInsideCopBoxAndSwingFootClear) {
  const Fixture& f = fixture();
  const Kinematics k = forward_kinematics(f.eq.q, f.p);
  const double com = center_of_mass(f.eq.q, f.p).position.x() - k.foot(Side::Right).ankle.x();
  EXPECT_NEAR(com, f.eq.com_x, 1e-9);
  EXPECT_LE(std::abs(com), f.p.foot.cop_box_half_x + 1e-9);
  EXPECT_GE(k.foot(Side::Left).min_height(), 0.05 - 1e-3);  // penalty tolerance 1e-6 on the squared shortfall
  EXPECT_NEAR(k.foot(Side::Right).pitch, 0.0, 1e-12);
}

TEST(Equilibrium, ZeroWidthBoxPutsComOverAnkle) {
  RobotParams p;
  p.foot.cop_box_half_x = 0.0;
  const Equilibrium eq = find_equilibrium(p);
  const double ankle = forward_kinematics(eq.q, p).foot(Side::Right).ankle.x();
  EXPECT_NEAR(center_of_mass(eq.q, p).position.x(), ankle, 1e-6);
}

TEST(Linearization, InputColumnMatchesOneSidedDifference) {
  const Fixture& f = fixture();
  const double d = 1e-4;
  const Vec12 fd = (f.plant(Vec12::Zero(), d) - f.plant(Vec12::Zero(), 0.0)) / d;
  EXPECT_LE((fd - Vec12(f.lin.b.col(0))).cwiseAbs().maxCoeff(), 1e-5);
  // Position rows of B vanish: torque enters through accelerations only.
  EXPECT_LE(f.lin.b.topRows(6).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Linearization, DefaultEquilibriumIsHurwitz) {
  const Fixture& f = fixture();
  const double lead = max_real_eigenvalue(f.lin.a);
  EXPECT_LT(lead, 0.0);
  EXPECT_NEAR(lead, -1.1730, 1e-3);
}

TEST(Linearization, GravityFreeUncontrolledHasNoStiffness) {
  RobotParams p;
  p.g = 0.0;
  Equilibrium eq = fixture().eq;
  eq.u_ff = static_inverse_dynamics(eq.q, Side::Right, p).tau;
  EXPECT_LE(eq.u_ff.norm(), 1e-12);
  BalanceGains none;
  none.kp.fill(0.0);
  none.kd.fill(0.0);
  none.ankle_kp = none.ankle_kd = 0.0;
  const Linearization lin = linearize(BalancePlant(eq, p, none));
  EXPECT_LE(lin.a.bottomLeftCorner(6, 6).cwiseAbs().maxCoeff(), 1e-6);  // finite-difference noise
  EXPECT_LE((lin.a.topRightCorner(6, 6) - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ClfData, ConstantsFollowFromP) {
  const ClfData& d = fixture().clf;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d.p);
  EXPECT_NEAR(d.c1, es.eigenvalues().minCoeff(), 1e-10);
  EXPECT_NEAR(d.c2, es.eigenvalues().maxCoeff(), 1e-10);
  EXPECT_EQ(d.c5, d.c3 / (2.0 * d.c2));
  EXPECT_LE(ctle_residual(d.a, d.p, d.q).norm(), 1e-8);
}

TEST(ClfData, LyapunovSandwich) {
  const ClfData& d = fixture().clf;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (int n = 0; n < 1000; ++n) {
    Eigen::VectorXd x(12);
    for (int i = 0; i < 12; ++i) x[i] = nd(rng);
    const double v = d.value(x), n2 = x.squaredNorm();
    EXPECT_GE(v, d.c1 * n2 * (1.0 - 1e-12));
    EXPECT_LE(v, d.c2 * n2 * (1.0 + 1e-12));
  }
}

TEST(ClfQp, ZeroStateReturnsReference) {
  const ClfQpResult r = clf_qp_solve(0.0, 0.0, 0.0, 3.5, 1.0, -100.0, 100.0);
  EXPECT_EQ(r.u, 3.5);
  EXPECT_EQ(r.delta, 0.0);
  const Fixture& f = fixture();
  const ClfQpResult r2 = clf_qp(Vec12::Zero(), -2.0, f.clf, f.plant, -300.0, 300.0);
  EXPECT_EQ(r2.u, -2.0);
  EXPECT_EQ(r2.delta, 0.0);
}

TEST(ClfQp, InactiveConstraintKeepsReference) {
  const ClfQpResult r = clf_qp_solve(-10.0, 2.0, 1.0, 1.0, 1.0, -50.0, 50.0);
  EXPECT_EQ(r.u, 1.0);
  EXPECT_EQ(r.active_case, 0);
}

TEST(ClfQp, MatchesDenseGridMinimization) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double rho = 1e4;
  for (int n = 0; n < 200; ++n) {
    const double lfv = 5.0 * u(rng), lgv = 2.0 * u(rng), nx = std::abs(u(rng)), c3 = 2.0, uref = 3.0 * u(rng);
    const double lo = -4.0, hi = 4.0;
    const ClfQpResult r = clf_qp_solve(lfv, lgv, nx, uref, c3, lo, hi, rho);
    auto cost = [&](double v) {
      const double d = std::max(0.0, lfv + lgv * v + c3 * nx);
      return (v - uref) * (v - uref) + rho * d * d;
    };
    // Coarse grid, then a fine grid around the best coarse point.
    double best = lo, best_cost = cost(lo);
    for (int k = 0; k <= 8000; ++k) {
      const double v = lo + (hi - lo) * k / 8000.0;
      if (cost(v) < best_cost) best = v, best_cost = cost(v);
    }
    const double a = std::max(lo, best - 1e-3), b = std::min(hi, best + 1e-3);
    for (int k = 0; k <= 20000; ++k) {
      const double v = a + (b - a) * k / 20000.0;
      if (cost(v) < best_cost) best = v, best_cost = cost(v);
    }
    EXPECT_NEAR(r.u, best, 1e-6);
    EXPECT_LE(cost(r.u), best_cost + 1e-9);
  }
}

TEST(ClfQp, SmallStateWideBoxNeedsNoRelaxation) {
  const Fixture& f = fixture();
  std::mt19937_64 rng(4);
  for (int n = 0; n < 20; ++n) {
    Vec12 x;
    for (int i = 0; i < 12; ++i) x[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
    x *= 0.5 * f.clf.radius / x.norm();
    const ClfQpResult r = clf_qp(x, 0.0, f.clf, f.plant, -1e6, 1e6);
    EXPECT_LE(r.lfv + r.lgv * r.u, r.bound + 1e-9 + r.delta);
  }
}

TEST(ValidityBall, ExactlyLinearDynamicsReachCap) {
  const ClfData& d = fixture().clf;
  auto lin = [&](const Eigen::VectorXd& x, double u) -> Eigen::VectorXd { return d.a * x + d.b.col(0) * u; };
  BallOptions o;
  o.cap = 0.7;
  EXPECT_EQ(estimate_validity_ball(d, lin, ball_directions(12, 16, 3), o), 0.7);
}

TEST(ValidityBall, DefaultRadiusIsFrozen) {
  const Fixture& f = fixture();
  const double r = estimate_validity_ball(f.clf, plant_field(f.plant), ball_directions(12, 64, 1));
  EXPECT_GT(r, 1e-6);
  EXPECT_NEAR(r, 4.794e-6, 0.01e-6);
}

TEST(ValidityBall, MonotoneInC5AndOrderInvariant) {
  const Fixture& f = fixture();
  const auto field = plant_field(f.plant);
  auto dirs = ball_directions(12, 16, 5);
  const double r10 = estimate_validity_ball(f.clf, field, dirs);
  const double r20 = estimate_validity_ball(with_c3(f.clf, 2.0 * f.clf.c3), field, dirs);
  const double r40 = estimate_validity_ball(with_c3(f.clf, 4.0 * f.clf.c3), field, dirs);
  EXPECT_LE(r10, r20);
  EXPECT_LE(r20, r40);
  std::reverse(dirs.begin(), dirs.end());
  EXPECT_EQ(estimate_validity_ball(f.clf, field, dirs), r10);
}

TEST(ValidityBall, DirectionsAreDeterministicUnitVectors) {
  const auto a = ball_directions(12, 8, 9), b = ball_directions(12, 8, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_NEAR(a[i].norm(), 1.0, 1e-15);
  }
}

TEST(ValidityBall, TooAggressiveDecreaseIsDegenerate) {
  const Fixture& f = fixture();
  try {
    estimate_validity_ball(with_c3(f.clf, 1e-6 * f.clf.c3), plant_field(f.plant), ball_directions(12, 8, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateBall);
  }
}

TEST(BalanceJson, RoundTripIsExact) {
  Fixture f = fixture();
  f.clf.radius = 4.794e-6;
  const BalanceFile b = balance_from_json(nlohmann::json::parse(balance_to_json(f.eq, f.clf).dump()));
  EXPECT_EQ(b.equilibrium.q, f.eq.q);
  EXPECT_EQ(b.equilibrium.u_ff, f.eq.u_ff);
  EXPECT_EQ(b.equilibrium.stance, f.eq.stance);
  EXPECT_EQ(b.clf.p, f.clf.p);
  EXPECT_EQ(b.clf.a, f.clf.a);
  EXPECT_EQ(b.clf.c5, f.clf.c5);
  EXPECT_EQ(b.clf.radius, f.clf.radius);
}

TEST(BalanceJson, RejectsWrongVersion) {
  nlohmann::json j = balance_to_json(fixture().eq, fixture().clf);
  j["schema_version"] = 2;
  EXPECT_THROW(balance_from_json(j), Error);
}
