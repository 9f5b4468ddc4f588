#pragma once

// Seed gait construction: a task-space plan (hip at constant height following a
// linear-inverted-pendulum profile over the stance ankle, flat swing foot on a
// minimum-jerk path with a clearance bump), converted to joint angles by planar
// leg IK and fitted with degree-5 Bezier rows.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "exo/dynamics.hpp"
#include "exo/gait.hpp"
#include "exo/model.hpp"

namespace exo {

struct LegAngles {
  double hip = 0.0;
  double knee = 0.0;
  double ankle = 0.0;
  bool reachable = true;
};

/// Joint angles placing the ankle at `ankle` from a hip at `hip` with the given
/// pelvis pitch and absolute foot pitch. Knee-forward (positive knee) branch.
inline LegAngles leg_ik(const Vec2& hip, const Vec2& ankle, double pelvis_pitch, double foot_pitch,
                        const RobotParams& p) {
  const double l1 = p.thigh.length, l2 = p.shank.length;
  const Vec2 d = ankle - hip;
  LegAngles out;
  double c = (d.squaredNorm() - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  if (c > 1.0 || c < -1.0) {
    out.reachable = false;
    c = std::clamp(c, -1.0, 1.0);
  }
  out.knee = std::acos(c);
  const double gamma = std::atan2(-d.x(), -d.y());
  const double thigh = gamma - std::atan2(l2 * std::sin(out.knee), l1 + l2 * std::cos(out.knee));
  out.hip = thigh - pelvis_pitch;
  out.ankle = foot_pitch - (thigh + out.knee);
  return out;
}

struct SeedGaitOptions {
  double step_length = 0.30;    // m
  double step_duration = 0.60;  // s
  double hip_height = 0.88;     // m above the ground
  double clearance = 0.14;      // peak ankle lift, m
  double torso_pitch = 0.10;    // rad, forward lean
  double lip_height = 0.70;     // m, pendulum length for the hip profile
  int samples = 201;
};

inline double minimum_jerk(double tau) { return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau); }

/// Joint angles of the seed plan at phase tau (right stance, stance ankle at x = 0).
inline Vec6 seed_plan_angles(double tau, const SeedGaitOptions& o, const RobotParams& p) {
  const double half = 0.5 * o.step_length;
  const double w = std::sqrt(p.g / o.lip_height);
  const double amp = half / std::sinh(0.5 * w * o.step_duration);
  const double hip_x = amp * std::sinh(w * o.step_duration * (tau - 0.5));
  const Vec2 hip(hip_x, o.hip_height);
  const Vec2 stance_ankle(0.0, p.foot.z_a);
  const double bump = 16.0 * tau * tau * (1.0 - tau) * (1.0 - tau);
  const Vec2 swing_ankle(-o.step_length + 2.0 * o.step_length * minimum_jerk(tau), p.foot.z_a + o.clearance * bump);
  const LegAngles st = leg_ik(hip, stance_ankle, o.torso_pitch, 0.0, p);
  const LegAngles sw = leg_ik(hip, swing_ankle, o.torso_pitch, 0.0, p);
  Vec6 q;
  q << st.hip, st.knee, st.ankle, sw.hip, sw.knee, sw.ankle;
  return q;
}

/// Least-squares Bezier fit with both endpoints interpolated exactly.
inline BezierRow fit_bezier_row(const Eigen::VectorXd& tau, const Eigen::VectorXd& y) {
  constexpr int n = kBezierDegree;
  auto bern = [](int i, double t) {
    static constexpr double binom[] = {1, 5, 10, 10, 5, 1};
    return binom[i] * std::pow(t, i) * std::pow(1.0 - t, n - i);
  };
  BezierRow c{};
  c[0] = y[0];
  c[n] = y[y.size() - 1];
  Eigen::MatrixXd a(tau.size(), n - 1);
  Eigen::VectorXd b(tau.size());
  for (Eigen::Index k = 0; k < tau.size(); ++k) {
    for (int i = 1; i < n; ++i) a(k, i - 1) = bern(i, tau[k]);
    b[k] = y[k] - bern(0, tau[k]) * c[0] - bern(n, tau[k]) * c[n];
  }
  const Eigen::VectorXd x = a.colPivHouseholderQr().solve(b);
  for (int i = 1; i < n; ++i) c[i] = x[i - 1];
  return c;
}

inline GaitTrajectory design_seed_gait(const SeedGaitOptions& o, const RobotParams& p) {
  Eigen::VectorXd tau(o.samples);
  Eigen::MatrixXd q(o.samples, 6);
  for (int k = 0; k < o.samples; ++k) {
    tau[k] = static_cast<double>(k) / (o.samples - 1);
    q.row(k) = seed_plan_angles(tau[k], o, p).transpose();
  }
  GaitTrajectory g;
  g.step_duration = o.step_duration;
  g.step_length = o.step_length;
  for (int j = 0; j < 6; ++j) g.bezier[j] = fit_bezier_row(tau, q.col(j));
  return g;
}

/// State at phase 0 of a right-stance step: stance foot flat with its ankle at
/// (ankle_x, z_a), joint rates from the gait, base rates from the stance constraint.
inline State initial_state_from_gait(const GaitTrajectory& g, const RobotParams& p, double ankle_x = 0.0,
                                     DomainLabel domain = DomainLabel::RightStance) {
  const JointReference ref = evaluate(gait_for(g, domain), 0.0);
  const Side stance = stance_side(domain);
  State s;
  s.q = configuration_from_stance(ref.position, stance, Vec2(ankle_x, p.foot.z_a), p);
  s.v.tail<6>() = ref.velocity;
  const Mat39 j = stance_jacobian(s.q, p, stance);
  const Vec3 base = j.leftCols<3>().partialPivLu().solve(-j.rightCols<6>() * ref.velocity);
  s.v.head<3>() = base;
  return s;
}

/// The gait's stored post-impact state when present, otherwise the phase-0 state.
inline State nominal_initial_state(const GaitTrajectory& g, const RobotParams& p) {
  if (!g.initial_state) return initial_state_from_gait(g, p);
  return {g.initial_state->q, g.initial_state->v};
}

}  // namespace exo
