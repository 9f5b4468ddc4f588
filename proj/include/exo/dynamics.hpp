#pragma once

// Manipulator equations M(q) vdot + h(q, v) = S tau + Q_ext + J^T lambda for the
// planar biped, flat-foot stance constraints and the plastic impact map.

#include <Eigen/Dense>

#include <cmath>

#include "exo/error.hpp"
#include "exo/model.hpp"

namespace exo {

struct State {
  Configuration q = Configuration::Zero();
  Vec9 v = Vec9::Zero();
};

/// Gravity expressed in the ground frame. A ground frame pitched by `tilt`
/// relative to the world sees gravity with a forward component g sin(tilt).
inline Vec2 gravity_vector(double g, double tilt = 0.0) { return Vec2(g * std::sin(tilt), -g * std::cos(tilt)); }

inline Mat9 mass_matrix(const Configuration& q, const RobotParams& p) {
  const BodyTable t = make_body_table(p);
  Mat9 m = Mat9::Zero();
  for (int b = 0; b < kNumBodies; ++b) {
    const Mat29 jv = point_jacobian(q, t, b, t[b].com);
    const RowVec9 jw = angular_jacobian(b, t);
    m.noalias() += t[b].mass * jv.transpose() * jv;
    m.noalias() += t[b].inertia * jw.transpose() * jw;
  }
  return m;
}

/// Coriolis/centrifugal plus gravity terms h(q, v).
inline Vec9 bias_forces(const Configuration& q, const Vec9& v, const RobotParams& p, const Vec2& gravity) {
  const BodyTable t = make_body_table(p);
  Vec9 h = Vec9::Zero();
  for (int b = 0; b < kNumBodies; ++b) {
    const Mat29 jv = point_jacobian(q, t, b, t[b].com);
    const Vec2 a = point_bias_acceleration(q, v, t, b, t[b].com);
    h.noalias() += t[b].mass * jv.transpose() * (a - gravity);
  }
  return h;
}

inline Vec9 bias_forces(const Configuration& q, const Vec9& v, const RobotParams& p) {
  return bias_forces(q, v, p, gravity_vector(p.g));
}

inline double kinetic_energy(const State& s, const RobotParams& p) {
  return 0.5 * s.v.dot(mass_matrix(s.q, p) * s.v);
}

inline double potential_energy(const Configuration& q, const RobotParams& p, const Vec2& gravity) {
  return -p.total_mass() * gravity.dot(center_of_mass(q, p).position);
}

/// Generalized force of a planar force applied at the hip point.
inline Vec9 pelvis_force_generalized(const Vec2& force) {
  Vec9 f = Vec9::Zero();
  f[kBaseX] = force.x();
  f[kBaseZ] = force.y();
  return f;
}

inline Vec9 actuation(const Vec6& tau) {
  Vec9 f = Vec9::Zero();
  f.tail<6>() = tau;
  return f;
}

/// Unconstrained (flight) accelerations.
inline Vec9 free_accel(const State& s, const Vec6& tau, const RobotParams& p, const Vec2& gravity) {
  return mass_matrix(s.q, p).llt().solve(actuation(tau) - bias_forces(s.q, s.v, p, gravity));
}

inline State rk4_free_step(const State& x, double h, const Vec6& tau, const RobotParams& p, const Vec2& gravity) {
  auto f = [&](const State& s) { return free_accel(s, tau, p, gravity); };
  const Vec9 a1 = f(x);
  const State x2{x.q + 0.5 * h * x.v, x.v + 0.5 * h * a1};
  const Vec9 a2 = f(x2);
  const State x3{x.q + 0.5 * h * x2.v, x.v + 0.5 * h * a2};
  const Vec9 a3 = f(x3);
  const State x4{x.q + h * x3.v, x.v + h * a3};
  const Vec9 a4 = f(x4);
  return {x.q + h / 6.0 * (x.v + 2.0 * x2.v + 2.0 * x3.v + x4.v), x.v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)};
}

// ---------------------------------------------------------------------------
// Flat-foot contact

/// Where the stance foot is held: ankle position and foot pitch, ground frame.
struct StanceAnchor {
  Vec2 ankle = Vec2::Zero();
  double pitch = 0.0;
};

/// Rows: ankle x, ankle z, foot pitch.
inline Mat39 stance_jacobian(const Configuration& q, const RobotParams& p, Side stance) {
  const BodyTable t = make_body_table(p);
  Mat39 j;
  j.topRows<2>() = point_jacobian(q, t, foot_body(stance), Vec2::Zero());
  j.row(2) = angular_jacobian(foot_body(stance), t);
  return j;
}

inline Vec3 stance_bias_acceleration(const Configuration& q, const Vec9& v, const RobotParams& p, Side stance) {
  const BodyTable t = make_body_table(p);
  Vec3 a = Vec3::Zero();
  a.head<2>() = point_bias_acceleration(q, v, t, foot_body(stance), Vec2::Zero());
  return a;
}

inline Vec3 stance_residual(const Configuration& q, const RobotParams& p, Side stance, const StanceAnchor& anchor) {
  const BodyTable t = make_body_table(p);
  const auto poses = body_poses(q, t);
  const BodyPose& f = poses[foot_body(stance)];
  return Vec3(f.origin.x() - anchor.ankle.x(), f.origin.y() - anchor.ankle.y(), f.pitch - anchor.pitch);
}

inline StanceAnchor anchor_from(const Configuration& q, const RobotParams& p, Side stance) {
  const BodyTable t = make_body_table(p);
  const auto poses = body_poses(q, t);
  return {poses[foot_body(stance)].origin, poses[foot_body(stance)].pitch};
}

/// Ground reaction on the stance foot, expressed at the sole point below the ankle.
struct ContactWrench {
  double fx = 0.0;  // N, ground on foot
  double fz = 0.0;  // N
  double my = 0.0;  // N m about +y at the sole point
};

/// Centre of pressure along the sole, relative to the point below the ankle.
inline double wrench_cop(const ContactWrench& w) { return -w.my / w.fz; }

/// Normal force split between heel and toe edges that reproduces (fz, my).
struct EdgeForces {
  double heel = 0.0;
  double toe = 0.0;
};

inline EdgeForces edge_forces(const ContactWrench& w, const FootGeometry& foot) {
  EdgeForces e;
  e.toe = (foot.x_h * w.fz - w.my) / (foot.x_h + foot.x_t);
  e.heel = w.fz - e.toe;
  return e;
}

struct BaumgarteGains {
  double alpha = 20.0;  // 1/s
  double beta = 20.0;   // 1/s
};

struct ConstrainedAccel {
  Vec9 vdot = Vec9::Zero();
  Vec3 multipliers = Vec3::Zero();  // force at the ankle (x, z) and moment about +y, ground on foot
  ContactWrench wrench{};
};

struct ContactOptions {
  StanceAnchor anchor{};
  Vec2 gravity{0.0, -9.81};
  BaumgarteGains baumgarte{};
  Vec9 external = Vec9::Zero();
};

inline ContactWrench wrench_from_multipliers(const Vec3& lambda, const FootGeometry& foot) {
  // A force F at the ankle carries moment -z_a F_x about the sole point.
  return {lambda[0], lambda[1], lambda[2] + foot.z_a * lambda[0]};
}

inline ConstrainedAccel constrained_accel(const State& s, const Vec6& tau, DomainLabel domain, const RobotParams& p,
                                          const ContactOptions& opt) {
  const Side stance = stance_side(domain);
  const Mat9 m = mass_matrix(s.q, p);
  const Vec9 rhs = actuation(tau) + opt.external - bias_forces(s.q, s.v, p, opt.gravity);
  const Mat39 j = stance_jacobian(s.q, p, stance);

  Eigen::JacobiSVD<Mat39> svd(j);
  const auto sv = svd.singularValues();
  if (sv[2] < 1e-9 * std::max(1.0, sv[0]))
    throw Error(ErrorKind::RankDeficientConstraint, "stance constraint Jacobian lost rank");

  const double a = opt.baumgarte.alpha, b = opt.baumgarte.beta;
  const Vec3 c = -stance_bias_acceleration(s.q, s.v, p, stance) - 2.0 * a * (j * s.v) -
                 b * b * stance_residual(s.q, p, stance, opt.anchor);

  Eigen::LLT<Mat9> llt(m);
  const Eigen::Matrix<double, 9, 3> minv_jt = llt.solve(j.transpose());
  const Vec9 minv_rhs = llt.solve(rhs);
  const Eigen::Matrix3d schur = j * minv_jt;
  ConstrainedAccel out;
  out.multipliers = schur.ldlt().solve(c - j * minv_rhs);
  out.vdot = minv_rhs + minv_jt * out.multipliers;
  out.wrench = wrench_from_multipliers(out.multipliers, p.foot);
  return out;
}

enum class FrictionStatus { Ok, SlipViolation, LiftViolation };

inline FrictionStatus friction_check(const ContactWrench& w, double mu) {
  if (w.fz <= 0.0) return FrictionStatus::LiftViolation;
  if (std::abs(w.fx) > mu * w.fz) return FrictionStatus::SlipViolation;
  return FrictionStatus::Ok;
}

struct ImpactResult {
  State post{};
  Vec3 impulse = Vec3::Zero();
};

/// Plastic impact onto a flat `new_stance` foot. Positions are unchanged; the
/// new stance foot's ankle velocity and pitch rate are zeroed.
inline ImpactResult impact_map(const State& pre, DomainLabel new_stance, const RobotParams& p,
                               double ground_tol = 1e-6) {
  const Side s = stance_side(new_stance);
  const Kinematics k = forward_kinematics(pre.q, p);
  const FootPoints& f = k.foot(s);
  if (std::abs(f.heel.y()) > ground_tol || std::abs(f.toe.y()) > ground_tol)
    throw Error(ErrorKind::PreconditionViolated, "impacting foot is not flat on the ground");

  const Mat39 j = stance_jacobian(pre.q, p, s);
  Eigen::JacobiSVD<Mat39> svd(j);
  if (svd.singularValues()[2] < 1e-9 * std::max(1.0, svd.singularValues()[0]))
    throw Error(ErrorKind::RankDeficientConstraint, "impact constraint Jacobian lost rank");

  ImpactResult out;
  out.post = pre;
  const Vec3 jv = j * pre.v;
  if (jv.norm() <= 1e-14 * (1.0 + pre.v.norm())) return out;  // already consistent

  const Mat9 m = mass_matrix(pre.q, p);
  Eigen::LLT<Mat9> llt(m);
  const Eigen::Matrix<double, 9, 3> minv_jt = llt.solve(j.transpose());
  const Eigen::Matrix3d schur = j * minv_jt;
  out.impulse = -schur.ldlt().solve(jv);
  out.post.v = pre.v + minv_jt * out.impulse;
  return out;
}

}  // namespace exo
