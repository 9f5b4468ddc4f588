#pragma once

// Planar (sagittal) floating-base biped: pelvis/torso + two 3-link legs.
//
// Generalized coordinates, in order:
//   base_x, base_z        hip point in the ground frame [m]
//   pelvis_pitch          absolute torso pitch [rad]
//   hip_r, knee_r, ankle_r, hip_l, knee_l, ankle_l   relative joint angles [rad]
//
// Pitch follows the right-handed rotation about +y (y to the left): a positive
// angle tilts a link's top forward, so a leg with positive hip angle swings
// backward and a positive knee angle flexes the knee.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>

#include "exo/error.hpp"

namespace exo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat29 = Eigen::Matrix<double, 2, 9>;
using Mat39 = Eigen::Matrix<double, 3, 9>;
using RowVec9 = Eigen::Matrix<double, 1, 9>;

inline constexpr int kDof = 9;
inline constexpr int kNumJoints = 6;
inline constexpr int kNumBodies = 7;

/// Indices into a Configuration / velocity vector.
enum Coord : int {
  kBaseX = 0,
  kBaseZ = 1,
  kPelvisPitch = 2,
  kHipR = 3,
  kKneeR = 4,
  kAnkleR = 5,
  kHipL = 6,
  kKneeL = 7,
  kAnkleL = 8,
};

/// Joint angle order inside the 6-vector of actuated coordinates.
enum Joint : int { kJHipR = 0, kJKneeR, kJAnkleR, kJHipL, kJKneeL, kJAnkleL };

using Configuration = Vec9;

enum class Side : int { Right = 0, Left = 1 };
enum class DomainLabel : int { RightStance = 0, LeftStance = 1 };

inline Side stance_side(DomainLabel d) { return d == DomainLabel::RightStance ? Side::Right : Side::Left; }
inline Side swing_side(DomainLabel d) { return d == DomainLabel::RightStance ? Side::Left : Side::Right; }
inline DomainLabel next_domain(DomainLabel d) {
  return d == DomainLabel::RightStance ? DomainLabel::LeftStance : DomainLabel::RightStance;
}
inline const char* to_string(DomainLabel d) { return d == DomainLabel::RightStance ? "RightStance" : "LeftStance"; }

inline int side_index(Side s) { return static_cast<int>(s); }
/// Joint slot (0..5) of hip/knee/ankle of a leg.
inline int hip_joint(Side s) { return 3 * side_index(s); }
inline int knee_joint(Side s) { return 3 * side_index(s) + 1; }
inline int ankle_joint(Side s) { return 3 * side_index(s) + 2; }
inline int coord_of_joint(int joint) { return 3 + joint; }

inline Vec6 joint_part(const Vec9& x) { return x.tail<6>(); }

struct LinkParams {
  double mass = 1.0;        // kg
  double length = 1.0;      // m
  double com_offset = 0.5;  // m, distance from the proximal joint along the link axis
  double inertia = 0.1;     // kg m^2, about the COM
};

/// Contact geometry of the foot relative to the ankle joint.
struct FootGeometry {
  double x_h = 0.10;  // heel distance behind the ankle
  double x_t = 0.14;  // toe distance ahead of the ankle
  double z_a = 0.08;  // ankle height above the sole
  double y_i = 0.05;  // inner half width (frontal bound only)
  double y_c = 0.05;  // outer half width (frontal bound only)
  double cop_box_half_x = 0.048;
  double cop_box_half_y = 0.018;

  void validate() const {
    if (!(x_h > 0 && x_t > 0 && z_a > 0 && y_i > 0 && y_c > 0))
      throw Error(ErrorKind::InvalidArgument, "foot extents must be positive");
    if (!(cop_box_half_x >= 0 && cop_box_half_x <= std::min(x_h, x_t)))
      throw Error(ErrorKind::InvalidArgument, "cop_box_half_x must lie in [0, min(x_h, x_t)]");
    if (!(cop_box_half_y >= 0 && cop_box_half_y <= std::min(y_i, y_c)))
      throw Error(ErrorKind::InvalidArgument, "cop_box_half_y must lie in [0, min(y_i, y_c)]");
  }
};

struct FootInertial {
  double mass = 3.4;
  double inertia = 0.01;
  double com_x = 0.0;   // ahead of the ankle
  double com_z = 0.04;  // below the ankle
};

struct RobotParams {
  LinkParams torso{55.0, 0.60, 0.25, 2.0};
  LinkParams thigh{12.0, 0.44, 0.19, 0.20};
  LinkParams shank{10.0, 0.42, 0.18, 0.15};
  FootInertial foot_inertial{};
  FootGeometry foot{};
  double g = 9.81;
  /// Manikin share of the link masses; informational except for payload scaling.
  double payload_mass = 65.8;
  double knee_min = 0.0;
  double knee_max = 2.4;
  std::array<double, 6> torque_limit{400, 400, 300, 400, 400, 300};

  double total_mass() const {
    return torso.mass + 2.0 * (thigh.mass + shank.mass + foot_inertial.mass);
  }

  void validate() const {
    for (const LinkParams* l : {&torso, &thigh, &shank}) {
      if (!(l->mass > 0 && l->length > 0 && l->inertia > 0))
        throw Error(ErrorKind::InvalidArgument, "link mass, length and inertia must be positive");
    }
    if (!(foot_inertial.mass > 0 && foot_inertial.inertia > 0))
      throw Error(ErrorKind::InvalidArgument, "foot mass and inertia must be positive");
    if (!(g > 0)) throw Error(ErrorKind::InvalidArgument, "gravity must be positive");
    if (!(knee_min < knee_max)) throw Error(ErrorKind::InvalidArgument, "knee range is empty");
    for (double t : torque_limit)
      if (!(t > 0)) throw Error(ErrorKind::InvalidArgument, "torque limits must be positive");
    foot.validate();
  }

  /// Copy with the manikin payload scaled by `scale`; the extra mass rides on the torso.
  RobotParams with_payload_scale(double scale) const {
    RobotParams out = *this;
    out.torso.mass += (scale - 1.0) * payload_mass;
    out.payload_mass *= scale;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Body tree

enum Body : int { kTorso = 0, kThighR, kShankR, kFootR, kThighL, kShankL, kFootL };

inline int thigh_body(Side s) { return 1 + 3 * side_index(s); }
inline int shank_body(Side s) { return 2 + 3 * side_index(s); }
inline int foot_body(Side s) { return 3 + 3 * side_index(s); }

struct BodyDef {
  int parent = -1;
  int coord = kPelvisPitch;  // angular coordinate added at this body's joint
  Vec2 joint_in_parent = Vec2::Zero();
  Vec2 com = Vec2::Zero();  // in the body frame
  double mass = 0.0;
  double inertia = 0.0;
};

using BodyTable = std::array<BodyDef, kNumBodies>;

inline BodyTable make_body_table(const RobotParams& p) {
  BodyTable t{};
  t[kTorso] = {-1, kPelvisPitch, Vec2::Zero(), Vec2(0.0, p.torso.com_offset), p.torso.mass, p.torso.inertia};
  for (Side s : {Side::Right, Side::Left}) {
    const int hip = coord_of_joint(hip_joint(s));
    t[thigh_body(s)] = {kTorso, hip, Vec2::Zero(), Vec2(0.0, -p.thigh.com_offset), p.thigh.mass, p.thigh.inertia};
    t[shank_body(s)] = {thigh_body(s), hip + 1, Vec2(0.0, -p.thigh.length), Vec2(0.0, -p.shank.com_offset),
                        p.shank.mass, p.shank.inertia};
    t[foot_body(s)] = {shank_body(s), hip + 2, Vec2(0.0, -p.shank.length),
                       Vec2(p.foot_inertial.com_x, -p.foot_inertial.com_z), p.foot_inertial.mass,
                       p.foot_inertial.inertia};
  }
  return t;
}

/// Planar rotation taking body-frame (x, z) to the parent/world frame.
inline Eigen::Matrix2d rotation(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix2d r;
  r << c, s, -s, c;
  return r;
}

/// d/da of rotation(a).
inline Eigen::Matrix2d rotation_derivative(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix2d r;
  r << -s, c, -c, -s;
  return r;
}

struct BodyPose {
  Vec2 origin = Vec2::Zero();
  double pitch = 0.0;
};

/// Absolute pitch and origin of every body.
inline std::array<BodyPose, kNumBodies> body_poses(const Configuration& q, const BodyTable& t) {
  std::array<BodyPose, kNumBodies> out{};
  for (int b = 0; b < kNumBodies; ++b) {
    if (t[b].parent < 0) {
      out[b].origin = Vec2(q[kBaseX], q[kBaseZ]);
      out[b].pitch = q[t[b].coord];
    } else {
      const BodyPose& par = out[t[b].parent];
      out[b].origin = par.origin + rotation(par.pitch) * t[b].joint_in_parent;
      out[b].pitch = par.pitch + q[t[b].coord];
    }
  }
  return out;
}

/// Angular Jacobian row of a body: ones on every angular coordinate of its chain.
inline RowVec9 angular_jacobian(int body, const BodyTable& t) {
  RowVec9 j = RowVec9::Zero();
  for (int b = body; b >= 0; b = t[b].parent) j[t[b].coord] = 1.0;
  return j;
}

/// Jacobian of a point fixed at `local` in `body`.
inline Mat29 point_jacobian(const Configuration& q, const BodyTable& t, int body, const Vec2& local) {
  const auto poses = body_poses(q, t);
  Mat29 jac = Mat29::Zero();
  jac(0, kBaseX) = 1.0;
  jac(1, kBaseZ) = 1.0;
  Vec2 r = local;
  for (int b = body; b >= 0; b = t[b].parent) {
    const Vec2 col = rotation_derivative(poses[b].pitch) * r;
    for (int a = b; a >= 0; a = t[a].parent) jac.col(t[a].coord) += col;
    r = t[b].joint_in_parent;
  }
  return jac;
}

/// Velocity-product acceleration (Jdot * v) of a point fixed in a body.
inline Vec2 point_bias_acceleration(const Configuration& q, const Vec9& v, const BodyTable& t, int body,
                                    const Vec2& local) {
  const auto poses = body_poses(q, t);
  Vec2 acc = Vec2::Zero();
  Vec2 r = local;
  for (int b = body; b >= 0; b = t[b].parent) {
    const double w = angular_jacobian(b, t).dot(v.transpose());
    acc -= w * w * (rotation(poses[b].pitch) * r);
    r = t[b].joint_in_parent;
  }
  return acc;
}

inline Vec2 point_position(const Configuration& q, const BodyTable& t, int body, const Vec2& local) {
  const auto poses = body_poses(q, t);
  return poses[body].origin + rotation(poses[body].pitch) * local;
}

struct FootPoints {
  Vec2 ankle = Vec2::Zero();
  Vec2 sole = Vec2::Zero();  // directly below the ankle
  Vec2 heel = Vec2::Zero();
  Vec2 toe = Vec2::Zero();
  double pitch = 0.0;

  double min_height() const { return std::min(heel.y(), toe.y()); }
};

struct Kinematics {
  std::array<BodyPose, kNumBodies> bodies{};
  std::array<Vec2, kNumBodies> coms{};
  std::array<FootPoints, 2> feet{};

  const FootPoints& foot(Side s) const { return feet[side_index(s)]; }
};

inline Kinematics forward_kinematics(const Configuration& q, const RobotParams& p) {
  const BodyTable t = make_body_table(p);
  Kinematics k;
  k.bodies = body_poses(q, t);
  for (int b = 0; b < kNumBodies; ++b) k.coms[b] = k.bodies[b].origin + rotation(k.bodies[b].pitch) * t[b].com;
  for (Side s : {Side::Right, Side::Left}) {
    const BodyPose& f = k.bodies[foot_body(s)];
    const Eigen::Matrix2d r = rotation(f.pitch);
    FootPoints& fp = k.feet[side_index(s)];
    fp.ankle = f.origin;
    fp.sole = f.origin + r * Vec2(0.0, -p.foot.z_a);
    fp.heel = f.origin + r * Vec2(-p.foot.x_h, -p.foot.z_a);
    fp.toe = f.origin + r * Vec2(p.foot.x_t, -p.foot.z_a);
    fp.pitch = f.pitch;
  }
  return k;
}

struct CenterOfMass {
  Vec2 position = Vec2::Zero();
  Mat29 jacobian = Mat29::Zero();
};

inline CenterOfMass center_of_mass(const Configuration& q, const RobotParams& p) {
  const BodyTable t = make_body_table(p);
  CenterOfMass c;
  double m = 0.0;
  for (int b = 0; b < kNumBodies; ++b) {
    c.position += t[b].mass * point_position(q, t, b, t[b].com);
    c.jacobian += t[b].mass * point_jacobian(q, t, b, t[b].com);
    m += t[b].mass;
  }
  c.position /= m;
  c.jacobian /= m;
  return c;
}

/// Swap left and right joint angles (and rates) of a 9-vector.
inline Vec9 mirror_legs(const Vec9& x) {
  Vec9 out = x;
  out.segment<3>(kHipR) = x.segment<3>(kHipL);
  out.segment<3>(kHipL) = x.segment<3>(kHipR);
  return out;
}

/// Configuration that puts the stance foot flat with its ankle at `ankle` (ground frame),
/// given the six joint angles. Base position and pelvis pitch follow from the chain.
inline Configuration configuration_from_stance(const Vec6& joints, Side stance, const Vec2& ankle,
                                               const RobotParams& p, double foot_pitch = 0.0) {
  Configuration q = Configuration::Zero();
  q.tail<6>() = joints;
  const int h = hip_joint(stance);
  q[kPelvisPitch] = foot_pitch - (joints[h] + joints[h + 1] + joints[h + 2]);
  const BodyTable t = make_body_table(p);
  const Vec2 rel = point_position(q, t, foot_body(stance), Vec2::Zero());  // base at origin
  q[kBaseX] = ankle.x() - rel.x();
  q[kBaseZ] = ankle.y() - rel.y();
  return q;
}

}  // namespace exo
