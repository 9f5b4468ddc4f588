#pragma once

// Shank -> sagittal ankle joint -> Henke joint -> foot orientation chain, and the
// Newton-Raphson solve that levels the foot from a shank IMU attitude.
//
// Attitudes are intrinsic roll-pitch-yaw: R = Rx(roll) * Ry(pitch) * Rz(yaw).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "exo/error.hpp"

namespace exo {

using Mat3 = Eigen::Matrix3d;

struct AnkleChainParams {
  Eigen::Vector3d sagittal_axis = Eigen::Vector3d::UnitY();
  Eigen::Vector3d henke_axis = Eigen::Vector3d::UnitX();

  void validate() const {
    if (std::abs(sagittal_axis.norm() - 1.0) > 1e-12 || std::abs(henke_axis.norm() - 1.0) > 1e-12)
      throw Error(ErrorKind::InvalidArgument, "ankle axes must be unit vectors");
    if (std::abs(sagittal_axis.dot(henke_axis)) >= 1.0 - 1e-9)
      throw Error(ErrorKind::InvalidArgument, "ankle axes must not be parallel");
  }
};

struct ShankAttitude {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

struct FootAngles {
  double roll = 0.0;
  double pitch = 0.0;
};

struct AnkleAngles {
  double sagittal = 0.0;
  double henke = 0.0;
  int iterations = 0;  // iterates examined, including the accepted one
};

inline Mat3 axis_rotation(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

inline Mat3 attitude_matrix(const ShankAttitude& a) {
  return axis_rotation(Eigen::Vector3d::UnitX(), a.roll) * axis_rotation(Eigen::Vector3d::UnitY(), a.pitch) *
         axis_rotation(Eigen::Vector3d::UnitZ(), a.yaw);
}

/// Roll and pitch of R = Rx(roll) Ry(pitch) Rz(yaw).
inline FootAngles roll_pitch_of(const Mat3& r) {
  const double sp = std::clamp(r(0, 2), -1.0, 1.0);
  if (1.0 - std::abs(sp) < 1e-9) throw Error(ErrorKind::AttitudeSingular, "pitch at +/- pi/2");
  return {std::atan2(-r(1, 2), r(2, 2)), std::asin(sp)};
}

inline FootAngles foot_orientation(const ShankAttitude& shank, double q_sa, double q_ha,
                                   const AnkleChainParams& chain) {
  const Mat3 r = attitude_matrix(shank) * axis_rotation(chain.sagittal_axis, q_sa) *
                 axis_rotation(chain.henke_axis, q_ha);
  return roll_pitch_of(r);
}

struct LevelFootOptions {
  int max_iter = 50;
  double tol = 1e-9;
  double fd_step = 1e-7;
  double cone = 30.0 * std::numbers::pi / 180.0;  // admissible shank tilt
  int max_halvings = 8;
};

/// Ankle angles that put the foot's roll and pitch at zero.
inline AnkleAngles solve_level_foot(const ShankAttitude& shank, const AnkleChainParams& chain,
                                    std::pair<double, double> guess = {0.0, 0.0},
                                    const LevelFootOptions& opt = {}) {
  chain.validate();
  const Eigen::Vector3d shank_z = attitude_matrix(shank).col(2);
  if (std::acos(std::clamp(shank_z.z(), -1.0, 1.0)) > opt.cone + 1e-12)
    throw Error(ErrorKind::PreconditionViolated, "shank attitude outside the admissible cone");

  auto residual = [&](const Eigen::Vector2d& x) {
    const FootAngles f = foot_orientation(shank, x[0], x[1], chain);
    return Eigen::Vector2d(f.roll, f.pitch);
  };

  Eigen::Vector2d x(guess.first, guess.second);
  Eigen::Vector2d r = residual(x);
  for (int it = 0; it <= opt.max_iter; ++it) {
    if (r.cwiseAbs().maxCoeff() <= opt.tol) return {x[0], x[1], it + 1};
    if (it == opt.max_iter) break;

    Eigen::Matrix2d jac;
    for (int c = 0; c < 2; ++c) {
      Eigen::Vector2d dx = Eigen::Vector2d::Zero();
      dx[c] = opt.fd_step;
      jac.col(c) = (residual(x + dx) - residual(x - dx)) / (2.0 * opt.fd_step);
    }
    if (std::abs(jac.determinant()) < 1e-10) throw Error(ErrorKind::SingularJacobian, "ankle IK Jacobian");

    Eigen::Vector2d step = -jac.partialPivLu().solve(r);
    Eigen::Vector2d trial = x + step;
    Eigen::Vector2d r_trial = residual(trial);
    for (int h = 0; h < opt.max_halvings && r_trial.norm() > r.norm(); ++h) {
      step *= 0.5;
      trial = x + step;
      r_trial = residual(trial);
    }
    x = trial;
    r = r_trial;
  }
  throw Error(ErrorKind::NoConvergence, "ankle IK did not converge");
}

}  // namespace exo
