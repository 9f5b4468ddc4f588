#pragma once

// Run-time walking controller: joint PD on hips and knees, swing-ankle leveling,
// stance-ankle pelvis-pitch loop, COP torque filter, swing/stance blending.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <utility>

#include "exo/ankle_kinematics.hpp"
#include "exo/dynamics.hpp"
#include "exo/gait.hpp"
#include "exo/model.hpp"

namespace exo {

struct ControllerConfig {
  std::array<double, 6> kp{1500, 1500, 200, 1500, 1500, 200};  // N m / rad
  std::array<double, 6> kd{150, 150, 8, 150, 150, 8};          // N m s / rad
  double pelvis_kp = 1500.0;
  double pelvis_kd = 100.0;
  bool swing_ik_on = true;
  bool cop_filter_on = true;
  bool pelvis_loop_on = true;
  double alpha = 0.8;           // COP safety factor
  double blend_window = 0.02;   // s
  double lift_blend_window = 0.0;  // s, for the ankle leaving the ground
  double force_threshold = -1;  // N; negative selects 0.15 m g
  double fz_epsilon = 1.0;      // N

  void validate() const {
    for (int i = 0; i < 6; ++i)
      if (kp[i] < 0 || kd[i] < 0) throw Error(ErrorKind::InvalidArgument, "PD gains must be non-negative");
    if (pelvis_kp < 0 || pelvis_kd < 0) throw Error(ErrorKind::InvalidArgument, "pelvis gains must be non-negative");
    if (!(alpha > 0 && alpha <= 1)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1]");
    if (!(blend_window >= 0)) throw Error(ErrorKind::InvalidArgument, "blend_window must be non-negative");
    if (!(lift_blend_window >= 0)) throw Error(ErrorKind::InvalidArgument, "lift_blend_window must be non-negative");
    if (!(fz_epsilon >= 0)) throw Error(ErrorKind::InvalidArgument, "fz_epsilon must be non-negative");
  }

  double threshold_for(const RobotParams& p) const {
    return force_threshold >= 0 ? force_threshold : 0.15 * p.total_mass() * p.g;
  }

  ControllerConfig with_compensation(bool on) const {
    ControllerConfig c = *this;
    c.swing_ik_on = c.cop_filter_on = c.pelvis_loop_on = on;
    return c;
  }
};

/// Load-cell reading of one foot. `tangential` is the shear the foot applies to
/// the ground along +x, i.e. the negative of the ground reaction.
struct FootForces {
  double heel = 0.0;
  double toe = 0.0;
  double tangential = 0.0;

  double normal() const { return heel + toe; }
};

struct Sensors {
  Vec6 joint_pos = Vec6::Zero();
  Vec6 joint_vel = Vec6::Zero();
  double pelvis_pitch = 0.0;  // world frame
  double pelvis_pitch_rate = 0.0;
  std::array<ShankAttitude, 2> shank{};
  std::array<FootForces, 2> feet{};

  const FootForces& foot(Side s) const { return feet[side_index(s)]; }
};

inline FootForces foot_forces_from(const ContactWrench& w, const FootGeometry& foot) {
  const EdgeForces e = edge_forces(w, foot);
  return {e.heel, e.toe, -w.fx};
}

// ---------------------------------------------------------------------------
// Building blocks

inline Vec6 joint_pd(const Vec6& q_des, const Vec6& qd_des, const Vec6& q, const Vec6& qd,
                     const std::array<double, 6>& kp, const std::array<double, 6>& kd,
                     const std::array<double, 6>& limit) {
  Vec6 tau;
  for (int j = 0; j < 6; ++j)
    tau[j] = std::clamp(kp[j] * (q_des[j] - q[j]) + kd[j] * (qd_des[j] - qd[j]), -limit[j], limit[j]);
  return tau;
}

/// Swing ankle angle and rate that keep the swing foot's world pitch at zero.
inline std::pair<double, double> swing_ankle_target(const Sensors& s, Side swing) {
  const int h = hip_joint(swing), k = knee_joint(swing);
  return {-(s.pelvis_pitch + s.joint_pos[h] + s.joint_pos[k]),
          -(s.pelvis_pitch_rate + s.joint_vel[h] + s.joint_vel[k])};
}

/// Full 3D path: sagittal and Henke angles leveling the foot from the shank IMU.
inline AnkleAngles swing_ankle_target_3d(const ShankAttitude& shank, const AnkleChainParams& chain,
                                         std::pair<double, double> guess = {0.0, 0.0}) {
  return solve_level_foot(shank, chain, guess);
}

/// Stance ankle torque tracking the pelvis pitch. Positive torque presses the toe
/// down and pitches the body backward, so a forward pitch error asks for positive torque.
inline double stance_pelvis_control(double pitch, double pitch_rate, double pitch_des, double rate_des, double kp,
                                    double kd) {
  return kp * (pitch - pitch_des) + kd * (pitch_rate - rate_des);
}

struct TorqueInterval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Ankle torques for which the COP stays inside alpha * [-x_h, x_t].
/// `fx` is the foot-on-ground shear (load-cell convention).
inline TorqueInterval cop_torque_bounds(double fx, double fz, const FootGeometry& foot, double alpha) {
  return {-alpha * fz * foot.x_h - fx * foot.z_a, alpha * fz * foot.x_t - fx * foot.z_a};
}

inline double cop_filter(double tau_raw, double fx, double fz, const FootGeometry& foot, double alpha,
                         double fz_epsilon = 1.0) {
  if (fz < fz_epsilon) return 0.0;
  const TorqueInterval b = cop_torque_bounds(fx, fz, foot, alpha);
  return std::clamp(tau_raw, b.lo, b.hi);
}

/// Both ankle bounds: sagittal against the heel/toe extent, Henke against the
/// inner/outer half widths.
inline std::pair<double, double> cop_filter_3d(double tau_sa_raw, double tau_ha_raw, double fx, double fy, double fz,
                                               const FootGeometry& foot, double alpha, double fz_epsilon = 1.0) {
  if (fz < fz_epsilon) return {0.0, 0.0};
  const double sa = cop_filter(tau_sa_raw, fx, fz, foot, alpha, fz_epsilon);
  const double lo = -alpha * fz * foot.y_i - fy * foot.z_a;
  const double hi = alpha * fz * foot.y_c - fy * foot.z_a;
  return {sa, std::clamp(tau_ha_raw, lo, hi)};
}

inline bool impact_detect(const Sensors& s, Side swing, double threshold) {
  return s.foot(swing).normal() >= threshold;
}

inline double blend_weight(double t_since_switch, double window) {
  if (window <= 0.0) return 1.0;
  const double x = std::min(t_since_switch / window, 1.0);
  return 0.5 * (1.0 - std::cos(std::numbers::pi * x));
}

inline double blend(double tau_out, double tau_in, double t_since_switch, double window) {
  const double s = blend_weight(t_since_switch, window);
  if (s >= 1.0) return tau_in;
  if (s <= 0.0) return tau_out;
  return (1.0 - s) * tau_out + s * tau_in;
}

/// Stance wrench the plant would produce if `tau` were applied now.
using ContactProbe = std::function<ContactWrench(const Vec6&)>;

/// Apply the COP filter to the stance ankle of `tau`, consistently with the
/// contact force that the filtered torque itself produces. The wrench is affine
/// in the ankle torque, so two probes pin it down.
inline double cop_filter_consistent(Vec6 tau, int ankle, const ContactProbe& probe, const FootGeometry& foot,
                                    double alpha, double fz_epsilon) {
  const double raw = tau[ankle];
  const ContactWrench w_raw = probe(tau);
  const double fx_raw = -w_raw.fx;
  if (w_raw.fz < fz_epsilon) return 0.0;
  const TorqueInterval b_raw = cop_torque_bounds(fx_raw, w_raw.fz, foot, alpha);
  if (raw >= b_raw.lo && raw <= b_raw.hi) return raw;

  tau[ankle] = raw + 1.0;
  const ContactWrench w1 = probe(tau);
  const TorqueInterval b1 = cop_torque_bounds(-w1.fx, w1.fz, foot, alpha);
  // bound(t) = b_raw + slope * (t - raw)
  const double edge_raw = raw > b_raw.hi ? b_raw.hi : b_raw.lo;
  const double slope = raw > b_raw.hi ? (b1.hi - b_raw.hi) : (b1.lo - b_raw.lo);
  if (std::abs(1.0 - slope) < 1e-12) return edge_raw;
  const double t_star = (edge_raw - slope * raw) / (1.0 - slope);
  tau[ankle] = t_star;
  if (probe(tau).fz < fz_epsilon) return 0.0;
  return t_star;
}

// ---------------------------------------------------------------------------
// Controller interface used by the hybrid executor

struct ControlDiagnostics {
  double tau_raw_ankle = 0.0;
  double tau_filt_ankle = 0.0;
  double copx = 0.0;
  double phase = 0.0;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(double t, DomainLabel domain) = 0;
  virtual Vec6 compute(double t, const Sensors& s, const ContactProbe& probe) = 0;
  virtual void on_impact(double /*t*/, DomainLabel /*new_domain*/) {}
  /// Earliest time after a domain switch at which the swing-foot guard is armed.
  virtual double guard_arm_delay() const { return 0.0; }
  virtual ControlDiagnostics diagnostics() const { return {}; }
};

/// Holds a fixed torque; used for passive and feed-forward runs.
class ConstantTorqueController final : public Controller {
 public:
  explicit ConstantTorqueController(const Vec6& tau = Vec6::Zero()) : tau_(tau) {}
  void reset(double, DomainLabel) override {}
  Vec6 compute(double, const Sensors&, const ContactProbe&) override { return tau_; }
  double guard_arm_delay() const override { return 1e9; }

 private:
  Vec6 tau_;
};

inline double cop_from_forces(double f_heel, double f_toe, const FootGeometry& foot, double fz_epsilon = 1e-9);

/// Layered gait-tracking controller.
class WalkingController final : public Controller {
 public:
  WalkingController(GaitTrajectory gait, ControllerConfig cfg, RobotParams params)
      : gait_(std::move(gait)), cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    validate_gait(gait_);
  }

  void reset(double t, DomainLabel domain) override {
    domain_ = prev_domain_ = domain;
    step_start_ = prev_step_start_ = t;
    switch_time_ = -1e9;
  }

  void on_impact(double t, DomainLabel new_domain) override {
    prev_domain_ = domain_;
    prev_step_start_ = step_start_;
    domain_ = new_domain;
    step_start_ = t;
    switch_time_ = t;
  }

  double guard_arm_delay() const override { return 0.5 * gait_.step_duration; }

  DomainLabel domain() const { return domain_; }
  const ControllerConfig& config() const { return cfg_; }

  double phase(double t) const { return std::clamp((t - step_start_) / gait_.step_duration, 0.0, 1.0); }

  Vec6 compute(double t, const Sensors& s, const ContactProbe& probe) override {
    double raw_in = 0.0, raw_out = 0.0;
    Vec6 tau = law(domain_, step_start_, t, s, raw_in);
    const double since = t - switch_time_;
    double raw = raw_in;
    if (since >= 0.0 && since < cfg_.blend_window) {
      const Vec6 tau_out = law(prev_domain_, prev_step_start_, t, s, raw_out);
      // The ankle that just left the ground hands over faster; its old stance
      // torque would spin the unloaded foot.
      const int lifted = ankle_joint(swing_side(domain_));
      for (int j = 0; j < 6; ++j) {
        const double window = j == lifted ? std::min(cfg_.blend_window, cfg_.lift_blend_window) : cfg_.blend_window;
        tau[j] = blend(tau_out[j], tau[j], since, window);
      }
      raw = blend(raw_out, raw_in, since, cfg_.blend_window);
    }
    for (int j = 0; j < 6; ++j) tau[j] = std::clamp(tau[j], -params_.torque_limit[j], params_.torque_limit[j]);

    const Side stance = stance_side(domain_);
    const int a = ankle_joint(stance);
    diag_.tau_raw_ankle = raw;
    if (cfg_.cop_filter_on && probe)
      tau[a] = cop_filter_consistent(tau, a, probe, params_.foot, cfg_.alpha, cfg_.fz_epsilon);
    diag_.tau_filt_ankle = tau[a];
    const FootForces& f = s.foot(stance);
    diag_.copx = f.normal() > cfg_.fz_epsilon ? cop_from_forces(f.heel, f.toe, params_.foot) : 0.0;
    diag_.phase = phase(t);
    for (int j = 0; j < 6; ++j)
      if (!std::isfinite(tau[j])) tau[j] = 0.0;
    return tau;
  }

  ControlDiagnostics diagnostics() const override { return diag_; }

 private:
  Vec6 law(DomainLabel domain, double step_start, double t, const Sensors& s, double& raw_ankle) const {
    const double tau_phase = std::clamp((t - step_start) / gait_.step_duration, 0.0, 1.0);
    const JointReference ref = evaluate(gait_for(gait_, domain), tau_phase);
    Vec6 tau = joint_pd(ref.position, ref.velocity, s.joint_pos, s.joint_vel, cfg_.kp, cfg_.kd, params_.torque_limit);

    const Side swing = swing_side(domain), stance = stance_side(domain);
    const int sa = ankle_joint(swing);
    if (cfg_.swing_ik_on) {
      const auto [q_des, qd_des] = swing_ankle_target(s, swing);
      tau[sa] = cfg_.kp[sa] * (q_des - s.joint_pos[sa]) + cfg_.kd[sa] * (qd_des - s.joint_vel[sa]);
    }
    const int st = ankle_joint(stance);
    if (cfg_.pelvis_loop_on) {
      const auto [pitch_des, rate_des] = pelvis_reference(gait_, tau_phase);
      tau[st] = stance_pelvis_control(s.pelvis_pitch, s.pelvis_pitch_rate, pitch_des, rate_des, cfg_.pelvis_kp,
                                      cfg_.pelvis_kd);
    }
    raw_ankle = tau[st];
    return tau;
  }

  GaitTrajectory gait_;
  ControllerConfig cfg_;
  RobotParams params_;
  DomainLabel domain_ = DomainLabel::RightStance;
  DomainLabel prev_domain_ = DomainLabel::RightStance;
  double step_start_ = 0.0;
  double prev_step_start_ = 0.0;
  double switch_time_ = -1e9;
  ControlDiagnostics diag_{};
};

inline double cop_from_forces(double f_heel, double f_toe, const FootGeometry& foot, double fz_epsilon) {
  const double total = f_heel + f_toe;
  if (total <= fz_epsilon) throw Error(ErrorKind::NoContact, "no normal force on the foot");
  return (foot.x_t * f_toe - foot.x_h * f_heel) / total;
}

}  // namespace exo
