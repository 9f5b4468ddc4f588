#pragma once

// Impact-angle energy analysis and run metrics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "exo/control.hpp"
#include "exo/error.hpp"
#include "exo/gait.hpp"
#include "exo/hybrid.hpp"
#include "exo/model.hpp"

namespace exo {

struct ImpactAnalysisParams {
  double com_x = 0.19;  // horizontal distance from the impact point to the COM, m
  double com_z = 0.95;  // vertical distance, m
  double g = 9.81;

  void validate() const {
    if (!(com_z > 0.0)) throw Error(ErrorKind::InvalidArgument, "COMz must be positive");
    if (!(g > 0.0)) throw Error(ErrorKind::InvalidArgument, "g must be positive");
  }
};

/// COMx from the toe to the middle of the COP box, COMz the standing COM height.
inline ImpactAnalysisParams default_impact_params(const RobotParams& p) {
  Vec6 stand = Vec6::Zero();
  const Configuration q = configuration_from_stance(stand, Side::Right, Vec2(0.0, p.foot.z_a), p);
  ImpactAnalysisParams a;
  a.com_x = p.foot.x_t + p.foot.cop_box_half_x;
  a.com_z = center_of_mass(q, p).position.y();
  a.g = p.g;
  return a;
}

struct ImpactVelocity {
  double v = 0.0;            // m/s
  bool com_lowered = false;  // the rotation raises the COM, so no kinetic gain
};

inline ImpactVelocity impact_velocity(double theta, const ImpactAnalysisParams& a) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double dx = c * a.com_x - s * a.com_z - a.com_x;
  const double dz = s * a.com_x + c * a.com_z - a.com_z;
  const double sum = dx + dz;
  if (sum < 0.0) return {0.0, true};
  return {std::sqrt(2.0 * a.g * sum), false};
}

struct VelocityPoint {
  double theta = 0.0;  // rad
  ImpactVelocity value{};
};

inline std::vector<VelocityPoint> velocity_curve(const ImpactAnalysisParams& a, double theta_min, double theta_max,
                                                 int n) {
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "velocity curve needs at least 2 points");
  a.validate();
  std::vector<VelocityPoint> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    // The fraction is formed first so refined grids reproduce shared points bitwise.
    const double theta = theta_min + (theta_max - theta_min) * (static_cast<double>(i) / (n - 1));
    out[static_cast<std::size_t>(i)] = {theta, impact_velocity(theta, a)};
  }
  return out;
}

inline void write_velocity_curve_csv(std::ostream& os, const std::vector<VelocityPoint>& curve) {
  os << "theta_deg,v_mps,com_lowered\n";
  for (const auto& pt : curve)
    os << format_double(pt.theta * 180.0 / std::numbers::pi) << ',' << format_double(pt.value.v) << ','
       << (pt.value.com_lowered ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// Run metrics

struct RunMetrics {
  int steps_completed = 0;
  bool fell = false;
  double pelvis_pitch_rmse = 0.0;  // rad
  double pelvis_roll_rmse = 0.0;   // rad, zero in the planar model
  double min_clearance = std::numeric_limits<double>::infinity();  // m, mid-swing
  double cop_excursion = 0.0;      // m, largest |COPx| in the sole frame
  double swing_pitch_rms = 0.0;    // rad, swing-foot world pitch
};

struct MetricsOptions {
  int max_steps = -1;  // restrict to the first n completed steps; negative for all
  double clearance_from = 0.3;
  double clearance_to = 0.7;
};

/// Metrics over completed steps. The pelvis reference is the gait's recorded
/// world pelvis pitch, evaluated at the controller phase stored in each sample.
inline RunMetrics metrics(const HybridTrace& trace, const GaitTrajectory& gait, const RobotParams& p,
                          const MetricsOptions& opt = {}) {
  if (trace.samples.empty()) throw Error(ErrorKind::InvalidArgument, "empty trace");
  RunMetrics m;
  m.steps_completed = trace.steps();
  m.fell = trace.fell();

  // Samples belonging to completed steps end at the last counted impact. A run
  // that never completed a step is measured over its whole length.
  int counted = m.steps_completed;
  if (opt.max_steps >= 0) counted = std::min(counted, opt.max_steps);
  const double t_end = counted > 0 ? trace.events[static_cast<std::size_t>(counted - 1)].t
                                   : std::numeric_limits<double>::infinity();

  double se = 0.0, sw = 0.0;
  int n = 0, nsw = 0;
  for (const TraceSample& s : trace.samples) {
    if (s.t > t_end) break;
    const double e = s.state.q[kPelvisPitch] + s.tilt - pelvis_reference(gait, s.diag.phase).first;
    se += e * e;
    ++n;
    const Kinematics k = forward_kinematics(s.state.q, p);
    const FootPoints& swing = k.foot(swing_side(s.domain));
    const double pitch = swing.pitch + s.tilt;
    sw += pitch * pitch;
    ++nsw;
    if (s.diag.phase >= opt.clearance_from && s.diag.phase <= opt.clearance_to)
      m.min_clearance = std::min(m.min_clearance, swing.min_height());
    if (s.wrench.fz > 0.0) m.cop_excursion = std::max(m.cop_excursion, std::abs(wrench_cop(s.wrench)));
  }
  m.pelvis_pitch_rmse = n > 0 ? std::sqrt(se / n) : 0.0;
  m.swing_pitch_rms = nsw > 0 ? std::sqrt(sw / nsw) : 0.0;
  return m;
}

inline nlohmann::json metrics_to_json(const RunMetrics& m) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["steps_completed"] = m.steps_completed;
  j["fell"] = m.fell;
  j["pelvis_pitch_rmse"] = m.pelvis_pitch_rmse;
  j["pelvis_roll_rmse"] = m.pelvis_roll_rmse;
  j["min_clearance"] = std::isfinite(m.min_clearance) ? nlohmann::json(m.min_clearance) : nlohmann::json(nullptr);
  j["cop_excursion"] = m.cop_excursion;
  j["swing_pitch_rms"] = m.swing_pitch_rms;
  return j;
}

}  // namespace exo
