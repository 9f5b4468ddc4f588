#pragma once

// Two-domain hybrid executor: flat-foot single support flows, swing-foot
// touchdown guard, plastic impact with leg role swap.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "exo/control.hpp"
#include "exo/dynamics.hpp"
#include "exo/model.hpp"

namespace exo {

/// Piecewise-linear profile, held constant outside its knots.
struct PiecewiseLinear {
  std::vector<std::pair<double, double>> knots;  // (x, value), x increasing

  double operator()(double x) const {
    if (knots.empty()) return 0.0;
    if (x <= knots.front().first) return knots.front().second;
    if (x >= knots.back().first) return knots.back().second;
    for (std::size_t i = 1; i < knots.size(); ++i) {
      if (x <= knots[i].first) {
        const auto& [x0, y0] = knots[i - 1];
        const auto& [x1, y1] = knots[i];
        return x1 > x0 ? y0 + (y1 - y0) * (x - x0) / (x1 - x0) : y1;
      }
    }
    return knots.back().second;
  }

  static PiecewiseLinear constant(double v) { return {{{0.0, v}}}; }
};

/// Horizontal/vertical force on the hip point over [t_start, t_end).
struct PelvisPush {
  double t_start = 0.0;
  double t_end = 0.0;
  double force = 0.0;  // N
  Vec2 direction{1.0, 0.0};
};

struct HybridSystemSpec {
  RobotParams params{};
  std::array<DomainLabel, 2> cycle{DomainLabel::RightStance, DomainLabel::LeftStance};
  double dt = 1e-3;
  BaumgarteGains baumgarte{};
  double event_tol = 1e-8;
  double velocity_bound = 100.0;
  double fall_height = 0.6;
  double fall_pitch = 45.0 * std::numbers::pi / 180.0;
  /// Treat a centre of pressure outside the sole (negative heel or toe load) as a fall.
  bool foot_roll_is_fall = true;
  double mu = 0.6;
  double fz_epsilon = 1.0;
  PiecewiseLinear terrain_tilt{};  // ground pitch [rad] versus time [s]
  std::vector<PelvisPush> pushes{};
  double sensor_noise_std = 0.0;
  std::uint64_t seed = 0;

  Vec2 gravity_at(double t) const { return gravity_vector(params.g, terrain_tilt(t)); }

  Vec9 external_at(double t) const {
    Vec2 f = Vec2::Zero();
    for (const PelvisPush& p : pushes)
      if (t >= p.t_start && t < p.t_end) f += p.force * p.direction;
    return pelvis_force_generalized(f);
  }
};

enum class Termination { MaxSteps, MaxTime, FallPelvisHeight, FallPelvisPitch, FootRoll, Diverged };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::MaxSteps: return "max_steps";
    case Termination::MaxTime: return "max_time";
    case Termination::FallPelvisHeight: return "fall_pelvis_height";
    case Termination::FallPelvisPitch: return "fall_pelvis_pitch";
    case Termination::FootRoll: return "fall_foot_roll";
    case Termination::Diverged: return "diverged";
  }
  return "unknown";
}

inline bool is_fall(Termination t) { return t != Termination::MaxSteps && t != Termination::MaxTime; }

struct TraceSample {
  double t = 0.0;
  State state{};
  Vec6 tau = Vec6::Zero();
  ContactWrench wrench{};
  DomainLabel domain = DomainLabel::RightStance;
  ControlDiagnostics diag{};
  double tilt = 0.0;
};

struct ImpactEvent {
  double t = 0.0;
  DomainLabel from = DomainLabel::RightStance;
  DomainLabel to = DomainLabel::LeftStance;
  State pre{};
  State post{};
  double touchdown_pitch = 0.0;  // swing foot pitch relative to the ground at first contact
  double energy_change = 0.0;    // kinetic energy gained by flattening the foot [J]
};

struct HybridTrace {
  std::vector<TraceSample> samples;
  std::vector<ImpactEvent> events;
  Termination termination = Termination::MaxTime;
  int slip_samples = 0;
  int lift_samples = 0;

  int steps() const { return static_cast<int>(events.size()); }
  bool fell() const { return is_fall(termination); }
};

namespace detail {

inline State rk4_step(const State& x, double t, double h, const Vec6& tau, DomainLabel d, const StanceAnchor& anchor,
                      const HybridSystemSpec& spec) {
  auto deriv = [&](const State& s, double tt) {
    ContactOptions o{anchor, spec.gravity_at(tt), spec.baumgarte, spec.external_at(tt)};
    return std::pair<Vec9, Vec9>{s.v, constrained_accel(s, tau, d, spec.params, o).vdot};
  };
  const auto k1 = deriv(x, t);
  const auto k2 = deriv({x.q + 0.5 * h * k1.first, x.v + 0.5 * h * k1.second}, t + 0.5 * h);
  const auto k3 = deriv({x.q + 0.5 * h * k2.first, x.v + 0.5 * h * k2.second}, t + 0.5 * h);
  const auto k4 = deriv({x.q + h * k3.first, x.v + h * k3.second}, t + h);
  State out;
  out.q = x.q + h / 6.0 * (k1.first + 2.0 * k2.first + 2.0 * k3.first + k4.first);
  out.v = x.v + h / 6.0 * (k1.second + 2.0 * k2.second + 2.0 * k3.second + k4.second);
  return out;
}

inline double swing_height(const State& x, DomainLabel d, const RobotParams& p) {
  return forward_kinematics(x.q, p).foot(swing_side(d)).min_height();
}

}  // namespace detail

inline Sensors make_sensors(const State& x, const ContactWrench& w, DomainLabel d, double tilt, const RobotParams& p) {
  Sensors s;
  s.joint_pos = x.q.tail<6>();
  s.joint_vel = x.v.tail<6>();
  s.pelvis_pitch = x.q[kPelvisPitch] + tilt;
  s.pelvis_pitch_rate = x.v[kPelvisPitch];
  const Kinematics k = forward_kinematics(x.q, p);
  for (Side side : {Side::Right, Side::Left})
    s.shank[side_index(side)] = {0.0, k.bodies[shank_body(side)].pitch + tilt, 0.0};
  s.feet[side_index(stance_side(d))] = foot_forces_from(w, p.foot);
  return s;
}

struct TouchdownResult {
  State state{};
  double pitch = 0.0;
  double energy_change = 0.0;
};

/// Flatten a foot that touched down at an angle: the whole robot rotates about
/// the contacting edge until the sole is flat, and the potential energy released
/// (or absorbed) reappears as forward velocity.
inline TouchdownResult flatten_touchdown(const State& x, Side foot, const RobotParams& p, const Vec2& gravity) {
  const Kinematics k = forward_kinematics(x.q, p);
  const FootPoints& f = k.foot(foot);
  const Vec2 c = f.heel.y() <= f.toe.y() ? f.heel : f.toe;
  const double rho = -f.pitch;
  const Eigen::Matrix2d r = rotation(rho);

  TouchdownResult out;
  out.pitch = f.pitch;
  State s = x;
  const Vec2 base(x.q[kBaseX], x.q[kBaseZ]);
  const Vec2 nb = c + r * (base - c) - Vec2(0.0, c.y());
  s.q[kBaseX] = nb.x();
  s.q[kBaseZ] = nb.y();
  s.q[kPelvisPitch] += rho;
  const Vec2 vb = r * Vec2(x.v[kBaseX], x.v[kBaseZ]);
  s.v[kBaseX] = vb.x();
  s.v[kBaseZ] = vb.y();

  const double d_pe = potential_energy(s.q, p, gravity) - potential_energy(x.q, p, gravity);
  if (d_pe != 0.0) {
    const Mat9 m = mass_matrix(s.q, p);
    const double a = 0.5 * m(kBaseX, kBaseX);
    const double b = (m * s.v)[kBaseX];
    const double c0 = d_pe;  // want a d^2 + b d = -d_pe
    const double disc = b * b - 4.0 * a * c0;
    double delta;
    if (disc < 0.0) {
      delta = -b / (2.0 * a);
    } else {
      const double r1 = (-b + std::sqrt(disc)) / (2.0 * a), r2 = (-b - std::sqrt(disc)) / (2.0 * a);
      delta = std::abs(r1) < std::abs(r2) ? r1 : r2;
    }
    const double ke0 = 0.5 * s.v.dot(m * s.v);
    s.v[kBaseX] += delta;
    out.energy_change = 0.5 * s.v.dot(m * s.v) - ke0;
  }
  out.state = s;
  return out;
}

struct RunLimits {
  int max_steps = 1000;
  double max_time = 10.0;
};

inline HybridTrace hybrid_run(const State& initial, DomainLabel start, Controller& controller,
                              const HybridSystemSpec& spec, RunLimits limits) {
  const RobotParams& p = spec.params;
  DomainLabel domain = start;
  StanceAnchor anchor = anchor_from(initial.q, p, stance_side(domain));
  anchor.pitch = 0.0;
  {
    const Vec3 res = stance_residual(initial.q, p, stance_side(domain), anchor);
    const Vec3 vel = stance_jacobian(initial.q, p, stance_side(domain)) * initial.v;
    if (res.norm() > 1e-6 || vel.norm() > 1e-6)
      throw Error(ErrorKind::PreconditionViolated, "initial state violates the stance constraint");
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  HybridTrace trace;
  State x = initial;
  double seg_t0 = 0.0;  // start of the current integration segment
  long k = 0;           // steps since seg_t0
  double domain_start = 0.0;
  Vec6 tau_prev = Vec6::Zero();
  controller.reset(0.0, domain);

  for (;;) {
    const double t = seg_t0 + static_cast<double>(k) * spec.dt;
    const double tilt = spec.terrain_tilt(t);
    ContactOptions opt{anchor, spec.gravity_at(t), spec.baumgarte, spec.external_at(t)};
    auto probe = [&](const Vec6& tau) { return constrained_accel(x, tau, domain, p, opt).wrench; };

    Sensors sensors = make_sensors(x, probe(tau_prev), domain, tilt, p);
    if (spec.sensor_noise_std > 0.0) {
      for (int j = 0; j < 6; ++j) sensors.joint_pos[j] += spec.sensor_noise_std * noise(rng);
      sensors.pelvis_pitch += spec.sensor_noise_std * noise(rng);
    }
    const Vec6 tau = controller.compute(t, sensors, probe);
    tau_prev = tau;
    const ConstrainedAccel ca = constrained_accel(x, tau, domain, p, opt);

    TraceSample smp{t, x, tau, ca.wrench, domain, controller.diagnostics(), tilt};
    trace.samples.push_back(smp);

    switch (friction_check(ca.wrench, spec.mu)) {
      case FrictionStatus::SlipViolation: ++trace.slip_samples; break;
      case FrictionStatus::LiftViolation: ++trace.lift_samples; break;
      case FrictionStatus::Ok: break;
    }
    const EdgeForces edges = edge_forces(ca.wrench, p.foot);
    if (x.q[kBaseZ] < spec.fall_height) {
      trace.termination = Termination::FallPelvisHeight;
      break;
    }
    if (std::abs(x.q[kPelvisPitch] + tilt) > spec.fall_pitch) {
      trace.termination = Termination::FallPelvisPitch;
      break;
    }
    if (spec.foot_roll_is_fall && (edges.heel < 0.0 || edges.toe < 0.0)) {
      trace.termination = Termination::FootRoll;
      break;
    }
    if (trace.steps() >= limits.max_steps) {
      trace.termination = Termination::MaxSteps;
      break;
    }
    if (t >= limits.max_time - 1e-12) {
      trace.termination = Termination::MaxTime;
      break;
    }

    State next = detail::rk4_step(x, t, spec.dt, tau, domain, anchor, spec);
    if (!next.q.allFinite() || !next.v.allFinite() || next.v.cwiseAbs().maxCoeff() > spec.velocity_bound) {
      trace.termination = Termination::Diverged;
      break;
    }

    const bool armed = t + spec.dt - domain_start >= controller.guard_arm_delay();
    if (armed) {
      const double h0 = detail::swing_height(x, domain, p);
      const double h1 = detail::swing_height(next, domain, p);
      if (h0 > 0.0 && h1 <= 0.0) {
        double lo = 0.0, hi = spec.dt;
        while (hi - lo > spec.event_tol) {
          const double mid = 0.5 * (lo + hi);
          if (detail::swing_height(detail::rk4_step(x, t, mid, tau, domain, anchor, spec), domain, p) > 0.0)
            lo = mid;
          else
            hi = mid;
        }
        const double t_ev = t + hi;
        const State pre = detail::rk4_step(x, t, hi, tau, domain, anchor, spec);
        const DomainLabel to = next_domain(domain);
        const TouchdownResult td = flatten_touchdown(pre, stance_side(to), p, spec.gravity_at(t_ev));
        const ImpactResult imp = impact_map(td.state, to, p);
        trace.events.push_back({t_ev, domain, to, pre, imp.post, td.pitch, td.energy_change});

        domain = to;
        anchor = anchor_from(imp.post.q, p, stance_side(domain));
        x = imp.post;
        controller.on_impact(t_ev, domain);
        domain_start = t_ev;
        seg_t0 = t_ev;
        k = 0;
        continue;
      }
    }
    x = next;
    ++k;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Export

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trace_csv(const HybridTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  out << "t";
  for (int i = 0; i < 9; ++i) out << ",q" << i;
  for (int i = 0; i < 9; ++i) out << ",v" << i;
  for (int i = 0; i < 6; ++i) out << ",tau" << i;
  out << ",Fx,Fz,My,domain,tau_raw_ankle,tau_filt_ankle,copx,phase,tilt\n";
  for (const TraceSample& s : trace.samples) {
    out << format_double(s.t);
    for (int i = 0; i < 9; ++i) out << ',' << format_double(s.state.q[i]);
    for (int i = 0; i < 9; ++i) out << ',' << format_double(s.state.v[i]);
    for (int i = 0; i < 6; ++i) out << ',' << format_double(s.tau[i]);
    out << ',' << format_double(s.wrench.fx) << ',' << format_double(s.wrench.fz) << ',' << format_double(s.wrench.my)
        << ',' << static_cast<int>(s.domain) << ',' << format_double(s.diag.tau_raw_ankle) << ','
        << format_double(s.diag.tau_filt_ankle) << ',' << format_double(s.diag.copx) << ','
        << format_double(s.diag.phase) << ',' << format_double(s.tilt) << '\n';
  }
}

inline nlohmann::json state_to_json(const State& s) {
  return {{"q", std::vector<double>(s.q.data(), s.q.data() + 9)}, {"v", std::vector<double>(s.v.data(), s.v.data() + 9)}};
}

inline nlohmann::json events_to_json(const HybridTrace& trace) {
  nlohmann::json ev = nlohmann::json::array();
  for (const ImpactEvent& e : trace.events) {
    ev.push_back({{"t", e.t},
                  {"from", to_string(e.from)},
                  {"to", to_string(e.to)},
                  {"touchdown_pitch", e.touchdown_pitch},
                  {"energy_change", e.energy_change},
                  {"pre", state_to_json(e.pre)},
                  {"post", state_to_json(e.post)}});
  }
  return {{"events", ev},
          {"termination", to_string(trace.termination)},
          {"slip_samples", trace.slip_samples},
          {"lift_samples", trace.lift_samples}};
}

}  // namespace exo
