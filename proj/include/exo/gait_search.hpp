#pragma once

// Gait constraint check by short simulation, and a single-shooting Nelder-Mead
// search over the Bezier coefficients.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "exo/analysis.hpp"
#include "exo/control.hpp"
#include "exo/gait.hpp"
#include "exo/gait_design.hpp"
#include "exo/hybrid.hpp"
#include "exo/nelder_mead.hpp"

namespace exo {

struct GaitCheckOptions {
  int steps = 2;
  double clearance_margin = 0.065;  // m
  double clearance_from = 0.3;
  double clearance_to = 0.7;
  double periodicity_tol = 0.05;
};

struct GaitConstraintReport {
  double min_clearance = 0.0;
  double friction_margin = 0.0;  // min over the trace of mu Fz - |Fx|, N
  double cop_excursion = 0.0;    // max |COPx|, m
  double cop_limit = 0.0;
  double periodicity_residual = 0.0;
  double mean_sq_torque = 0.0;   // mean over samples of |tau|^2, (N m)^2
  int steps_completed = 0;
  bool fell = false;
  bool slip_violation = false;
  bool clearance_ok = false;
  bool friction_ok = false;
  bool cop_ok = false;
  bool periodic_ok = false;

  bool all_ok() const { return clearance_ok && friction_ok && cop_ok && periodic_ok; }
};

/// Post-impact state expressed as a right-stance state with the stance ankle at x = 0.
inline State relabel_to_right(const State& x, DomainLabel domain, const RobotParams& p) {
  State out = x;
  if (domain == DomainLabel::LeftStance) {
    out.q = mirror_legs(x.q);
    out.v = mirror_legs(x.v);
  }
  out.q[kBaseX] -= forward_kinematics(out.q, p).foot(Side::Right).ankle.x();
  return out;
}

/// Distance between the state at the start of a step and the state just after
/// the following impact, relabeled to the same stance leg.
inline double periodicity_residual(const State& start, const State& post, DomainLabel post_domain,
                                   const RobotParams& p) {
  const State a = relabel_to_right(start, DomainLabel::RightStance, p);
  const State b = relabel_to_right(post, post_domain, p);
  return std::sqrt((b.q - a.q).squaredNorm() + (b.v - a.v).squaredNorm());
}

/// Runs the gait for a few steps on level ground with the given controller and
/// reports the constraint set. A fall fails every flag.
inline GaitConstraintReport check_gait(const GaitTrajectory& g, const RobotParams& p, const ControllerConfig& cfg,
                                       double mu = 0.6, const GaitCheckOptions& opt = {}) {
  HybridSystemSpec spec;
  spec.params = p;
  spec.mu = mu;
  WalkingController ctl(g, cfg, p);
  const State x0 = nominal_initial_state(g, p);
  const HybridTrace tr = hybrid_run(x0, DomainLabel::RightStance, ctl, spec, {opt.steps, 4.0 * opt.steps * g.step_duration});

  GaitConstraintReport r;
  r.cop_limit = p.foot.cop_box_half_x;
  r.steps_completed = tr.steps();
  r.fell = tr.fell();
  r.slip_violation = tr.slip_samples > 0;
  r.min_clearance = std::numeric_limits<double>::infinity();
  r.friction_margin = std::numeric_limits<double>::infinity();
  double sq = 0.0;
  for (const TraceSample& s : tr.samples) {
    if (s.diag.phase >= opt.clearance_from && s.diag.phase <= opt.clearance_to)
      r.min_clearance = std::min(r.min_clearance, forward_kinematics(s.state.q, p).foot(swing_side(s.domain)).min_height());
    r.friction_margin = std::min(r.friction_margin, mu * s.wrench.fz - std::abs(s.wrench.fx));
    if (s.wrench.fz > 0.0) r.cop_excursion = std::max(r.cop_excursion, std::abs(wrench_cop(s.wrench)));
    sq += s.tau.squaredNorm();
  }
  r.mean_sq_torque = sq / static_cast<double>(tr.samples.size());
  r.periodicity_residual =
      tr.events.empty() ? std::numeric_limits<double>::infinity() : periodicity_residual(x0, tr.events.front().post, tr.events.front().to, p);

  if (r.fell || r.steps_completed < opt.steps) return r;
  r.clearance_ok = r.min_clearance >= opt.clearance_margin;
  r.friction_ok = r.friction_margin > 0.0 && !r.slip_violation;
  r.cop_ok = r.cop_excursion <= r.cop_limit;
  r.periodic_ok = r.periodicity_residual <= opt.periodicity_tol;
  return r;
}

/// Walks the gait on level ground and returns the relabeled post-impact state
/// of the last step, a point on (or near) the closed-loop orbit.
inline GaitInitialState settle_initial_state(const GaitTrajectory& g, const RobotParams& p, const ControllerConfig& cfg,
                                             int steps = 20) {
  HybridSystemSpec spec;
  spec.params = p;
  GaitTrajectory plain = g;
  plain.initial_state.reset();
  WalkingController ctl(plain, cfg, p);
  const HybridTrace tr = hybrid_run(initial_state_from_gait(plain, p), DomainLabel::RightStance, ctl, spec,
                                    {steps, 4.0 * steps * g.step_duration});
  if (tr.fell() || tr.steps() < steps)
    throw Error(ErrorKind::NoConvergence, std::string("gait did not settle: ") + to_string(tr.termination));
  const ImpactEvent& e = tr.events.back();
  const State x = relabel_to_right(e.post, e.to, p);
  return {x.q, x.v};
}

inline nlohmann::json report_to_json(const GaitConstraintReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"min_clearance", num(r.min_clearance)},
          {"friction_margin", num(r.friction_margin)},
          {"cop_excursion", r.cop_excursion},
          {"cop_limit", r.cop_limit},
          {"periodicity_residual", num(r.periodicity_residual)},
          {"mean_sq_torque", r.mean_sq_torque},
          {"steps_completed", r.steps_completed},
          {"fell", r.fell},
          {"slip_violation", r.slip_violation},
          {"pass", {{"clearance", r.clearance_ok}, {"friction", r.friction_ok}, {"cop", r.cop_ok}, {"periodicity", r.periodic_ok}}}};
}

struct GaitSearchWeights {
  double periodicity = 1.0;
  double clearance = 1e4;  // per m^2 of shortfall
  double friction = 1e-4;  // per N^2 of negative margin
  double cop = 1e4;        // per m^2 of excursion beyond the box
  double torque = 1e-7;    // per (N m)^2 of mean squared torque
  double fall = 1e3;
};

inline double gait_objective(const GaitConstraintReport& r, const GaitSearchWeights& w,
                             const GaitCheckOptions& opt = {}) {
  auto sq = [](double v) { return v * v; };
  double f = w.torque * r.mean_sq_torque;
  if (r.fell || !std::isfinite(r.periodicity_residual)) return f + w.fall;
  f += w.periodicity * sq(r.periodicity_residual);
  f += w.clearance * sq(std::max(0.0, opt.clearance_margin - r.min_clearance));
  f += w.friction * sq(std::max(0.0, -r.friction_margin));
  f += w.cop * sq(std::max(0.0, r.cop_excursion - r.cop_limit));
  return f;
}

struct GaitSearchResult {
  GaitTrajectory gait;
  GaitConstraintReport report;
  double objective = 0.0;
  double seed_objective = 0.0;
  int evaluations = 0;
  bool budget_exhausted = false;
};

/// Nelder-Mead over all 36 Bezier coefficients. Never returns a candidate
/// worse than the seed. A zero budget returns the seed.
inline GaitSearchResult search_gait(const GaitTrajectory& seed, const RobotParams& p, const ControllerConfig& cfg,
                                    const GaitSearchWeights& w, int budget, std::uint64_t rng_seed = 0,
                                    const GaitCheckOptions& opt = {}) {
  auto unpack = [&](const Eigen::VectorXd& x) {
    GaitTrajectory g = seed;
    for (int j = 0; j < kNumJoints; ++j)
      for (int c = 0; c < kBezierCoeffs; ++c) g.bezier[j][c] = x[j * kBezierCoeffs + c];
    return g;
  };
  Eigen::VectorXd x0(kNumJoints * kBezierCoeffs);
  for (int j = 0; j < kNumJoints; ++j)
    for (int c = 0; c < kBezierCoeffs; ++c) x0[j * kBezierCoeffs + c] = seed.bezier[j][c];

  auto evaluate_candidate = [&](const GaitTrajectory& g, GaitConstraintReport* out) {
    try {
      const GaitConstraintReport r = check_gait(g, p, cfg, 0.6, opt);
      if (out) *out = r;
      return gait_objective(r, w, opt);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  GaitSearchResult res;
  res.gait = seed;
  res.seed_objective = evaluate_candidate(seed, &res.report);
  res.objective = res.seed_objective;
  res.evaluations = 1;
  if (budget <= 1) {
    res.budget_exhausted = true;
    return res;
  }

  NelderMeadOptions nm;
  nm.max_evals = budget - 1;
  nm.initial_step = 0.02;
  nm.seed = rng_seed;
  const NelderMeadResult best =
      nelder_mead([&](const Eigen::VectorXd& x) { return evaluate_candidate(unpack(x), nullptr); }, x0, nm);
  res.evaluations += best.evals;
  res.budget_exhausted = best.budget_exhausted;
  if (best.f < res.seed_objective) {
    res.gait = unpack(best.x);
    res.objective = evaluate_candidate(res.gait, &res.report);
  }
  return res;
}

}  // namespace exo
