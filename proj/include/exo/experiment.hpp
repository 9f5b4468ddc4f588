#pragma once

// Scenario runners shared by the CLI and the acceptance harness.

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "exo/analysis.hpp"
#include "exo/balance.hpp"
#include "exo/config.hpp"
#include "exo/control.hpp"
#include "exo/gait.hpp"
#include "exo/gait_design.hpp"
#include "exo/hybrid.hpp"

namespace exo {

struct WalkOutcome {
  GaitTrajectory gait;
  HybridSystemSpec spec;
  HybridTrace trace;
  RunMetrics metrics;
};

inline GaitTrajectory scenario_gait(const Scenario& s) {
  if (s.gait_path.empty()) throw Error(ErrorKind::ParseError, "key 'scenario.gait': required for a walk scenario");
  return load_gait(s.resolve(s.gait_path).string());
}

/// Walks the scenario's gait from its stored initial state.
inline WalkOutcome run_walk(const Scenario& s, const MetricsOptions& mopt = {}) {
  WalkOutcome out;
  out.gait = scenario_gait(s);
  out.spec = s.system();
  WalkingController ctl(out.gait, s.controller, out.spec.params);
  const State x0 = nominal_initial_state(out.gait, out.spec.params);
  out.trace = hybrid_run(x0, DomainLabel::RightStance, ctl, out.spec, s.limits);
  out.metrics = metrics(out.trace, out.gait, out.spec.params, mopt);
  return out;
}

inline void write_walk_outputs(const WalkOutcome& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_trace_csv(w.trace, (dir / "trace.csv").string());
  {
    std::ofstream os(dir / "metrics.json");
    nlohmann::json j = metrics_to_json(w.metrics);
    j["termination"] = to_string(w.trace.termination);
    os << j.dump(2) << '\n';
  }
  {
    std::ofstream os(dir / "events.json");
    os << events_to_json(w.trace).dump(2) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Balance

struct BalanceSetup {
  Equilibrium eq;
  BalancePlant plant;
  ClfData clf;
};

/// Equilibrium, reduced plant, CLF with Q = I and its validity radius.
inline BalanceSetup prepare_balance(const RobotParams& p, const BalanceGains& gains, double c3_scale,
                                    const BallOptions& ball = {}) {
  const Equilibrium eq = find_equilibrium(p);
  BalancePlant plant(eq, p, gains);
  ClfData clf = make_clf_data(linearize(plant), Eigen::MatrixXd::Identity(kBalanceStates, kBalanceStates), c3_scale);
  auto f = [&](const Eigen::VectorXd& x, double u) -> Eigen::VectorXd { return plant(Vec12(x), u); };
  clf.radius = estimate_validity_ball(clf, f, ball_directions(kBalanceStates, ball.directions, ball.seed), ball);
  return {eq, plant, clf};
}

inline BalanceSetup prepare_balance(const Scenario& s) {
  const RobotParams p = s.robot();
  if (!s.balance.clf_file.empty()) {
    const BalanceFile f = load_balance(s.resolve(s.balance.clf_file).string());
    return {f.equilibrium, BalancePlant(f.equilibrium, p, s.balance.gains), f.clf};
  }
  return prepare_balance(p, s.balance.gains, s.balance.c3_scale);
}

/// Seeded random direction of norm `norm` in the reduced state.
inline Vec12 perturbation(double norm, std::uint64_t seed) {
  if (norm == 0.0) return Vec12::Zero();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec12 x;
  for (int i = 0; i < kBalanceStates; ++i) x[i] = nd(rng);
  return norm * x.normalized();
}

struct BalanceOutcome {
  Vec12 x0 = Vec12::Zero();
  HybridSystemSpec spec;
  HybridTrace trace;
  std::vector<BalanceSample> samples;
};

/// Runs the balance controller from the equilibrium offset by the scenario's
/// perturbation. The run ends at limits.max_time or on a fall.
inline BalanceOutcome run_balance(const Scenario& s, const BalanceSetup& setup) {
  BalanceOutcome out;
  double norm = s.balance.perturbation_norm;
  if (s.balance.perturbation_radii > 0.0) norm = s.balance.perturbation_radii * setup.clf.radius;
  out.x0 = perturbation(norm, s.seed);
  out.spec = s.system();
  BalanceController ctl(setup.plant, s.controller, s.balance.mode, setup.clf, s.balance.rho);
  out.trace = hybrid_run(setup.plant.full_state(out.x0), setup.eq.stance, ctl, out.spec,
                         {std::numeric_limits<int>::max(), s.limits.max_time});
  out.samples = balance_samples(out.trace, setup.plant, setup.clf, out.spec, s.balance.rho);
  return out;
}

struct BalanceSummary {
  double max_x_norm = 0.0;
  double final_x_norm = 0.0;
  double min_edge_force = 0.0;  // smallest heel or toe load, N
  double max_cop_ratio = 0.0;   // largest COPx / bound, the bound being alpha x_t or alpha x_h
  int cop_violations = 0;       // samples with COPx outside alpha [-x_h, x_t]
  double max_pelvis_deviation = 0.0;  // world pelvis pitch minus equilibrium, rad
  int delta_zero_samples = 0;
  double max_vdot_violation = -std::numeric_limits<double>::infinity();  // Vdot + c3 |x| where delta = 0
  double time_to_1e3 = -1.0;    // first time |x| <= 1e-3, -1 if never
  bool fell = false;
};

inline BalanceSummary summarize_balance(const BalanceOutcome& o, const BalanceSetup& setup, double alpha) {
  BalanceSummary m;
  const RobotParams& p = o.spec.params;
  m.min_edge_force = std::numeric_limits<double>::infinity();
  m.fell = o.trace.fell();
  for (const TraceSample& s : o.trace.samples) {
    const FootForces f = foot_forces_from(s.wrench, p.foot);
    m.min_edge_force = std::min({m.min_edge_force, f.heel, f.toe});
    if (f.normal() > 0.0) {
      const double cop = cop_from_forces(f.heel, f.toe, p.foot);
      const double bound = cop >= 0.0 ? alpha * p.foot.x_t : alpha * p.foot.x_h;
      m.max_cop_ratio = std::max(m.max_cop_ratio, std::abs(cop) / bound);
      if (cop > alpha * p.foot.x_t + 1e-12 || cop < -alpha * p.foot.x_h - 1e-12) ++m.cop_violations;
    }
    m.max_pelvis_deviation =
        std::max(m.max_pelvis_deviation, std::abs(s.state.q[kPelvisPitch] + s.tilt - setup.eq.q[kPelvisPitch]));
  }
  for (const BalanceSample& b : o.samples) {
    m.max_x_norm = std::max(m.max_x_norm, b.x_norm);
    if (b.delta == 0.0) {
      ++m.delta_zero_samples;
      m.max_vdot_violation = std::max(m.max_vdot_violation, b.vdot + setup.clf.c3 * b.x_norm);
    }
    if (m.time_to_1e3 < 0.0 && b.x_norm <= 1e-3) m.time_to_1e3 = b.t;
  }
  if (!o.samples.empty()) m.final_x_norm = o.samples.back().x_norm;
  return m;
}

inline nlohmann::json balance_summary_to_json(const BalanceSummary& m) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"max_x_norm", m.max_x_norm},
          {"final_x_norm", m.final_x_norm},
          {"min_edge_force", num(m.min_edge_force)},
          {"max_cop_ratio", m.max_cop_ratio},
          {"cop_violations", m.cop_violations},
          {"max_pelvis_deviation", m.max_pelvis_deviation},
          {"delta_zero_samples", m.delta_zero_samples},
          {"max_vdot_violation", num(m.max_vdot_violation)},
          {"time_to_1e3", m.time_to_1e3},
          {"fell", m.fell}};
}

inline void write_balance_outputs(const BalanceOutcome& o, const BalanceSetup& setup, const BalanceSummary& m,
                                  BalanceMode mode, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_trace_csv(o.trace, (dir / "trace.csv").string());
  write_balance_csv(o.samples, (dir / "balance.csv").string());
  {
    std::ofstream os(dir / "balance.json");
    nlohmann::json j = balance_to_json(setup.eq, setup.clf);
    j["mode"] = to_string(mode);
    j["x0"] = std::vector<double>(o.x0.data(), o.x0.data() + kBalanceStates);
    j["termination"] = to_string(o.trace.termination);
    j["summary"] = balance_summary_to_json(m);
    os << j.dump(2) << '\n';
  }
}

}  // namespace exo
