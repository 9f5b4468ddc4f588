// exosim: scenario runner for the walking and balance experiments.
//
//   exosim walk --config data/scenarios/walk_default.toml --out out/walk
//   exosim balance --config data/scenarios/balance_push.toml
//   exosim gait check --gait data/default_gait.json --mu 0.05
//   exosim gait search --gait data/default_gait.json --budget 200
//   exosim analyze impact-angle --theta-min -6 --theta-max 0 --n 61
//   exosim analyze ik-demo
//
// Exit codes: 0 ok, 1 usage/config error, 2 fall, 3 gait constraint failure.
// Log level comes from SPDLOG_LEVEL (e.g. SPDLOG_LEVEL=debug).

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "exo/analysis.hpp"
#include "exo/ankle_kinematics.hpp"
#include "exo/experiment.hpp"
#include "exo/gait_search.hpp"

namespace fs = std::filesystem;
using namespace exo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitFall = 2;
constexpr int kExitConstraint = 3;

constexpr double kDeg = std::numbers::pi / 180.0;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int runs = 1;
};

Scenario load_for(const Globals& g, ScenarioKind kind) {
  if (g.config.empty()) throw Error(ErrorKind::InvalidArgument, "--config <scenario.toml> is required");
  Scenario s = load_scenario(g.config);
  if (s.kind != kind)
    throw Error(ErrorKind::ParseError, std::string("key 'scenario.kind': expected \"") + to_string(kind) + "\", got \"" +
                                           to_string(s.kind) + "\"");
  if (g.seed) s.seed = *g.seed;
  if (!g.out.empty()) s.output = g.out;
  return s;
}

/// One scenario per run: seed + i, written to <out>/run_<i> when runs > 1.
std::vector<Scenario> expand_runs(const Scenario& base, int runs) {
  if (runs < 1) throw Error(ErrorKind::InvalidArgument, "--runs must be at least 1");
  if (runs == 1) return {base};
  std::vector<Scenario> out;
  for (int i = 0; i < runs; ++i) {
    Scenario s = base;
    s.seed = base.seed + static_cast<std::uint64_t>(i);
    s.output = (fs::path(base.output) / ("run_" + std::to_string(i))).string();
    out.push_back(s);
  }
  return out;
}

/// Runs `job` on every scenario concurrently and returns the worst exit code.
template <class Job>
int run_batch(const std::vector<Scenario>& runs, Job job) {
  std::vector<std::future<int>> futures;
  futures.reserve(runs.size());
  for (const Scenario& s : runs) futures.push_back(std::async(std::launch::async, job, s));
  int code = kExitOk;
  for (auto& f : futures) code = std::max(code, f.get());
  return code;
}

int cmd_walk(const Globals& g) {
  const Scenario base = load_for(g, ScenarioKind::Walk);
  return run_batch(expand_runs(base, g.runs), [](const Scenario& s) {
    const WalkOutcome w = run_walk(s);
    write_walk_outputs(w, s.output);
    spdlog::info("walk seed {}: {} steps, {}, pelvis rmse {:.4f} rad -> {}", s.seed, w.metrics.steps_completed,
                 to_string(w.trace.termination), w.metrics.pelvis_pitch_rmse, s.output);
    return w.metrics.fell ? kExitFall : kExitOk;
  });
}

int cmd_balance(const Globals& g) {
  const Scenario base = load_for(g, ScenarioKind::Balance);
  const BalanceSetup setup = prepare_balance(base);
  spdlog::info("equilibrium found, c3 {:.4g}, validity radius {:.4g}", setup.clf.c3, setup.clf.radius);
  return run_batch(expand_runs(base, g.runs), [&setup](const Scenario& s) {
    const BalanceOutcome o = run_balance(s, setup);
    const BalanceSummary m = summarize_balance(o, setup, s.controller.alpha);
    write_balance_outputs(o, setup, m, s.balance.mode, s.output);
    spdlog::info("balance seed {} ({}): {}, min edge force {:.2f} N, max |x| {:.3g} -> {}", s.seed,
                 to_string(s.balance.mode), to_string(o.trace.termination), m.min_edge_force, m.max_x_norm, s.output);
    return m.fell ? kExitFall : kExitOk;
  });
}

struct GaitArgs {
  std::string gait;
  std::string robot;
  std::optional<double> mu;
  int budget = 200;
};

/// Robot, gait and controller from --config when given, else from the flags.
struct GaitInputs {
  RobotParams params;
  GaitTrajectory gait;
  ControllerConfig controller;
  double mu = 0.6;
};

GaitInputs gait_inputs(const Globals& g, const GaitArgs& a) {
  GaitInputs in;
  std::string gait_path = a.gait;
  if (!g.config.empty()) {
    const Scenario s = load_scenario(g.config);
    in.params = s.robot();
    in.controller = s.controller;
    in.mu = s.mu;
    if (gait_path.empty() && !s.gait_path.empty()) gait_path = s.resolve(s.gait_path).string();
  }
  if (!a.robot.empty()) in.params = load_robot_params(a.robot);
  if (gait_path.empty()) throw Error(ErrorKind::InvalidArgument, "--gait <file> is required");
  in.gait = load_gait(gait_path);
  if (a.mu) {
    if (!(*a.mu > 0)) throw Error(ErrorKind::InvalidArgument, "--mu must be positive");
    in.mu = *a.mu;
  }
  return in;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

int cmd_gait_check(const Globals& g, const GaitArgs& a) {
  const GaitInputs in = gait_inputs(g, a);
  const GaitConstraintReport r = check_gait(in.gait, in.params, in.controller, in.mu);
  nlohmann::json j = report_to_json(r);
  j["mu"] = in.mu;
  const fs::path out = fs::path(g.out.empty() ? "out" : g.out) / "gait_report.json";
  write_json(out, j);
  spdlog::info("gait check: clearance {} friction {} cop {} periodicity {} -> {}", r.clearance_ok, r.friction_ok,
               r.cop_ok, r.periodic_ok, out.string());
  return r.all_ok() ? kExitOk : kExitConstraint;
}

int cmd_gait_search(const Globals& g, const GaitArgs& a) {
  if (a.budget < 0) throw Error(ErrorKind::InvalidArgument, "--budget must be non-negative");
  const GaitInputs in = gait_inputs(g, a);
  const GaitSearchResult res =
      search_gait(in.gait, in.params, in.controller, GaitSearchWeights{}, a.budget, g.seed.value_or(0));
  if (!std::isfinite(res.seed_objective)) throw Error(ErrorKind::NoFeasiblePoint, "seed gait cannot be simulated");
  const fs::path dir = g.out.empty() ? "out" : g.out;
  fs::create_directories(dir);
  save_gait(res.gait, (dir / "gait.json").string());
  nlohmann::json j = report_to_json(res.report);
  j["objective"] = res.objective;
  j["seed_objective"] = res.seed_objective;
  j["evaluations"] = res.evaluations;
  j["budget_exhausted"] = res.budget_exhausted;
  write_json(dir / "gait_report.json", j);
  spdlog::info("gait search: objective {:.6g} (seed {:.6g}) after {} evaluations -> {}", res.objective,
               res.seed_objective, res.evaluations, dir.string());
  return res.report.all_ok() ? kExitOk : kExitConstraint;
}

struct ImpactArgs {
  // deg. With the rotation applied to (COMx, COMz) as written, only negative
  // angles move the COM down and release energy.
  double theta_min = -6.0;
  double theta_max = 0.0;
  int n = 61;
  std::optional<double> com_x, com_z;
};

int cmd_impact_angle(const Globals& g, const ImpactArgs& a) {
  RobotParams p;
  if (!g.config.empty()) p = load_scenario(g.config).robot();
  ImpactAnalysisParams ip = default_impact_params(p);
  if (a.com_x) ip.com_x = *a.com_x;
  if (a.com_z) ip.com_z = *a.com_z;
  ip.validate();
  const auto curve = velocity_curve(ip, a.theta_min * kDeg, a.theta_max * kDeg, a.n);
  const fs::path dir = g.out.empty() ? "out" : g.out;
  fs::create_directories(dir);
  std::ofstream os(dir / "velocity_curve.csv");
  write_velocity_curve_csv(os, curve);
  spdlog::info("impact-angle: {} rows, COMx {:.4f} m, COMz {:.4f} m -> {}", curve.size(), ip.com_x, ip.com_z,
               (dir / "velocity_curve.csv").string());
  return kExitOk;
}

struct IkArgs {
  double amplitude = 10.0;  // deg
  int samples = 201;
};

/// Shank roll and pitch swept through +-amplitude on a Lissajous path; the
/// level-foot solution is compared with holding both ankle joints at zero.
int cmd_ik_demo(const Globals& g, const IkArgs& a) {
  if (a.samples < 2) throw Error(ErrorKind::InvalidArgument, "--samples must be at least 2");
  if (!(a.amplitude >= 0 && a.amplitude <= 30)) throw Error(ErrorKind::InvalidArgument, "--amplitude must lie in [0, 30] deg");
  const AnkleChainParams chain;
  const fs::path dir = g.out.empty() ? "out" : g.out;
  fs::create_directories(dir);
  std::ofstream os(dir / "ik_demo.csv");
  os << "s,shank_roll,shank_pitch,q_sagittal,q_henke,foot_roll,foot_pitch,fixed_foot_roll,fixed_foot_pitch\n";
  std::pair<double, double> guess{0.0, 0.0};
  double worst = 0.0, fixed_worst = 0.0;
  for (int k = 0; k < a.samples; ++k) {
    const double s = static_cast<double>(k) / (a.samples - 1);
    ShankAttitude shank;
    shank.roll = a.amplitude * kDeg * std::sin(2.0 * std::numbers::pi * s);
    shank.pitch = a.amplitude * kDeg * std::sin(4.0 * std::numbers::pi * s + 0.5 * std::numbers::pi);
    const AnkleAngles q = solve_level_foot(shank, chain, guess);
    guess = {q.sagittal, q.henke};
    const FootAngles f = foot_orientation(shank, q.sagittal, q.henke, chain);
    const FootAngles fixed = foot_orientation(shank, 0.0, 0.0, chain);
    worst = std::max({worst, std::abs(f.roll), std::abs(f.pitch)});
    fixed_worst = std::max({fixed_worst, std::abs(fixed.roll), std::abs(fixed.pitch)});
    os << format_double(s) << ',' << format_double(shank.roll) << ',' << format_double(shank.pitch) << ','
       << format_double(q.sagittal) << ',' << format_double(q.henke) << ',' << format_double(f.roll) << ','
       << format_double(f.pitch) << ',' << format_double(fixed.roll) << ',' << format_double(fixed.pitch) << '\n';
  }
  spdlog::info("ik-demo: max |foot roll/pitch| {:.3g} rad leveled, {:.3g} rad with fixed ankles -> {}", worst,
               fixed_worst, (dir / "ik_demo.csv").string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("exosim");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::cfg::load_env_levels();

  CLI::App app{"Planar exoskeleton walking and balance simulator"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Scenario TOML file");
  app.add_option("--seed", g.seed, "RNG seed (overrides the scenario)");
  app.add_option("--out", g.out, "Output directory (overrides the scenario)");
  app.add_option("--runs", g.runs, "Independent seeded runs, executed concurrently")->check(CLI::PositiveNumber);

  CLI::App* walk = app.add_subcommand("walk", "Walk a scenario; writes trace.csv, metrics.json, events.json");
  CLI::App* balance = app.add_subcommand("balance", "Single-leg balance; writes trace.csv, balance.csv, balance.json");

  CLI::App* gait = app.add_subcommand("gait", "Gait constraint check and search");
  gait->require_subcommand(1);
  GaitArgs ga;
  CLI::App* check = gait->add_subcommand("check", "Simulate the gait and report the constraint set");
  CLI::App* search = gait->add_subcommand("search", "Nelder-Mead search from a seed gait");
  for (CLI::App* c : {check, search}) {
    c->add_option("--gait", ga.gait, "Gait JSON file");
    c->add_option("--robot", ga.robot, "Robot parameter TOML file");
    c->add_option("--mu", ga.mu, "Friction coefficient override");
  }
  search->add_option("--budget", ga.budget, "Objective evaluations");

  CLI::App* analyze = app.add_subcommand("analyze", "Impact-angle curve and ankle IK demo");
  analyze->require_subcommand(1);
  ImpactArgs ia;
  CLI::App* impact = analyze->add_subcommand("impact-angle", "Touchdown velocity versus impact angle");
  impact->add_option("--theta-min", ia.theta_min, "deg");
  impact->add_option("--theta-max", ia.theta_max, "deg");
  impact->add_option("--n", ia.n, "Grid points");
  impact->add_option("--com-x", ia.com_x, "Horizontal pivot-to-COM distance, m");
  impact->add_option("--com-z", ia.com_z, "Vertical pivot-to-COM distance, m");
  IkArgs ik;
  CLI::App* ikdemo = analyze->add_subcommand("ik-demo", "Level-foot IK under scripted shank excursions");
  ikdemo->add_option("--amplitude", ik.amplitude, "Shank roll/pitch excursion, deg");
  ikdemo->add_option("--samples", ik.samples, "Samples along the excursion");

  for (CLI::App* c : {walk, balance, gait, check, search, analyze, impact, ikdemo}) c->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (walk->parsed()) return cmd_walk(g);
    if (balance->parsed()) return cmd_balance(g);
    if (check->parsed()) return cmd_gait_check(g, ga);
    if (search->parsed()) return cmd_gait_search(g, ga);
    if (impact->parsed()) return cmd_impact_angle(g, ia);
    if (ikdemo->parsed()) return cmd_ik_demo(g, ik);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
