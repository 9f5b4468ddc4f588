#pragma once

// TOML input: robot parameters and scenario files. Every lookup goes through
// TableReader so that type errors and unknown keys name the full dotted key.

#include <toml.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "exo/balance.hpp"
#include "exo/control.hpp"
#include "exo/error.hpp"
#include "exo/hybrid.hpp"
#include "exo/model.hpp"

namespace exo {

namespace config_detail {

[[noreturn]] inline void fail(const std::string& key, const std::string& msg) {
  throw Error(ErrorKind::ParseError, "key '" + key + "': " + msg);
}

inline std::optional<double> as_number(const toml::node& n) {
  if (const auto* f = n.as_floating_point()) return f->get();
  if (const auto* i = n.as_integer()) return static_cast<double>(i->get());
  return std::nullopt;
}

class TableReader {
 public:
  TableReader(const toml::table& t, std::string prefix) : t_(&t), prefix_(std::move(prefix)) {}

  std::string key(std::string_view k) const { return prefix_.empty() ? std::string(k) : prefix_ + "." + std::string(k); }

  bool has(std::string_view k) const { return t_->contains(k); }

  const toml::node* node(std::string_view k) {
    used_.insert(std::string(k));
    return t_->get(k);
  }

  void read(std::string_view k, double& out) {
    if (const toml::node* n = node(k)) {
      const auto v = as_number(*n);
      if (!v) fail(key(k), "expected a number");
      out = *v;
    }
  }

  void read(std::string_view k, int& out) {
    if (const toml::node* n = node(k)) {
      const auto* i = n->as_integer();
      if (!i) fail(key(k), "expected an integer");
      out = static_cast<int>(i->get());
    }
  }

  void read(std::string_view k, std::uint64_t& out) {
    if (const toml::node* n = node(k)) {
      const auto* i = n->as_integer();
      if (!i || i->get() < 0) fail(key(k), "expected a non-negative integer");
      out = static_cast<std::uint64_t>(i->get());
    }
  }

  void read(std::string_view k, bool& out) {
    if (const toml::node* n = node(k)) {
      const auto* b = n->as_boolean();
      if (!b) fail(key(k), "expected true or false");
      out = b->get();
    }
  }

  void read(std::string_view k, std::string& out) {
    if (const toml::node* n = node(k)) {
      const auto* s = n->as_string();
      if (!s) fail(key(k), "expected a string");
      out = s->get();
    }
  }

  template <std::size_t N>
  void read(std::string_view k, std::array<double, N>& out) {
    if (const toml::node* n = node(k)) {
      const auto* a = n->as_array();
      if (!a || a->size() != N) fail(key(k), "expected an array of " + std::to_string(N) + " numbers");
      for (std::size_t i = 0; i < N; ++i) {
        const auto v = as_number(*a->get(i));
        if (!v) fail(key(k), "element " + std::to_string(i) + " is not a number");
        out[i] = *v;
      }
    }
  }

  const toml::table* table(std::string_view k) {
    const toml::node* n = node(k);
    if (!n) return nullptr;
    if (!n->is_table()) fail(key(k), "expected a table");
    return n->as_table();
  }

  const toml::array* array(std::string_view k) {
    const toml::node* n = node(k);
    if (!n) return nullptr;
    if (!n->is_array()) fail(key(k), "expected an array");
    return n->as_array();
  }

  /// Rejects keys that no read() asked for.
  void finish() const {
    for (const auto& [k, v] : *t_)
      if (!used_.count(std::string(k.str()))) fail(key(k.str()), "unknown key");
  }

 private:
  const toml::table* t_;
  std::string prefix_;
  std::set<std::string> used_;
};

inline toml::table parse_toml_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::InvalidArgument, "file not found: " + path.string());
  try {
    return toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw Error(ErrorKind::ParseError, os.str());
  }
}

inline toml::table parse_toml_string(std::string_view text) {
  try {
    return toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "line " << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw Error(ErrorKind::ParseError, os.str());
  }
}

inline void read_link(TableReader& parent, std::string_view k, LinkParams& l) {
  const toml::table* t = parent.table(k);
  if (!t) return;
  TableReader r(*t, parent.key(k));
  r.read("mass", l.mass);
  r.read("length", l.length);
  r.read("com_offset", l.com_offset);
  r.read("inertia", l.inertia);
  r.finish();
}

}  // namespace config_detail

// ---------------------------------------------------------------------------
// Robot parameters

/// Overrides the fields present in `t`; missing keys keep their defaults.
inline RobotParams robot_params_from_toml(const toml::table& t, RobotParams p = {}) {
  using config_detail::TableReader;
  TableReader r(t, "");
  config_detail::read_link(r, "torso", p.torso);
  config_detail::read_link(r, "thigh", p.thigh);
  config_detail::read_link(r, "shank", p.shank);
  if (const toml::table* f = r.table("foot")) {
    TableReader fr(*f, "foot");
    fr.read("mass", p.foot_inertial.mass);
    fr.read("inertia", p.foot_inertial.inertia);
    fr.read("com_x", p.foot_inertial.com_x);
    fr.read("com_z", p.foot_inertial.com_z);
    fr.read("x_h", p.foot.x_h);
    fr.read("x_t", p.foot.x_t);
    fr.read("z_a", p.foot.z_a);
    fr.read("y_i", p.foot.y_i);
    fr.read("y_c", p.foot.y_c);
    fr.read("cop_box_half_x", p.foot.cop_box_half_x);
    fr.read("cop_box_half_y", p.foot.cop_box_half_y);
    fr.finish();
  }
  r.read("g", p.g);
  r.read("payload_mass", p.payload_mass);
  r.read("knee_min", p.knee_min);
  r.read("knee_max", p.knee_max);
  r.read("torque_limit", p.torque_limit);
  r.finish();
  p.validate();
  return p;
}

inline RobotParams load_robot_params(const std::filesystem::path& path) {
  return robot_params_from_toml(config_detail::parse_toml_file(path));
}

inline std::string robot_params_to_toml(const RobotParams& p) {
  auto link = [](const LinkParams& l) {
    return toml::table{{"mass", l.mass}, {"length", l.length}, {"com_offset", l.com_offset}, {"inertia", l.inertia}};
  };
  toml::array limits;
  for (double v : p.torque_limit) limits.push_back(v);
  toml::table t{{"g", p.g},
                {"payload_mass", p.payload_mass},
                {"knee_min", p.knee_min},
                {"knee_max", p.knee_max},
                {"torque_limit", limits},
                {"torso", link(p.torso)},
                {"thigh", link(p.thigh)},
                {"shank", link(p.shank)},
                {"foot",
                 toml::table{{"mass", p.foot_inertial.mass},
                             {"inertia", p.foot_inertial.inertia},
                             {"com_x", p.foot_inertial.com_x},
                             {"com_z", p.foot_inertial.com_z},
                             {"x_h", p.foot.x_h},
                             {"x_t", p.foot.x_t},
                             {"z_a", p.foot.z_a},
                             {"y_i", p.foot.y_i},
                             {"y_c", p.foot.y_c},
                             {"cop_box_half_x", p.foot.cop_box_half_x},
                             {"cop_box_half_y", p.foot.cop_box_half_y}}}};
  std::ostringstream os;
  os << t << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Scenario

enum class ScenarioKind { Walk, Balance };

inline const char* to_string(ScenarioKind k) { return k == ScenarioKind::Walk ? "walk" : "balance"; }

inline constexpr double kMaxPlatformTilt = 15.0 * std::numbers::pi / 180.0;

struct DisturbanceScript {
  std::vector<PelvisPush> pushes;
  PiecewiseLinear tilt;  // rad versus s

  void validate() const {
    std::vector<PelvisPush> sorted = pushes;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.t_start < b.t_start; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const PelvisPush& p = sorted[i];
      if (!(p.t_end > p.t_start)) throw Error(ErrorKind::InvalidArgument, "push: t_end must exceed t_start");
      if (std::abs(p.direction.norm() - 1.0) > 1e-9) throw Error(ErrorKind::InvalidArgument, "push: direction must be a unit vector");
      if (i > 0 && p.t_start < sorted[i - 1].t_end) throw Error(ErrorKind::InvalidArgument, "push: intervals overlap");
    }
    for (std::size_t i = 0; i < tilt.knots.size(); ++i) {
      if (std::abs(tilt.knots[i].second) > kMaxPlatformTilt + 1e-12)
        throw Error(ErrorKind::InvalidArgument, "terrain: tilt angle outside +/-15 deg");
      if (i > 0 && !(tilt.knots[i].first > tilt.knots[i - 1].first))
        throw Error(ErrorKind::InvalidArgument, "terrain: tilt knot times must increase");
    }
  }
};

struct BalanceSettings {
  BalanceMode mode = BalanceMode::PdCop;
  BalanceGains gains{};
  double c3_scale = 10.0;
  double rho = 1e4;
  double perturbation_norm = 0.0;  // |x0|; the direction is drawn from the scenario seed
  double perturbation_radii = 0.0;  // alternatively |x0| as a multiple of the validity radius
  std::string clf_file;            // optional precomputed balance.json
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::Walk;
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::string robot_path;          // empty: built-in defaults
  std::string gait_path;           // empty: shipped default gait next to the robot file
  double payload_scale = 1.0;
  ControllerConfig controller{};
  DisturbanceScript disturbances{};
  RunLimits limits{40, 30.0};
  std::uint64_t seed = 0;
  std::string output = "out";
  double dt = 1e-3;
  double mu = 0.6;
  double sensor_noise_std = 0.0;
  bool foot_roll_is_fall = true;
  BalanceSettings balance{};

  std::filesystem::path resolve(const std::string& rel) const {
    const std::filesystem::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
  }

  RobotParams robot() const {
    const RobotParams base = robot_path.empty() ? RobotParams{} : load_robot_params(resolve(robot_path));
    return base.with_payload_scale(payload_scale);
  }

  /// Hybrid-system settings, with the scenario's payload applied.
  HybridSystemSpec system() const {
    HybridSystemSpec s;
    s.params = robot();
    s.dt = dt;
    s.mu = mu;
    s.fz_epsilon = controller.fz_epsilon;
    s.foot_roll_is_fall = foot_roll_is_fall;
    s.terrain_tilt = disturbances.tilt;
    s.pushes = disturbances.pushes;
    s.sensor_noise_std = sensor_noise_std;
    s.seed = seed;
    return s;
  }
};

inline ControllerConfig controller_from_toml(const toml::table& t, ControllerConfig c = {}, const std::string& prefix = "controller") {
  config_detail::TableReader r(t, prefix);
  r.read("kp", c.kp);
  r.read("kd", c.kd);
  r.read("pelvis_kp", c.pelvis_kp);
  r.read("pelvis_kd", c.pelvis_kd);
  if (r.has("compensation")) {
    bool on = true;
    r.read("compensation", on);
    c = c.with_compensation(on);
  }
  r.read("swing_ik_on", c.swing_ik_on);
  r.read("cop_filter_on", c.cop_filter_on);
  r.read("pelvis_loop_on", c.pelvis_loop_on);
  r.read("alpha", c.alpha);
  r.read("blend_window", c.blend_window);
  r.read("lift_blend_window", c.lift_blend_window);
  r.read("force_threshold", c.force_threshold);
  r.read("fz_epsilon", c.fz_epsilon);
  r.finish();
  c.validate();
  return c;
}

/// Parses a scenario table. `base_dir` anchors relative file paths.
inline Scenario scenario_from_toml(const toml::table& t, const std::filesystem::path& base_dir = {}) {
  using config_detail::TableReader;
  using config_detail::fail;
  Scenario s;
  s.base_dir = base_dir;
  TableReader root(t, "");

  if (const toml::table* st = root.table("scenario")) {
    TableReader r(*st, "scenario");
    std::string kind = to_string(s.kind);
    r.read("kind", kind);
    if (kind == "walk") s.kind = ScenarioKind::Walk;
    else if (kind == "balance") s.kind = ScenarioKind::Balance;
    else fail("scenario.kind", "expected \"walk\" or \"balance\", got \"" + kind + "\"");
    r.read("robot", s.robot_path);
    r.read("gait", s.gait_path);
    r.read("seed", s.seed);
    r.read("output", s.output);
    r.read("payload_scale", s.payload_scale);
    if (!(s.payload_scale > 0)) fail("scenario.payload_scale", "must be positive");
    r.finish();
  }

  if (const toml::table* lt = root.table("limits")) {
    TableReader r(*lt, "limits");
    r.read("max_steps", s.limits.max_steps);
    r.read("max_time", s.limits.max_time);
    if (s.limits.max_steps < 0) fail("limits.max_steps", "must be non-negative");
    if (!(s.limits.max_time > 0)) fail("limits.max_time", "must be positive");
    r.finish();
  }

  if (const toml::table* sim = root.table("sim")) {
    TableReader r(*sim, "sim");
    r.read("dt", s.dt);
    r.read("mu", s.mu);
    r.read("sensor_noise_std", s.sensor_noise_std);
    r.read("foot_roll_is_fall", s.foot_roll_is_fall);
    if (!(s.dt > 0)) fail("sim.dt", "must be positive");
    if (!(s.mu > 0)) fail("sim.mu", "must be positive");
    if (!(s.sensor_noise_std >= 0)) fail("sim.sensor_noise_std", "must be non-negative");
    r.finish();
  }

  if (const toml::table* ct = root.table("controller")) s.controller = controller_from_toml(*ct);

  if (const toml::table* tt = root.table("terrain")) {
    TableReader r(*tt, "terrain");
    if (r.has("tilt_deg") && r.has("tilt_profile")) fail("terrain.tilt_profile", "conflicts with terrain.tilt_deg");
    if (r.has("tilt_deg")) {
      double deg = 0.0;
      r.read("tilt_deg", deg);
      s.disturbances.tilt = PiecewiseLinear::constant(deg * std::numbers::pi / 180.0);
    }
    if (const toml::array* prof = r.array("tilt_profile")) {
      for (std::size_t i = 0; i < prof->size(); ++i) {
        const toml::array* knot = prof->get(i)->as_array();
        const std::string k = "terrain.tilt_profile[" + std::to_string(i) + "]";
        if (!knot || knot->size() != 2) fail(k, "expected [t_s, angle_deg]");
        const auto tk = config_detail::as_number(*knot->get(0));
        const auto ak = config_detail::as_number(*knot->get(1));
        if (!tk || !ak) fail(k, "expected [t_s, angle_deg]");
        s.disturbances.tilt.knots.emplace_back(*tk, *ak * std::numbers::pi / 180.0);
      }
    }
    r.finish();
  }

  if (const toml::array* pushes = root.array("push")) {
    for (std::size_t i = 0; i < pushes->size(); ++i) {
      const std::string k = "push[" + std::to_string(i) + "]";
      const toml::table* pt = pushes->get(i)->as_table();
      if (!pt) fail(k, "expected a table");
      TableReader r(*pt, k);
      PelvisPush p;
      std::array<double, 2> dir{1.0, 0.0};
      r.read("t_start", p.t_start);
      r.read("t_end", p.t_end);
      r.read("force", p.force);
      r.read("direction", dir);
      r.finish();
      p.direction = Vec2(dir[0], dir[1]);
      if (!(p.direction.norm() > 0)) fail(k + ".direction", "must be nonzero");
      p.direction.normalize();
      s.disturbances.pushes.push_back(p);
    }
  }

  if (const toml::table* bt = root.table("balance")) {
    TableReader r(*bt, "balance");
    std::string mode = to_string(s.balance.mode);
    r.read("mode", mode);
    if (mode == "pd+cop") s.balance.mode = BalanceMode::PdCop;
    else if (mode == "clf-qp") s.balance.mode = BalanceMode::ClfQp;
    else fail("balance.mode", "expected \"pd+cop\" or \"clf-qp\", got \"" + mode + "\"");
    r.read("c3_scale", s.balance.c3_scale);
    r.read("rho", s.balance.rho);
    if (r.has("perturbation_norm") && r.has("perturbation_radii"))
      fail("balance.perturbation_radii", "conflicts with balance.perturbation_norm");
    r.read("perturbation_norm", s.balance.perturbation_norm);
    r.read("perturbation_radii", s.balance.perturbation_radii);
    r.read("clf_file", s.balance.clf_file);
    r.read("kp", s.balance.gains.kp);
    r.read("kd", s.balance.gains.kd);
    r.read("ankle_kp", s.balance.gains.ankle_kp);
    r.read("ankle_kd", s.balance.gains.ankle_kd);
    if (!(s.balance.c3_scale > 0)) fail("balance.c3_scale", "must be positive");
    if (!(s.balance.rho > 0)) fail("balance.rho", "must be positive");
    if (!(s.balance.perturbation_norm >= 0)) fail("balance.perturbation_norm", "must be non-negative");
    if (!(s.balance.perturbation_radii >= 0)) fail("balance.perturbation_radii", "must be non-negative");
    r.finish();
  }

  root.finish();
  try {
    s.disturbances.validate();
  } catch (const Error& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(": ", msg.find(": ") + 2);
    fail(msg.substr(msg.find(": ") + 2, colon - msg.find(": ") - 2), msg.substr(colon + 2));
  }
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_toml(config_detail::parse_toml_file(path), path.parent_path());
}

inline Scenario scenario_from_string(std::string_view text, const std::filesystem::path& base_dir = {}) {
  return scenario_from_toml(config_detail::parse_toml_string(text), base_dir);
}

}  // namespace exo
