#pragma once

// Periodic nominal gait: one degree-5 Bezier polynomial per actuated joint over
// the step phase tau in [0, 1]. Rows are stored for right stance; the left
// stance gait is the mirror image.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "exo/error.hpp"
#include "exo/model.hpp"

namespace exo {

inline constexpr int kBezierDegree = 5;
inline constexpr int kBezierCoeffs = kBezierDegree + 1;
inline constexpr int kGaitSchemaVersion = 1;

using BezierRow = std::array<double, kBezierCoeffs>;
using BezierTable = std::array<BezierRow, kNumJoints>;

inline const std::array<std::string, kNumJoints>& joint_names() {
  static const std::array<std::string, kNumJoints> names{"hip_r", "knee_r", "ankle_r", "hip_l", "knee_l", "ankle_l"};
  return names;
}

/// Post-impact state on the closed-loop orbit, right stance, stance ankle at x = 0.
struct GaitInitialState {
  Vec9 q = Vec9::Zero();
  Vec9 v = Vec9::Zero();

  bool operator==(const GaitInitialState& o) const { return q == o.q && v == o.v; }
};

struct GaitTrajectory {
  BezierTable bezier{};
  double step_duration = 0.6;  // s
  double step_length = 0.0;    // m
  // World pelvis pitch over the step as recorded from a nominal run. When
  // absent the flat-foot kinematic value implied by the stance leg is used.
  std::optional<BezierRow> pelvis_pitch;
  std::optional<GaitInitialState> initial_state;

  bool operator==(const GaitTrajectory&) const = default;
};

struct JointReference {
  Vec6 position = Vec6::Zero();
  Vec6 velocity = Vec6::Zero();      // rad/s
  Vec6 acceleration = Vec6::Zero();  // rad/s^2
};

/// de Casteljau evaluation of a Bezier polynomial with arbitrary control points.
template <std::size_t N>
double de_casteljau(std::array<double, N> c, double tau) {
  for (std::size_t r = 1; r < N; ++r)
    for (std::size_t i = 0; i + r < N; ++i) c[i] = (1.0 - tau) * c[i] + tau * c[i + 1];
  return c[0];
}

/// Value, first and second derivative with respect to tau.
inline std::array<double, 3> bezier_eval(const BezierRow& c, double tau) {
  constexpr int n = kBezierDegree;
  std::array<double, n> d1{};
  for (int i = 0; i < n; ++i) d1[i] = n * (c[i + 1] - c[i]);
  std::array<double, n - 1> d2{};
  for (int i = 0; i < n - 1; ++i) d2[i] = (n - 1) * (d1[i + 1] - d1[i]);
  return {de_casteljau(c, tau), de_casteljau(d1, tau), de_casteljau(d2, tau)};
}

inline JointReference evaluate(const GaitTrajectory& g, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorKind::PhaseOutOfRange, "tau = " + std::to_string(tau));
  JointReference r;
  const double inv_t = 1.0 / g.step_duration;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto e = bezier_eval(g.bezier[j], tau);
    r.position[j] = e[0];
    r.velocity[j] = e[1] * inv_t;
    r.acceleration[j] = e[2] * inv_t * inv_t;
  }
  return r;
}

/// Desired world pelvis pitch and rate at phase tau. The same for either stance
/// side; `g` is the stored (right stance) table.
inline std::pair<double, double> pelvis_reference(const GaitTrajectory& g, double tau) {
  if (g.pelvis_pitch) {
    const auto e = bezier_eval(*g.pelvis_pitch, tau);
    return {e[0], e[1] / g.step_duration};
  }
  const JointReference ref = evaluate(g, tau);
  return {-(ref.position[0] + ref.position[1] + ref.position[2]),
          -(ref.velocity[0] + ref.velocity[1] + ref.velocity[2])};
}

inline GaitTrajectory mirror(const GaitTrajectory& g) {
  GaitTrajectory m = g;
  for (int j = 0; j < 3; ++j) std::swap(m.bezier[j], m.bezier[j + 3]);
  return m;
}

/// Gait as seen by the controller in `domain`: rows in physical joint order.
inline GaitTrajectory gait_for(const GaitTrajectory& g, DomainLabel domain) {
  return domain == DomainLabel::RightStance ? g : mirror(g);
}

inline void validate_gait(const GaitTrajectory& g) {
  if (!(g.step_duration > 0.0)) throw Error(ErrorKind::InvalidArgument, "step_duration must be positive");
  for (const auto& row : g.bezier)
    for (double c : row)
      if (!std::isfinite(c)) throw Error(ErrorKind::InvalidArgument, "non-finite Bezier coefficient");
}

// ---------------------------------------------------------------------------
// JSON file format

inline nlohmann::json gait_to_json(const GaitTrajectory& g) {
  nlohmann::json j;
  j["schema_version"] = kGaitSchemaVersion;
  j["joint_names"] = joint_names();
  j["bezier"] = g.bezier;
  j["step_duration_s"] = g.step_duration;
  j["step_length_m"] = g.step_length;
  if (g.pelvis_pitch) j["pelvis_pitch"] = *g.pelvis_pitch;
  if (g.initial_state)
    j["initial_state"] = {{"q", std::vector<double>(g.initial_state->q.data(), g.initial_state->q.data() + kDof)},
                          {"v", std::vector<double>(g.initial_state->v.data(), g.initial_state->v.data() + kDof)}};
  return j;
}

namespace detail {
inline const nlohmann::json& require(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorKind::ParseError, std::string("missing field '") + key + "'");
  return j.at(key);
}
inline double require_number(const nlohmann::json& j, const std::string& what) {
  if (!j.is_number()) throw Error(ErrorKind::ParseError, "field '" + what + "' must be a number");
  return j.get<double>();
}
}  // namespace detail

inline GaitTrajectory gait_from_json(const nlohmann::json& j) {
  const auto& ver = detail::require(j, "schema_version");
  if (!ver.is_number_integer()) throw Error(ErrorKind::ParseError, "field 'schema_version' must be an integer");
  if (ver.get<int>() != kGaitSchemaVersion)
    throw Error(ErrorKind::SchemaVersionMismatch,
                "expected " + std::to_string(kGaitSchemaVersion) + ", got " + std::to_string(ver.get<int>()));
  const auto& names = detail::require(j, "joint_names");
  if (!names.is_array() || names.size() != kNumJoints)
    throw Error(ErrorKind::ParseError, "field 'joint_names' must list 6 joints");
  for (int i = 0; i < kNumJoints; ++i)
    if (names[i] != joint_names()[i])
      throw Error(ErrorKind::ParseError, "field 'joint_names[" + std::to_string(i) + "]' must be " + joint_names()[i]);

  GaitTrajectory g;
  const auto& rows = detail::require(j, "bezier");
  if (!rows.is_array() || rows.size() != kNumJoints)
    throw Error(ErrorKind::ParseError, "field 'bezier' must have 6 rows");
  for (int r = 0; r < kNumJoints; ++r) {
    if (!rows[r].is_array() || rows[r].size() != kBezierCoeffs)
      throw Error(ErrorKind::ParseError, "field 'bezier[" + std::to_string(r) + "]' must have 6 coefficients");
    for (int c = 0; c < kBezierCoeffs; ++c)
      g.bezier[r][c] = detail::require_number(rows[r][c], "bezier[" + std::to_string(r) + "][" + std::to_string(c) + "]");
  }
  g.step_duration = detail::require_number(detail::require(j, "step_duration_s"), "step_duration_s");
  g.step_length = detail::require_number(detail::require(j, "step_length_m"), "step_length_m");
  if (j.contains("pelvis_pitch")) {
    const auto& row = j.at("pelvis_pitch");
    if (!row.is_array() || row.size() != kBezierCoeffs)
      throw Error(ErrorKind::ParseError, "field 'pelvis_pitch' must have 6 coefficients");
    BezierRow c{};
    for (int i = 0; i < kBezierCoeffs; ++i)
      c[i] = detail::require_number(row[i], "pelvis_pitch[" + std::to_string(i) + "]");
    g.pelvis_pitch = c;
  }
  if (j.contains("initial_state")) {
    const auto& st = j.at("initial_state");
    GaitInitialState x;
    for (const char* key : {"q", "v"}) {
      const auto& arr = detail::require(st, key);
      if (!arr.is_array() || arr.size() != kDof)
        throw Error(ErrorKind::ParseError, std::string("field 'initial_state.") + key + "' must have 9 entries");
      Vec9& dst = key[0] == 'q' ? x.q : x.v;
      for (int i = 0; i < kDof; ++i)
        dst[i] = detail::require_number(arr[i], std::string("initial_state.") + key + "[" + std::to_string(i) + "]");
    }
    g.initial_state = x;
  }
  validate_gait(g);
  return g;
}

inline GaitTrajectory load_gait(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open gait file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
  try {
    return gait_from_json(j);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

/// nlohmann/json prints doubles with 17 significant digits, so files round-trip exactly.
inline void save_gait(const GaitTrajectory& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write gait file " + path);
  out << gait_to_json(g).dump(2) << '\n';
}

}  // namespace exo
