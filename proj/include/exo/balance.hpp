#pragma once

// Static one-leg balance: equilibrium search, feed-forward torque, reduced
// closed-loop plant, CTLE-based control Lyapunov function, CLF-QP ankle law.
//
// The reduced state is x = (q_j - q_j*, qdot_j) for the six joints with the
// stance foot pinned flat; the base follows from the stance chain.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "exo/control.hpp"
#include "exo/dynamics.hpp"
#include "exo/error.hpp"
#include "exo/hybrid.hpp"
#include "exo/model.hpp"
#include "exo/nelder_mead.hpp"

namespace exo {

inline constexpr int kBalanceStates = 12;
using Vec12 = Eigen::Matrix<double, kBalanceStates, 1>;
using Mat12 = Eigen::Matrix<double, kBalanceStates, kBalanceStates>;

struct Equilibrium {
  Configuration q = Configuration::Zero();
  Vec6 u_ff = Vec6::Zero();
  DomainLabel stance = DomainLabel::RightStance;
  double com_x = 0.0;  // COM projection relative to the stance ankle, m

  Vec6 joints() const { return q.tail<6>(); }
};

/// Joint torques and stance reaction holding q at rest under the flat-foot
/// constraint: S^T tau + J^T lambda = G(q). Exactly determined (9 x 9).
struct StaticSolution {
  Vec6 tau = Vec6::Zero();
  Vec3 lambda = Vec3::Zero();
};

inline StaticSolution static_inverse_dynamics(const Configuration& q, Side stance, const RobotParams& p,
                                              const Vec2& gravity) {
  const Vec9 g = bias_forces(q, Vec9::Zero(), p, gravity);
  const Mat39 j = stance_jacobian(q, p, stance);
  // Base rows carry no actuation: J_b^T lambda = G_b.
  const Eigen::Matrix3d jb_t = j.leftCols<3>().transpose();
  Eigen::FullPivLU<Eigen::Matrix3d> lu(jb_t);
  if (!lu.isInvertible()) throw Error(ErrorKind::RankDeficientConstraint, "stance constraint lost rank");
  StaticSolution s;
  s.lambda = lu.solve(g.head<3>());
  s.tau = g.tail<6>() - j.rightCols<6>().transpose() * s.lambda;
  return s;
}

inline StaticSolution static_inverse_dynamics(const Configuration& q, Side stance, const RobotParams& p) {
  return static_inverse_dynamics(q, stance, p, gravity_vector(p.g));
}

struct EquilibriumOptions {
  double swing_clearance = 0.05;  // m, lowest swing sole point above ground
  int max_evals = 4000;           // per penalty round
  double tolerance = 1e-6;        // on the summed squared constraint violation
};

namespace detail {

/// Stance ankle angle that puts the COM at `offset` ahead of the stance ankle.
/// The stance ankle rotates everything above it rigidly, so this is a 1D
/// Newton solve on the COM's polar angle about the ankle.
inline double ankle_for_com_offset(Vec6 joints, Side stance, double offset, const RobotParams& p) {
  const int a = ankle_joint(stance);
  const Vec2 ankle(0.0, p.foot.z_a);
  for (int it = 0; it < 50; ++it) {
    const Configuration q = configuration_from_stance(joints, stance, ankle, p);
    const double cx = center_of_mass(q, p).position.x() - ankle.x() - offset;
    if (std::abs(cx) < 1e-13) break;
    const double h = 1e-6;
    Vec6 jp = joints;
    jp[a] += h;
    const double cxp = center_of_mass(configuration_from_stance(jp, stance, ankle, p), p).position.x() - ankle.x() - offset;
    const double d = (cxp - cx) / h;
    if (std::abs(d) < 1e-12) break;
    joints[a] -= std::clamp(cx / d, -0.2, 0.2);
  }
  return joints[a];
}

}  // namespace detail

/// Minimum-torque static posture on one flat foot. The stance ankle is solved so
/// the COM projection sits at a chosen offset inside the COP box; the other five
/// joints and that offset are searched by Nelder-Mead with growing penalties on
/// swing clearance and the knee range.
inline Equilibrium find_equilibrium(const RobotParams& p, DomainLabel stance = DomainLabel::RightStance,
                                    const EquilibriumOptions& opt = {}) {
  const Side st = stance_side(stance), sw = swing_side(stance);
  const Vec2 ankle(0.0, p.foot.z_a);
  const double box = p.foot.cop_box_half_x;

  // Decision vector: stance hip, stance knee, swing hip, swing knee, swing ankle, COM offset (tanh-mapped).
  auto unpack = [&](const Eigen::VectorXd& z, double* com_offset) {
    Vec6 j = Vec6::Zero();
    j[hip_joint(st)] = z[0];
    j[knee_joint(st)] = z[1];
    j[hip_joint(sw)] = z[2];
    j[knee_joint(sw)] = z[3];
    j[ankle_joint(sw)] = z[4];
    *com_offset = box * std::tanh(z[5]);
    j[ankle_joint(st)] = detail::ankle_for_com_offset(j, st, *com_offset, p);
    return j;
  };
  auto violation = [&](const Vec6& j, const Configuration& q) {
    auto sq = [](double v) { return v > 0.0 ? v * v : 0.0; };
    const double h = forward_kinematics(q, p).foot(sw).min_height();
    double v = sq(opt.swing_clearance - h);
    for (Side s : {st, sw}) {
      v += sq(p.knee_min - j[knee_joint(s)]);
      v += sq(j[knee_joint(s)] - p.knee_max);
    }
    return v;
  };

  // Two starts: a light first penalty explores low-torque postures but can
  // settle with the swing foot on the ground; a dominant one keeps clearance
  // from the outset. The feasible result with the smaller torque wins.
  Eigen::VectorXd best_z;
  double best_cost = std::numeric_limits<double>::infinity();
  double least_violation = std::numeric_limits<double>::infinity();
  for (double first_weight : {1e2, 1e5}) {
    Eigen::VectorXd z(6);
    z << -0.2, 0.4, -0.5, 1.0, -0.5, 0.0;  // bent stance knee, swing foot lifted
    double weight = first_weight;
    for (int round = 0; round < 5; ++round, weight *= 1e2) {
      auto cost = [&](const Eigen::VectorXd& x) {
        double off = 0.0;
        const Vec6 j = unpack(x, &off);
        const Configuration q = configuration_from_stance(j, st, ankle, p);
        return static_inverse_dynamics(q, st, p).tau.squaredNorm() + weight * violation(j, q);
      };
      NelderMeadOptions nm;
      nm.max_evals = opt.max_evals;
      nm.initial_step = 0.1;
      nm.f_tol = 1e-12;
      z = nelder_mead(cost, z, nm).x;
    }
    double off = 0.0;
    const Vec6 j = unpack(z, &off);
    const Configuration q = configuration_from_stance(j, st, ankle, p);
    const double v = violation(j, q);
    least_violation = std::min(least_violation, v);
    const double torque = static_inverse_dynamics(q, st, p).tau.squaredNorm();
    if (v <= opt.tolerance && torque < best_cost) {
      best_cost = torque;
      best_z = z;
    }
  }
  if (best_z.size() == 0)
    throw Error(ErrorKind::NoFeasiblePoint, "equilibrium constraints violated by " + std::to_string(least_violation));
  const Eigen::VectorXd z = best_z;

  Equilibrium eq;
  eq.stance = stance;
  const Vec6 j = unpack(z, &eq.com_x);
  eq.q = configuration_from_stance(j, st, ankle, p);
  eq.u_ff = static_inverse_dynamics(eq.q, st, p).tau;
  return eq;
}

// ---------------------------------------------------------------------------
// Reduced closed-loop plant

struct BalanceGains {
  std::array<double, 6> kp{1500, 1500, 1500, 1500, 1500, 200};  // h(x): PD hold on the non-ankle joints
  std::array<double, 6> kd{150, 150, 150, 150, 150, 8};
  double ankle_kp = 4000.0;  // baseline stance-ankle PD inside the drift
  double ankle_kd = 400.0;
};

/// x' = f(x) + g(x) u, where u is the stance-ankle torque added on top of the
/// feed-forward torque and the baseline ankle PD. The other five joints follow
/// u_ff + PD toward q*.
class BalancePlant {
 public:
  BalancePlant(Equilibrium eq, RobotParams p, BalanceGains gains = {})
      : eq_(std::move(eq)), p_(std::move(p)), gains_(gains) {
    stance_ = stance_side(eq_.stance);
    anchor_ = anchor_from(eq_.q, p_, stance_);
    anchor_.pitch = 0.0;
  }

  const Equilibrium& equilibrium() const { return eq_; }
  const RobotParams& params() const { return p_; }
  const BalanceGains& gains() const { return gains_; }
  int ankle() const { return ankle_joint(stance_); }

  /// Full state with the stance foot flat at the equilibrium anchor.
  State full_state(const Vec12& x) const {
    State s;
    const Vec6 joints = eq_.joints() + x.head<6>();
    s.q = configuration_from_stance(joints, stance_, anchor_.ankle, p_);
    s.v.tail<6>() = x.tail<6>();
    const Mat39 j = stance_jacobian(s.q, p_, stance_);
    s.v.head<3>() = j.leftCols<3>().partialPivLu().solve(-j.rightCols<6>() * x.tail<6>());
    return s;
  }

  Vec12 reduced(const State& s) const {
    Vec12 x;
    x.head<6>() = s.q.tail<6>() - eq_.joints();
    x.tail<6>() = s.v.tail<6>();
    return x;
  }

  /// Torques applied for deviation x and ankle input u.
  Vec6 torques(const Vec12& x, double u) const {
    Vec6 tau = eq_.u_ff;
    for (int j = 0; j < 6; ++j) tau[j] -= gains_.kp[j] * x[j] + gains_.kd[j] * x[6 + j];
    const int a = ankle();
    tau[a] = eq_.u_ff[a] - gains_.ankle_kp * x[a] - gains_.ankle_kd * x[6 + a] + u;
    return tau;
  }

  Vec12 operator()(const Vec12& x, double u) const {
    const State s = full_state(x);
    ContactOptions opt{anchor_, gravity_vector(p_.g), {}, Vec9::Zero()};
    const ConstrainedAccel ca = constrained_accel(s, torques(x, u), eq_.stance, p_, opt);
    Vec12 dx;
    dx.head<6>() = x.tail<6>();
    dx.tail<6>() = ca.vdot.tail<6>();
    return dx;
  }

  Vec12 drift(const Vec12& x) const { return (*this)(x, 0.0); }
  /// Input column; the dynamics are affine in torque, so one difference is exact.
  Vec12 input(const Vec12& x) const { return (*this)(x, 1.0) - (*this)(x, 0.0); }

 private:
  Equilibrium eq_;
  RobotParams p_;
  BalanceGains gains_;
  Side stance_ = Side::Right;
  StanceAnchor anchor_{};
};

struct Linearization {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
};

/// Central differences about x = 0, u = 0.
template <class Dyn>
Linearization linearize(const Dyn& f, int n, double h = 1e-6) {
  using V = Eigen::Matrix<double, Eigen::Dynamic, 1>;
  Linearization out{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, 1)};
  for (int i = 0; i < n; ++i) {
    V xp = V::Zero(n), xm = V::Zero(n);
    xp[i] = h;
    xm[i] = -h;
    out.a.col(i) = (f(xp, 0.0) - f(xm, 0.0)) / (2.0 * h);
  }
  const V z = V::Zero(n);
  out.b.col(0) = (f(z, h) - f(z, -h)) / (2.0 * h);
  return out;
}

inline Linearization linearize(const BalancePlant& plant, double h = 1e-6) {
  auto f = [&](const Eigen::VectorXd& x, double u) -> Eigen::VectorXd { return plant(Vec12(x), u); };
  return linearize(f, kBalanceStates, h);
}

// ---------------------------------------------------------------------------
// Continuous-time Lyapunov equation

inline double max_real_eigenvalue(const Eigen::MatrixXd& a) {
  const Eigen::VectorXcd ev = a.eigenvalues();
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i) m = std::max(m, ev[i].real());
  return m;
}

/// P solving A^T P + P A = -Q through the Kronecker form
/// (I (x) A^T + A^T (x) I) vec(P) = -vec(Q), then one refinement step.
inline Eigen::MatrixXd synthesize_clf(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q, double tol = 1e-8) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || q.rows() != n || q.cols() != n) throw Error(ErrorKind::InvalidArgument, "dimension mismatch");
  const double lead = max_real_eigenvalue(a);
  if (!(lead < 0.0)) throw Error(ErrorKind::NotHurwitz, "eigenvalue with real part " + std::to_string(lead));

  const Eigen::MatrixXd i = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd at = a.transpose();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n * n, n * n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) {
      k.block(r * n, c * n, n, n) += i(r, c) * at;  // I (x) A^T
      k.block(r * n, c * n, n, n) += at(r, c) * i;  // A^T (x) I
    }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(k);
  auto residual = [&](const Eigen::MatrixXd& p) { return Eigen::MatrixXd(at * p + p * a + q); };
  auto solve = [&](const Eigen::MatrixXd& rhs) {
    const Eigen::VectorXd v = lu.solve(-Eigen::Map<const Eigen::VectorXd>(rhs.data(), n * n));
    return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(v.data(), n, n));
  };
  Eigen::MatrixXd p = solve(q);
  p = 0.5 * (p + p.transpose());
  const Eigen::MatrixXd corr = solve(residual(p));  // A^T dP + dP A = -R
  p += corr;
  p = 0.5 * (p + p.transpose());

  if (!p.allFinite() || residual(p).norm() > tol)
    throw Error(ErrorKind::SolveFailed, "Lyapunov residual " + std::to_string(residual(p).norm()));
  return p;
}

// ---------------------------------------------------------------------------
// CLF data, CLF-QP, validity ball

struct ClfData {
  Eigen::MatrixXd a, b, p, q;
  double c1 = 0.0;  // lambda_min(P)
  double c2 = 0.0;  // lambda_max(P)
  double c3 = 0.0;  // decrease rate in Vdot <= -c3 |x|
  double c5 = 0.0;  // c3 / (2 lambda_max(P))
  double radius = 0.0;

  double value(const Eigen::VectorXd& x) const { return x.dot(p * x); }
};

/// c3 defaults to `c3_scale * lambda_min(Q) / lambda_max(P)`.
inline ClfData make_clf_data(const Linearization& lin, const Eigen::MatrixXd& q, double c3_scale = 10.0) {
  ClfData d;
  d.a = lin.a;
  d.b = lin.b;
  d.q = q;
  d.p = synthesize_clf(lin.a, q);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(d.p), eq(q);
  if (ep.eigenvalues().minCoeff() <= 0.0) throw Error(ErrorKind::SolveFailed, "P is not positive definite");
  if (eq.eigenvalues().minCoeff() <= 0.0) throw Error(ErrorKind::InvalidArgument, "Q must be positive definite");
  d.c1 = ep.eigenvalues().minCoeff();
  d.c2 = ep.eigenvalues().maxCoeff();
  d.c3 = c3_scale * eq.eigenvalues().minCoeff() / d.c2;
  d.c5 = d.c3 / (2.0 * d.c2);
  return d;
}

/// Same data with a different c3 (and the c5 that follows from it).
inline ClfData with_c3(ClfData d, double c3) {
  d.c3 = c3;
  d.c5 = c3 / (2.0 * d.c2);
  return d;
}

struct ClfQpResult {
  double u = 0.0;
  double delta = 0.0;
  double lfv = 0.0;
  double lgv = 0.0;
  double bound = 0.0;   // -c3 |x|
  int active_case = 0;  // 0 reference, 1 relaxed interior, 2 lower box edge, 3 upper box edge
};

/// min (u - u_ref)^2 + rho delta^2  s.t.  LfV + LgV u <= -c3|x| + delta, delta >= 0, lo <= u <= hi.
/// For fixed u the best delta is max(0, LfV + LgV u + c3|x|), leaving a convex
/// piecewise quadratic in u; its minimizer is clamped to the box.
inline ClfQpResult clf_qp_solve(double lfv, double lgv, double norm_x, double u_ref, double c3, double lo, double hi,
                                double rho = 1e4) {
  if (!(lo <= hi)) throw Error(ErrorKind::InvalidArgument, "empty torque box");
  ClfQpResult r;
  r.lfv = lfv;
  r.lgv = lgv;
  r.bound = -c3 * norm_x;
  const double s = r.bound - lfv;  // constraint met without relaxation iff lgv * u <= s
  double u = u_ref;
  if (lgv * u_ref > s) {
    u = (u_ref + rho * lgv * s) / (1.0 + rho * lgv * lgv);
    r.active_case = 1;
  }
  if (u < lo) {
    u = lo;
    r.active_case = 2;
  } else if (u > hi) {
    u = hi;
    r.active_case = 3;
  }
  r.u = u;
  r.delta = std::max(0.0, lfv + lgv * u - r.bound);
  return r;
}

/// CLF-QP on a plant with drift() and input(): Lie derivatives of V = x'Px
/// from the nonlinear closed-loop vector fields at x.
template <class Plant>
ClfQpResult clf_qp(const Vec12& x, double u_ref, const ClfData& clf, const Plant& plant, double lo, double hi,
                   double rho = 1e4) {
  const Eigen::VectorXd px = clf.p * x;
  const double lfv = 2.0 * px.dot(plant.drift(x));
  const double lgv = 2.0 * px.dot(plant.input(x));
  return clf_qp_solve(lfv, lgv, x.norm(), u_ref, clf.c3, lo, hi, rho);
}

struct BallOptions {
  int directions = 64;
  std::uint64_t seed = 1;
  double cap = 1.0;   // largest radius searched
  int scan = 32;      // coarse radii before bisection
  int bisections = 40;
  double u_gain = 10.0;  // input grid |u| <= u_gain |x|, N m per unit state norm
  int u_points = 5;
};

/// Unit directions used by the ball search; deterministic in the seed.
inline std::vector<Eigen::VectorXd> ball_directions(int n, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i) d[i] = nd(rng);
    out.push_back(d.normalized());
  }
  return out;
}

/// Largest radius along each direction for which the linearization error
/// e(x, u) = f(x, u) - A x - B u obeys |e| <= c5 |x| on the input grid, then the
/// minimum over directions. `f(x, u)` returns the full vector field.
///
/// The input grid spans |u| <= u_gain |x|. With a fixed box, |e| / |x| tends to
/// |dg/dx| |u| as x -> 0, so no ball exists for any nonzero box.
template <class F>
double estimate_validity_ball(const ClfData& clf, const F& f, const std::vector<Eigen::VectorXd>& dirs,
                              const BallOptions& opt = {}) {
  if (dirs.empty()) throw Error(ErrorKind::InvalidArgument, "no directions");
  std::vector<double> us(static_cast<std::size_t>(std::max(opt.u_points, 1)));  // fractions of the box
  for (std::size_t k = 0; k < us.size(); ++k)
    us[k] = us.size() == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(us.size() - 1);

  auto ok = [&](const Eigen::VectorXd& d, double radius) {
    const Eigen::VectorXd x = radius * d;
    for (double frac : us) {
      const double u = frac * opt.u_gain * radius;
      const Eigen::VectorXd e = f(x, u) - clf.a * x - clf.b.col(0) * u;
      if (!(e.norm() <= clf.c5 * radius)) return false;
    }
    return true;
  };

  double r = opt.cap;
  for (const Eigen::VectorXd& d : dirs) {
    double lo = 0.0, hi = -1.0;
    for (int k = 1; k <= opt.scan; ++k) {
      const double radius = opt.cap * static_cast<double>(k) / opt.scan;
      if (!ok(d, radius)) {
        hi = radius;
        break;
      }
      lo = radius;
    }
    if (hi < 0.0) continue;  // valid up to the cap
    for (int it = 0; it < opt.bisections; ++it) {
      const double mid = 0.5 * (lo + hi);
      (ok(d, mid) ? lo : hi) = mid;
    }
    r = std::min(r, lo);
  }
  if (r < 1e-6) throw Error(ErrorKind::DegenerateBall, "validity radius " + std::to_string(r));
  return r;
}

// ---------------------------------------------------------------------------
// Run-time balance controller

enum class BalanceMode { PdCop, ClfQp };

inline const char* to_string(BalanceMode m) { return m == BalanceMode::PdCop ? "pd+cop" : "clf-qp"; }

inline BalanceMode balance_mode_from_string(const std::string& s) {
  if (s == "pd+cop") return BalanceMode::PdCop;
  if (s == "clf-qp") return BalanceMode::ClfQp;
  throw Error(ErrorKind::InvalidArgument, "unknown balance mode '" + s + "'");
}

/// Holds the equilibrium on one foot. Non-ankle joints: u_ff + PD. Stance ankle:
/// pd+cop mode uses the pelvis-pitch loop (or the baseline ankle PD when the loop
/// is off) followed by the COP filter when enabled; clf-qp mode adds the CLF-QP
/// correction to the baseline ankle PD and is never filtered.
class BalanceController final : public Controller {
 public:
  BalanceController(BalancePlant plant, ControllerConfig cfg, BalanceMode mode, ClfData clf = {}, double rho = 1e4)
      : plant_(std::move(plant)), cfg_(cfg), mode_(mode), clf_(std::move(clf)), rho_(rho) {
    cfg_.validate();
    if (mode_ == BalanceMode::ClfQp && clf_.p.rows() != kBalanceStates)
      throw Error(ErrorKind::InvalidArgument, "clf-qp mode needs a 12-state CLF");
    pitch_des_ = plant_.equilibrium().q[kPelvisPitch];
  }

  void reset(double, DomainLabel) override {}
  double guard_arm_delay() const override { return std::numeric_limits<double>::infinity(); }

  Vec12 state_of(const Sensors& s) const {
    Vec12 x;
    x.head<6>() = s.joint_pos - plant_.equilibrium().joints();
    x.tail<6>() = s.joint_vel;
    return x;
  }

  Vec6 compute(double, const Sensors& s, const ContactProbe& probe) override {
    const RobotParams& p = plant_.params();
    const int a = plant_.ankle();
    const Vec12 x = state_of(s);
    Vec6 tau = plant_.torques(x, 0.0);
    last_qp_ = {};
    if (mode_ == BalanceMode::ClfQp) {
      const double lo = -p.torque_limit[a] - tau[a], hi = p.torque_limit[a] - tau[a];
      last_qp_ = clf_qp(x, 0.0, clf_, plant_, lo, hi, rho_);
      tau[a] += last_qp_.u;
    } else if (cfg_.pelvis_loop_on) {
      tau[a] = plant_.equilibrium().u_ff[a] +
               stance_pelvis_control(s.pelvis_pitch, s.pelvis_pitch_rate, pitch_des_, 0.0, cfg_.pelvis_kp, cfg_.pelvis_kd);
    }
    for (int j = 0; j < 6; ++j) tau[j] = std::clamp(tau[j], -p.torque_limit[j], p.torque_limit[j]);
    diag_.tau_raw_ankle = tau[a];
    if (mode_ == BalanceMode::PdCop && cfg_.cop_filter_on && probe)
      tau[a] = cop_filter_consistent(tau, a, probe, p.foot, cfg_.alpha, cfg_.fz_epsilon);
    diag_.tau_filt_ankle = tau[a];
    const FootForces& f = s.foot(stance_side(plant_.equilibrium().stance));
    diag_.copx = f.normal() > cfg_.fz_epsilon ? cop_from_forces(f.heel, f.toe, p.foot) : 0.0;
    for (int j = 0; j < 6; ++j)
      if (!std::isfinite(tau[j])) tau[j] = 0.0;
    return tau;
  }

  ControlDiagnostics diagnostics() const override { return diag_; }
  const ClfQpResult& last_qp() const { return last_qp_; }
  const BalancePlant& plant() const { return plant_; }
  BalanceMode mode() const { return mode_; }

 private:
  BalancePlant plant_;
  ControllerConfig cfg_;
  BalanceMode mode_;
  ClfData clf_;
  double rho_;
  double pitch_des_ = 0.0;
  ClfQpResult last_qp_{};
  ControlDiagnostics diag_{};
};

// ---------------------------------------------------------------------------
// Per-sample Lyapunov bookkeeping for a balance trace

struct BalanceSample {
  double t = 0.0;
  double x_norm = 0.0;
  double v = 0.0;     // x'Px
  double vdot = 0.0;  // 2 x'P xdot with xdot from the simulated dynamics at the sample
  double u = 0.0;     // ankle torque beyond u_ff and the baseline PD
  double delta = 0.0;
};

/// Re-evaluates V, Vdot and the QP relaxation along a trace. `spec` must be the
/// one the trace was produced with so that pushes and tilt enter Vdot.
inline std::vector<BalanceSample> balance_samples(const HybridTrace& trace, const BalancePlant& plant,
                                                  const ClfData& clf, const HybridSystemSpec& spec,
                                                  double rho = 1e4) {
  std::vector<BalanceSample> out;
  out.reserve(trace.samples.size());
  const RobotParams& p = plant.params();
  const int a = plant.ankle();
  StanceAnchor anchor = anchor_from(plant.equilibrium().q, p, stance_side(plant.equilibrium().stance));
  anchor.pitch = 0.0;
  for (const TraceSample& s : trace.samples) {
    BalanceSample b;
    b.t = s.t;
    const Vec12 x = plant.reduced(s.state);
    b.x_norm = x.norm();
    const double base = plant.torques(x, 0.0)[a];
    b.u = s.tau[a] - base;
    if (clf.p.rows() == kBalanceStates) {
      b.v = clf.value(x);
      ContactOptions opt{anchor, spec.gravity_at(s.t), spec.baumgarte, spec.external_at(s.t)};
      const ConstrainedAccel ca = constrained_accel(s.state, s.tau, s.domain, p, opt);
      Vec12 dx;
      dx.head<6>() = x.tail<6>();
      dx.tail<6>() = ca.vdot.tail<6>();
      b.vdot = 2.0 * (clf.p * x).dot(dx);
      b.delta = clf_qp(x, 0.0, clf, plant, -p.torque_limit[a] - base, p.torque_limit[a] - base, rho).delta;
    }
    out.push_back(b);
  }
  return out;
}

inline void write_balance_csv(const std::vector<BalanceSample>& v, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  out << "t,x_norm,V,Vdot,u,delta\n";
  for (const BalanceSample& b : v)
    out << format_double(b.t) << ',' << format_double(b.x_norm) << ',' << format_double(b.v) << ','
        << format_double(b.vdot) << ',' << format_double(b.u) << ',' << format_double(b.delta) << '\n';
}

// ---------------------------------------------------------------------------
// balance.json

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::ParseError, what + ": expected a non-empty array of rows");
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw Error(ErrorKind::ParseError, what + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw Error(ErrorKind::ParseError, what + ": non-numeric entry");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

template <int N>
Eigen::Matrix<double, N, 1> vector_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N))
    throw Error(ErrorKind::ParseError, what + ": expected " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw Error(ErrorKind::ParseError, what + ": non-numeric entry");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorKind::ParseError, std::string("missing field '") + key + "'");
  return j.at(key);
}

inline double number_field(const nlohmann::json& j, const char* key) {
  const nlohmann::json& v = field(j, key);
  if (!v.is_number()) throw Error(ErrorKind::ParseError, std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

}  // namespace detail

inline constexpr int kBalanceSchemaVersion = 1;

inline nlohmann::json balance_to_json(const Equilibrium& eq, const ClfData& clf) {
  return {{"schema_version", kBalanceSchemaVersion},
          {"equilibrium",
           {{"q", std::vector<double>(eq.q.data(), eq.q.data() + 9)},
            {"u_ff", std::vector<double>(eq.u_ff.data(), eq.u_ff.data() + 6)},
            {"stance", to_string(eq.stance)},
            {"com_x", eq.com_x}}},
          {"clf",
           {{"A", detail::matrix_to_json(clf.a)},
            {"B", detail::matrix_to_json(clf.b)},
            {"P", detail::matrix_to_json(clf.p)},
            {"Q", detail::matrix_to_json(clf.q)},
            {"c1", clf.c1},
            {"c2", clf.c2},
            {"c3", clf.c3},
            {"c5", clf.c5},
            {"radius", clf.radius}}}};
}

struct BalanceFile {
  Equilibrium equilibrium;
  ClfData clf;
};

inline BalanceFile balance_from_json(const nlohmann::json& j) {
  if (detail::number_field(j, "schema_version") != kBalanceSchemaVersion)
    throw Error(ErrorKind::SchemaVersionMismatch, "balance file schema_version must be " + std::to_string(kBalanceSchemaVersion));
  BalanceFile f;
  const nlohmann::json& e = detail::field(j, "equilibrium");
  f.equilibrium.q = detail::vector_from_json<9>(detail::field(e, "q"), "equilibrium.q");
  f.equilibrium.u_ff = detail::vector_from_json<6>(detail::field(e, "u_ff"), "equilibrium.u_ff");
  const nlohmann::json& st = detail::field(e, "stance");
  if (st == "RightStance") f.equilibrium.stance = DomainLabel::RightStance;
  else if (st == "LeftStance") f.equilibrium.stance = DomainLabel::LeftStance;
  else throw Error(ErrorKind::ParseError, "equilibrium.stance must be RightStance or LeftStance");
  f.equilibrium.com_x = detail::number_field(e, "com_x");

  const nlohmann::json& c = detail::field(j, "clf");
  f.clf.a = detail::matrix_from_json(detail::field(c, "A"), "clf.A");
  f.clf.b = detail::matrix_from_json(detail::field(c, "B"), "clf.B");
  f.clf.p = detail::matrix_from_json(detail::field(c, "P"), "clf.P");
  f.clf.q = detail::matrix_from_json(detail::field(c, "Q"), "clf.Q");
  f.clf.c1 = detail::number_field(c, "c1");
  f.clf.c2 = detail::number_field(c, "c2");
  f.clf.c3 = detail::number_field(c, "c3");
  f.clf.c5 = detail::number_field(c, "c5");
  f.clf.radius = detail::number_field(c, "radius");
  const Eigen::Index n = f.clf.a.rows();
  if (f.clf.a.cols() != n || f.clf.p.rows() != n || f.clf.p.cols() != n || f.clf.q.rows() != n ||
      f.clf.b.rows() != n)
    throw Error(ErrorKind::ParseError, "clf matrices have inconsistent sizes");
  return f;
}

inline void save_balance(const Equilibrium& eq, const ClfData& clf, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  out << balance_to_json(eq, clf).dump(2) << '\n';
}

inline BalanceFile load_balance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
  return balance_from_json(j);
}

}  // namespace exo
