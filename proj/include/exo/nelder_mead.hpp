#pragma once

// Derivative-free Nelder-Mead minimizer with the standard coefficients
// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace exo {

struct NelderMeadOptions {
  int max_evals = 1000;
  double initial_step = 0.05;  // simplex edge along each coordinate
  double f_tol = 1e-10;        // stop when the simplex values spread less than this
  double x_tol = 1e-10;        // or the simplex collapses below this size
  std::uint64_t seed = 0;      // nonzero: jitter the initial edges by up to +-25%
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int evals = 0;
  bool budget_exhausted = false;
};

/// Minimizes f starting from x0. Non-finite objective values are treated as +inf.
template <class F>
NelderMeadResult nelder_mead(F&& f, const Eigen::VectorXd& x0, const NelderMeadOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  NelderMeadResult res;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++res.evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> jitter(0.75, 1.25);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale = opt.seed != 0 ? jitter(rng) : 1.0;
    const double base = std::abs(x0[i]) > 1e-8 ? std::abs(x0[i]) : 1.0;
    pts[static_cast<std::size_t>(i + 1)][i] += opt.initial_step * base * scale;
  }

  res.x = x0;
  if (opt.max_evals <= 0) {
    res.budget_exhausted = true;
    return res;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (res.evals >= opt.max_evals) {
      res.budget_exhausted = true;
      vals.resize(i);
      pts.resize(i);
      break;
    }
    vals[i] = eval(pts[i]);
  }
  auto best_of = [&] {
    const auto it = std::min_element(vals.begin(), vals.end());
    const auto idx = static_cast<std::size_t>(it - vals.begin());
    res.x = pts[idx];
    res.f = *it;
  };
  if (res.budget_exhausted) {
    best_of();
    return res;
  }

  std::vector<std::size_t> order(pts.size());
  while (true) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t lo = order.front(), hi = order.back(), second = order[order.size() - 2];

    double size = 0.0;
    for (const auto& p : pts) size = std::max(size, (p - pts[lo]).cwiseAbs().maxCoeff());
    if (vals[hi] - vals[lo] <= opt.f_tol || size <= opt.x_tol) break;
    if (res.evals >= opt.max_evals) {
      res.budget_exhausted = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != hi) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = centroid + (centroid - pts[hi]);
    const double fr = eval(xr);
    if (fr < vals[lo]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[hi]);
      const double fe = res.evals < opt.max_evals ? eval(xe) : std::numeric_limits<double>::infinity();
      if (fe < fr) {
        pts[hi] = xe;
        vals[hi] = fe;
      } else {
        pts[hi] = xr;
        vals[hi] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[hi] = xr;
      vals[hi] = fr;
      continue;
    }
    if (res.evals >= opt.max_evals) {
      res.budget_exhausted = true;
      break;
    }
    const bool outside = fr < vals[hi];
    const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                       : Eigen::VectorXd(centroid + 0.5 * (pts[hi] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[hi])) {
      pts[hi] = xc;
      vals[hi] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == lo) continue;
      if (res.evals >= opt.max_evals) {
        res.budget_exhausted = true;
        break;
      }
      pts[i] = pts[lo] + 0.5 * (pts[i] - pts[lo]);
      vals[i] = eval(pts[i]);
    }
    if (res.budget_exhausted) break;
  }
  best_of();
  return res;
}

}  // namespace exo
