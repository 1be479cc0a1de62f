#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "polyproj/active_set.hpp"
#include "polyproj/errors.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/polytope.hpp"

namespace polyproj {

struct ProjectionResult {
  Vec y;
  Vec lambda;                       // inequality multipliers, length m
  Vec mu;                           // equality multipliers, length l
  std::vector<std::size_t> active;  // 0-based inequality indices, ascending
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
};

struct ProjectOptions {
  double tol = 1e-10;      // KKT residual target of the solve
  double eps_act = 1e-9;   // relative slack for active set identification
  std::size_t max_iter = 0;  // 0 picks 50 (m + l + n + 1)
  // Optional hint: try an equality-constrained solve on this active set first
  // and fall back to the full solve if it fails the KKT test.
  const std::vector<std::size_t>* warm_start = nullptr;
};

// Max norm over the four KKT conditions: stationarity, primal feasibility
// (as sqrt of the squared violation), dual feasibility, complementarity.
inline double kkt_residual(const Polytope& p, const Vec& x, const Vec& y, const Vec& lambda,
                           const Vec& mu) {
  if (x.size() != p.n || y.size() != p.n || lambda.size() != p.A.rows || mu.size() != p.B.rows)
    throw Error(ErrorKind::Input, "kkt_residual: dimension mismatch");
  Vec stat = vec_sub(y, x);
  for (std::size_t i = 0; i < p.A.rows; ++i)
    for (std::size_t j = 0; j < p.n; ++j) stat[j] += p.A(i, j) * lambda[i];
  for (std::size_t i = 0; i < p.B.rows; ++i)
    for (std::size_t j = 0; j < p.n; ++j) stat[j] += p.B(i, j) * mu[i];
  double res = norm_inf(stat);

  res = std::max(res, std::sqrt(feasibility_violation(p, y).v_all));
  for (std::size_t i = 0; i < p.A.rows; ++i) {
    res = std::max(res, -lambda[i]);
    double slack = -p.a[i];
    for (std::size_t j = 0; j < p.n; ++j) slack += p.A(i, j) * y[j];
    res = std::max(res, std::fabs(lambda[i] * slack));
  }
  return res;
}

inline std::vector<std::size_t> identify_active(const Polytope& p, const Vec& y,
                                                double eps_act = 1e-9) {
  std::vector<std::size_t> act;
  for (std::size_t i = 0; i < p.A.rows; ++i) {
    double s = -p.a[i];
    for (std::size_t j = 0; j < p.n; ++j) s += p.A(i, j) * y[j];
    if (std::fabs(s) <= eps_act * (1.0 + std::fabs(p.a[i]))) act.push_back(i);
  }
  return act;
}

// Euclidean projection of x onto p. Exact up to the solver tolerance: the
// result carries multipliers, the identified active set and the measured KKT
// residual.
inline ProjectionResult project(const Polytope& p, const Vec& x, const ProjectOptions& opts = {}) {
  if (x.size() != p.n) throw Error(ErrorKind::Input, "project: dimension mismatch");
  require_finite(x, "project: x");

  if (opts.warm_start != nullptr) {
    const std::vector<std::size_t>& hint = *opts.warm_start;
    bool valid = std::all_of(hint.begin(), hint.end(),
                             [&](std::size_t i) { return i < p.A.rows; });
    if (valid) {
      DenseMatrix c = detail::stack_rows(p.A, hint, p.B);
      Vec d = detail::stack_values(p.a, hint, p.b);
      AffineProjection sol = project_affine(c, d, x);
      if (sol.inconsistency <= 1e-12 * (1.0 + norm_inf(d))) {
        ProjectionResult res;
        res.y = sol.y;
        res.lambda = Vec(p.A.rows, 0.0);
        bool dual_ok = true;
        for (std::size_t j = 0; j < hint.size(); ++j) {
          if (sol.w[j] < -1e-12) dual_ok = false;
          res.lambda[hint[j]] = std::max(sol.w[j], 0.0);
        }
        res.mu = Vec(sol.w.begin() + static_cast<std::ptrdiff_t>(hint.size()), sol.w.end());
        if (dual_ok) {
          res.kkt_residual = kkt_residual(p, x, res.y, res.lambda, res.mu);
          if (res.kkt_residual <= opts.tol) {
            res.active = identify_active(p, res.y, opts.eps_act);
            res.iterations = 0;
            return res;
          }
        }
      }
    }
  }

  QpSolution sol = solve_projection_qp(p.A, p.a, p.B, p.b, x, opts.tol, opts.max_iter);
  ProjectionResult res;
  res.y = std::move(sol.y);
  res.lambda = std::move(sol.lambda);
  res.mu = std::move(sol.mu);
  res.iterations = sol.iterations;
  res.active = identify_active(p, res.y, opts.eps_act);
  res.kkt_residual = kkt_residual(p, x, res.y, res.lambda, res.mu);
  return res;
}

// Oracle: enumerate every candidate active set and keep the closest feasible
// KKT point. Exponential in the inequality count, so refuses m > 16.
inline ProjectionResult project_bruteforce(const Polytope& p, const Vec& x) {
  if (x.size() != p.n) throw Error(ErrorKind::Input, "project_bruteforce: dimension mismatch");
  const std::size_t m = p.A.rows;
  if (m > 16) throw Error(ErrorKind::Size, "project_bruteforce: too many inequalities");

  const double feas_tol = 1e-9;
  double best_dist = std::numeric_limits<double>::infinity();
  Vec best_y, best_w;
  std::vector<std::size_t> best_set;

  for (std::size_t mask = 0; mask < (std::size_t{1} << m); ++mask) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < m; ++i)
      if (mask & (std::size_t{1} << i)) subset.push_back(i);

    DenseMatrix c = detail::stack_rows(p.A, subset, p.B);
    Vec d = detail::stack_values(p.a, subset, p.b);
    AffineProjection sol = project_affine(c, d, x);
    if (sol.inconsistency > feas_tol * (1.0 + norm_inf(d))) continue;
    if (!contains(p, sol.y, feas_tol)) continue;

    bool dual_ok = true;
    for (std::size_t j = 0; j < subset.size(); ++j)
      if (sol.w[j] < -1e-12) dual_ok = false;
    if (!dual_ok) continue;

    double dist = norm2(vec_sub(sol.y, x));
    if (dist < best_dist) {
      best_dist = dist;
      best_y = sol.y;
      best_w = sol.w;
      best_set = subset;
    }
  }

  if (!std::isfinite(best_dist))
    throw Error(ErrorKind::Infeasible, "project_bruteforce: no KKT point found");

  ProjectionResult res;
  res.y = best_y;
  res.lambda = Vec(m, 0.0);
  for (std::size_t j = 0; j < best_set.size(); ++j)
    res.lambda[best_set[j]] = std::max(best_w[j], 0.0);
  res.mu = Vec(best_w.begin() + static_cast<std::ptrdiff_t>(best_set.size()), best_w.end());
  res.active = identify_active(p, res.y);
  res.kkt_residual = kkt_residual(p, x, res.y, res.lambda, res.mu);
  return res;
}

}  // namespace polyproj
