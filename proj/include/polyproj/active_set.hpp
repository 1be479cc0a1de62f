#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "polyproj/errors.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/qr.hpp"

namespace polyproj {

// Minimum-distance point onto the affine set {y : C y = d} plus minimum-norm
// multipliers w satisfying x - y = C^T w. C may have dependent rows; the
// `inconsistency` field reports how badly the dependent rows contradict d
// (zero when the system is consistent).
struct AffineProjection {
  Vec y;
  Vec w;
  double inconsistency = 0.0;
};

inline AffineProjection project_affine(const DenseMatrix& c, const Vec& d, const Vec& x,
                                       double rank_tol = kDefaultRankTol) {
  if (c.rows != d.size() || c.cols != x.size())
    throw Error(ErrorKind::Input, "project_affine: dimension mismatch");

  AffineProjection out;
  if (c.rows == 0) {
    out.y = x;
    return out;
  }

  DenseMatrix h = transpose(c);  // n x q, column j is constraint row j
  QrFactorization f = qr_pivoted(h, rank_tol);

  Vec d_perm(c.rows);
  for (std::size_t j = 0; j < c.rows; ++j) d_perm[j] = d[f.pivot[j]];

  // Leading r x r block of f.r is upper triangular; solve r^T coeff = d_perm.
  Vec coeff(f.rank, 0.0);
  for (std::size_t i = 0; i < f.rank; ++i) {
    double acc = d_perm[i];
    for (std::size_t j = 0; j < i; ++j) acc -= f.r(j, i) * coeff[j];
    coeff[i] = acc / f.r(i, i);
  }

  // Dependent constraint rows must agree with the determined coefficients.
  for (std::size_t j = f.rank; j < c.rows; ++j) {
    double lhs = 0.0;
    for (std::size_t i = 0; i < f.rank; ++i) lhs += f.r(i, j) * coeff[i];
    out.inconsistency = std::max(out.inconsistency, std::fabs(lhs - d_perm[j]));
  }

  Vec q1tx(f.rank, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < f.rank; ++k) q1tx[k] += f.q1(i, k) * x[i];

  Vec e(f.rank);
  for (std::size_t k = 0; k < f.rank; ++k) e[k] = q1tx[k] - coeff[k];

  out.y = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < f.rank; ++k) out.y[i] -= f.q1(i, k) * e[k];

  // x - y = q1 e and h w_perm = q1 r w_perm, so solve r w_perm = e min-norm.
  LstsqResult mult = lstsq_min_norm(f.r, e, rank_tol);
  out.w = Vec(c.rows, 0.0);
  for (std::size_t j = 0; j < c.rows; ++j) out.w[f.pivot[j]] = mult.x[j];
  return out;
}

struct QpSolution {
  Vec y;
  Vec lambda;  // length m, nonnegative
  Vec mu;      // length l
  std::size_t iterations = 0;
};

namespace detail {

inline DenseMatrix stack_rows(const DenseMatrix& a, const std::vector<std::size_t>& rows_a,
                              const DenseMatrix& b) {
  DenseMatrix c(rows_a.size() + b.rows, a.cols > 0 ? a.cols : b.cols);
  std::size_t r = 0;
  for (std::size_t i : rows_a) {
    for (std::size_t j = 0; j < c.cols; ++j) c(r, j) = a(i, j);
    ++r;
  }
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t j = 0; j < c.cols; ++j) c(r, j) = b(i, j);
    ++r;
  }
  return c;
}

inline Vec stack_values(const Vec& a, const std::vector<std::size_t>& rows_a, const Vec& b) {
  Vec d;
  d.reserve(rows_a.size() + b.size());
  for (std::size_t i : rows_a) d.push_back(a[i]);
  for (double v : b) d.push_back(v);
  return d;
}

}  // namespace detail

// Dual active-set solve of min 0.5 ||y - x||^2 subject to A y <= a, B y = b.
// The unit Hessian keeps every subproblem an affine projection. Starts from
// the equality-constrained minimizer (dual feasible with an empty working
// set) and adds the most violated inequality until none violates beyond
// tol / sqrt(m + 1). Throws Infeasible when a dual ray proves the constraints
// inconsistent and ConvergenceError when the iteration cap is reached.
inline QpSolution solve_projection_qp(const DenseMatrix& a_mat, const Vec& a_vec,
                                      const DenseMatrix& b_mat, const Vec& b_vec, const Vec& x,
                                      double tol = 1e-10, std::size_t max_iter = 0) {
  const std::size_t n = x.size();
  const std::size_t m = a_mat.rows;
  const std::size_t l = b_mat.rows;
  if ((m > 0 && a_mat.cols != n) || (l > 0 && b_mat.cols != n) || a_vec.size() != m ||
      b_vec.size() != l)
    throw Error(ErrorKind::Input, "solve_projection_qp: dimension mismatch");
  require_finite(x, "solve_projection_qp: x");
  if (max_iter == 0) max_iter = 50 * (m + l + n + 1);

  const double theta_enter = tol / std::sqrt(static_cast<double>(m) + 1.0);

  std::vector<std::size_t> work;  // active inequality working set, insertion order
  Vec u;                          // multipliers for `work`
  Vec mu(l, 0.0);
  Vec y = x;

  if (l > 0) {
    QrFactorization fb = qr_pivoted(transpose(b_mat));
    if (fb.rank < l)
      throw Error(ErrorKind::Rank, "solve_projection_qp: equality rows are linearly dependent");
    AffineProjection init = project_affine(b_mat, b_vec, x);
    y = init.y;
    mu = init.w;
  }

  auto refresh = [&]() {
    DenseMatrix c = detail::stack_rows(a_mat, work, b_mat);
    Vec d = detail::stack_values(a_vec, work, b_vec);
    AffineProjection sol = project_affine(c, d, x);
    y = sol.y;
    for (std::size_t j = 0; j < work.size(); ++j) u[j] = std::max(sol.w[j], 0.0);
    for (std::size_t j = 0; j < l; ++j) mu[j] = sol.w[work.size() + j];
  };

  std::size_t iterations = 0;
  Vec best_y = y;
  double best_viol = std::numeric_limits<double>::infinity();
  const double inf = std::numeric_limits<double>::infinity();

  for (;;) {
    // Most violated inequality; ties resolved toward the smallest index.
    std::size_t p = m;
    double viol = theta_enter;
    for (std::size_t i = 0; i < m; ++i) {
      double v = dot(Vec(a_mat.row_ptr(i), a_mat.row_ptr(i) + n), y) - a_vec[i];
      if (v > viol) {
        viol = v;
        p = i;
      }
    }
    if (p == m) break;

    if (viol < best_viol) {
      best_viol = viol;
      best_y = y;
    }

    Vec g(a_mat.row_ptr(p), a_mat.row_ptr(p) + n);
    double up = 0.0;

    for (;;) {
      if (++iterations > max_iter)
        throw ConvergenceError("solve_projection_qp: iteration cap reached", best_y, best_viol);

      DenseMatrix h(n, work.size() + l);
      for (std::size_t j = 0; j < work.size(); ++j)
        for (std::size_t i = 0; i < n; ++i) h(i, j) = a_mat(work[j], i);
      for (std::size_t j = 0; j < l; ++j)
        for (std::size_t i = 0; i < n; ++i) h(i, work.size() + j) = b_mat(j, i);

      Vec z;
      Vec r(work.size() + l, 0.0);
      if (h.cols == 0) {
        z = g;
      } else {
        QrFactorization f = qr_pivoted(h);
        z = orth_complement_apply(f, g);
        r = lstsq_min_norm(h, g).x;
      }

      double viol_now = dot(g, y) - a_vec[p];
      double z2 = dot(z, z);
      bool z_zero = std::sqrt(z2) <= 1e-12 * (1.0 + norm2(g));
      double t2 = z_zero ? inf : viol_now / z2;

      double t1 = inf;
      std::size_t blocker = work.size();
      for (std::size_t j = 0; j < work.size(); ++j) {
        if (r[j] > 1e-14) {
          double ratio = u[j] / r[j];
          if (ratio < t1) {
            t1 = ratio;
            blocker = j;
          }
        }
      }

      double t = std::min(t1, t2);
      if (t == inf)
        throw Error(ErrorKind::Infeasible, "solve_projection_qp: constraints are infeasible");

      if (!z_zero) axpy(-t, z, y);
      for (std::size_t j = 0; j < work.size(); ++j) u[j] -= t * r[j];
      for (std::size_t j = 0; j < l; ++j) mu[j] -= t * r[work.size() + j];
      up += t;

      if (t2 <= t1) {
        work.push_back(p);
        u.push_back(up);
        refresh();
        break;
      }
      work.erase(work.begin() + static_cast<std::ptrdiff_t>(blocker));
      u.erase(u.begin() + static_cast<std::ptrdiff_t>(blocker));
    }
  }

  QpSolution out;
  out.y = y;
  out.lambda = Vec(m, 0.0);
  for (std::size_t j = 0; j < work.size(); ++j) out.lambda[work[j]] = std::max(u[j], 0.0);
  out.mu = mu;
  out.iterations = iterations;
  return out;
}

}  // namespace polyproj
