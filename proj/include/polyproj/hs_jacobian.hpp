#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "polyproj/errors.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/polytope.hpp"
#include "polyproj/projection.hpp"
#include "polyproj/qr.hpp"

namespace polyproj {

// One computable generalized Jacobian of the projection at x: the orthogonal
// projector onto the complement of the span of the active inequality normals
// and the equality normals. Stored as an orthonormal basis q1 of that span,
// so applying the Jacobian is two thin matrix-vector products.
struct HsFactor {
  std::size_t n = 0;
  std::vector<std::size_t> active;  // inequality rows used, ascending
  DenseMatrix q1;                   // n x rank
  std::size_t rank = 0;
};

namespace detail {

// Columns are the transposed rows A_K and the transposed equality rows.
inline DenseMatrix normal_matrix(const Polytope& p, const std::vector<std::size_t>& rows) {
  DenseMatrix h(p.n, rows.size() + p.B.rows);
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < p.n; ++i) h(i, j) = p.A(rows[j], i);
  for (std::size_t j = 0; j < p.B.rows; ++j)
    for (std::size_t i = 0; i < p.n; ++i) h(i, rows.size() + j) = p.B(j, i);
  return h;
}

}  // namespace detail

inline HsFactor hs_element(const Polytope& p, const ProjectionResult& res,
                           double rank_tol = kDefaultRankTol) {
  if (res.y.size() != p.n) throw Error(ErrorKind::Input, "hs_element: dimension mismatch");
  HsFactor f;
  f.n = p.n;
  f.active = res.active;
  DenseMatrix h = detail::normal_matrix(p, res.active);
  if (h.cols == 0) {
    f.rank = 0;
    f.q1 = DenseMatrix(p.n, 0);
    return f;
  }
  QrFactorization qr = qr_pivoted(h, rank_tol);
  f.q1 = std::move(qr.q1);
  f.rank = qr.rank;
  return f;
}

// J v = v - q1 (q1^T v). The projector is symmetric, so jvp and vjp coincide.
inline Vec jvp(const HsFactor& f, const Vec& v) {
  if (v.size() != f.n) throw Error(ErrorKind::Input, "jvp: dimension mismatch");
  Vec w(f.rank, 0.0);
  for (std::size_t i = 0; i < f.n; ++i)
    for (std::size_t k = 0; k < f.rank; ++k) w[k] += f.q1(i, k) * v[i];
  Vec out = v;
  for (std::size_t i = 0; i < f.n; ++i)
    for (std::size_t k = 0; k < f.rank; ++k) out[i] -= f.q1(i, k) * w[k];
  return out;
}

inline Vec vjp(const HsFactor& f, const Vec& g) { return jvp(f, g); }

inline DenseMatrix dense_jacobian(const HsFactor& f) {
  if (f.n > 64) throw Error(ErrorKind::Size, "dense_jacobian: dimension too large");
  DenseMatrix j = identity_matrix(f.n);
  for (std::size_t r = 0; r < f.n; ++r)
    for (std::size_t c = 0; c < f.n; ++c)
      for (std::size_t k = 0; k < f.rank; ++k) j(r, c) -= f.q1(r, k) * f.q1(c, k);
  return j;
}

struct HsSetElement {
  std::vector<std::size_t> index_set;  // subset of the active set, ascending
  DenseMatrix jacobian;
};

// Enumerates the full generalized Jacobian family at x: every subset K of the
// active set whose normals (together with the equality rows) are linearly
// independent and support some valid multiplier pair. Exponential in the
// active set size, so refuses |active| > 12.
inline std::vector<HsSetElement> hs_enumerate(const Polytope& p, const Vec& x,
                                              const ProjectionResult& res) {
  const std::size_t k = res.active.size();
  if (k > 12) throw Error(ErrorKind::Size, "hs_enumerate: active set too large");
  const std::size_t l = p.B.rows;

  Vec gap = vec_sub(x, res.y);
  std::vector<HsSetElement> out;

  for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < k; ++i)
      if (mask & (std::size_t{1} << i)) subset.push_back(res.active[i]);

    DenseMatrix h = detail::normal_matrix(p, subset);
    if (h.cols > 0) {
      QrFactorization f = qr_pivoted(h);
      if (f.rank < h.cols) continue;  // dependent normals
      LstsqResult ls = lstsq_min_norm(h, gap);
      if (ls.residual > 1e-9 * (1.0 + norm2(gap))) continue;  // no multipliers
      bool dual_ok = true;
      for (std::size_t j = 0; j < subset.size(); ++j)
        if (ls.x[j] < -1e-12) dual_ok = false;
      if (!dual_ok) continue;
      HsSetElement el;
      el.index_set = subset;
      HsFactor fac;
      fac.n = p.n;
      fac.q1 = std::move(f.q1);
      fac.rank = f.rank;
      el.jacobian = dense_jacobian(fac);
      out.push_back(std::move(el));
    } else {
      if (norm2(gap) > 1e-9 * (1.0 + norm2(gap))) continue;  // x not interior
      HsSetElement el;
      HsFactor fac;
      fac.n = p.n;
      fac.q1 = DenseMatrix(p.n, 0);
      fac.rank = 0;
      el.jacobian = dense_jacobian(fac);
      out.push_back(std::move(el));
    }
  }
  return out;
}

struct PathCheckResult {
  double error_inf = 0.0;    // max norm gap between integral and endpoint difference
  std::size_t switches = 0;  // active set changes between consecutive samples
};

// Path-integral probe: integrate the generalized Jacobian along the segment
// x0 -> x1 with the trapezoid rule and compare against the actual change of
// the projection. Consecutive samples warm start each other and Jacobian
// factors are cached per active set.
inline PathCheckResult path_integral_check(const Polytope& p, const Vec& x0, const Vec& x1,
                                           std::size_t samples) {
  if (samples < 2) throw Error(ErrorKind::Input, "path_integral_check: need at least 2 samples");
  if (x0.size() != p.n || x1.size() != p.n)
    throw Error(ErrorKind::Input, "path_integral_check: dimension mismatch");

  Vec delta = vec_sub(x1, x0);
  Vec integral(p.n, 0.0);
  std::map<std::vector<std::size_t>, HsFactor> factor_cache;

  Vec first_y, last_y;
  std::vector<std::size_t> prev_active;
  PathCheckResult out;

  for (std::size_t s = 0; s < samples; ++s) {
    double frac = static_cast<double>(s) / static_cast<double>(samples - 1);
    Vec xs = x0;
    axpy(frac, delta, xs);

    ProjectOptions opts;
    if (s > 0) opts.warm_start = &prev_active;
    ProjectionResult res = project(p, xs, opts);

    if (s == 0)
      first_y = res.y;
    else if (res.active != prev_active)
      ++out.switches;
    if (s + 1 == samples) last_y = res.y;

    auto it = factor_cache.find(res.active);
    if (it == factor_cache.end())
      it = factor_cache.emplace(res.active, hs_element(p, res)).first;
    Vec jd = jvp(it->second, delta);

    double weight = (s == 0 || s + 1 == samples) ? 0.5 : 1.0;
    axpy(weight / static_cast<double>(samples - 1), jd, integral);
    prev_active = res.active;
  }

  Vec expected = vec_sub(last_y, first_y);
  out.error_inf = norm_inf(vec_sub(integral, expected));
  return out;
}

}  // namespace polyproj
