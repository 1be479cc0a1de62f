#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "polyproj/errors.hpp"
#include "polyproj/matrix.hpp"

namespace polyproj {

inline constexpr double kDefaultRankTol = 1e-10;

// Rank-revealing Householder QR with column pivoting.
//
// For an input H (rows x cols) the factorization satisfies
//   H(:, pivot[j]) ~= sum_i q1(:, i) * r(i, j)
// where q1 has `rank` orthonormal columns and r is upper trapezoidal with a
// nonincreasing diagonal. Rank is the number of diagonal entries of r that
// stay above rank_tol relative to the largest one.
struct QrFactorization {
  DenseMatrix q1;                   // rows x rank
  DenseMatrix r;                    // rank x cols, columns in pivot order
  std::vector<std::size_t> pivot;   // factored column j <- original column pivot[j]
  std::size_t rank = 0;
  std::size_t input_rows = 0;
  std::size_t input_cols = 0;
};

inline QrFactorization qr_pivoted(const DenseMatrix& h, double rank_tol = kDefaultRankTol) {
  const std::size_t rows = h.rows;
  const std::size_t cols = h.cols;
  const std::size_t kmax = std::min(rows, cols);

  DenseMatrix work = h;
  std::vector<std::size_t> piv(cols);
  std::iota(piv.begin(), piv.end(), std::size_t{0});

  // Householder vectors; reflector k acts on rows k..rows-1.
  std::vector<Vec> reflectors;
  reflectors.reserve(kmax);

  std::size_t steps = 0;
  for (std::size_t k = 0; k < kmax; ++k) {
    // Pivot on the trailing column with largest norm, recomputed for accuracy.
    std::size_t best = k;
    double best_norm = -1.0;
    for (std::size_t j = k; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < rows; ++i) s += work(i, j) * work(i, j);
      if (s > best_norm) {
        best_norm = s;
        best = j;
      }
    }
    if (best_norm <= 0.0) break;
    if (best != k) {
      for (std::size_t i = 0; i < rows; ++i) std::swap(work(i, k), work(i, best));
      std::swap(piv[k], piv[best]);
    }

    double normx = std::sqrt(best_norm);
    Vec v(rows - k);
    for (std::size_t i = k; i < rows; ++i) v[i - k] = work(i, k);
    double sign = v[0] >= 0.0 ? 1.0 : -1.0;
    v[0] += sign * normx;
    double vnorm = norm2(v);
    if (vnorm == 0.0) break;
    for (double& x : v) x /= vnorm;

    for (std::size_t j = k; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < rows; ++i) s += v[i - k] * work(i, j);
      s *= 2.0;
      for (std::size_t i = k; i < rows; ++i) work(i, j) -= s * v[i - k];
    }
    work(k, k) = -sign * normx;
    for (std::size_t i = k + 1; i < rows; ++i) work(i, k) = 0.0;

    reflectors.push_back(std::move(v));
    ++steps;
  }

  double pivot_scale = steps > 0 ? std::fabs(work(0, 0)) : 0.0;
  std::size_t rank = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    if (std::fabs(work(i, i)) > rank_tol * pivot_scale)
      ++rank;
    else
      break;
  }

  QrFactorization f;
  f.rank = rank;
  f.pivot = std::move(piv);
  f.input_rows = rows;
  f.input_cols = cols;

  f.r = DenseMatrix(rank, cols);
  for (std::size_t i = 0; i < rank; ++i)
    for (std::size_t j = 0; j < cols; ++j) f.r(i, j) = work(i, j);

  // q1 column i is Q e_i, obtained by applying reflectors in reverse.
  f.q1 = DenseMatrix(rows, rank);
  Vec col(rows);
  for (std::size_t i = 0; i < rank; ++i) {
    std::fill(col.begin(), col.end(), 0.0);
    col[i] = 1.0;
    for (std::size_t kk = steps; kk-- > 0;) {
      const Vec& v = reflectors[kk];
      double s = 0.0;
      for (std::size_t idx = 0; idx < v.size(); ++idx) s += v[idx] * col[kk + idx];
      s *= 2.0;
      for (std::size_t idx = 0; idx < v.size(); ++idx) col[kk + idx] -= s * v[idx];
    }
    for (std::size_t row = 0; row < rows; ++row) f.q1(row, i) = col[row];
  }
  return f;
}

// v - q1 q1^T v: the projection of v onto the orthogonal complement of the
// column space captured by the factorization.
inline Vec orth_complement_apply(const QrFactorization& f, const Vec& v) {
  if (v.size() != f.input_rows)
    throw Error(ErrorKind::Input, "orth_complement_apply: dimension mismatch");
  Vec w(f.rank, 0.0);
  for (std::size_t i = 0; i < f.input_rows; ++i)
    for (std::size_t j = 0; j < f.rank; ++j) w[j] += f.q1(i, j) * v[i];
  Vec out = v;
  for (std::size_t i = 0; i < f.input_rows; ++i)
    for (std::size_t j = 0; j < f.rank; ++j) out[i] -= f.q1(i, j) * w[j];
  return out;
}

struct LstsqResult {
  Vec x;
  double residual;  // ||h x - rhs||_2
};

// Minimum-norm least squares via a complete orthogonal decomposition: a
// pivoted QR of h followed by a plain QR of the transposed triangular factor.
// Works for any rank, including rank zero (returns the zero vector).
inline LstsqResult lstsq_min_norm(const DenseMatrix& h, const Vec& rhs,
                                  double rank_tol = kDefaultRankTol) {
  if (rhs.size() != h.rows) throw Error(ErrorKind::Input, "lstsq_min_norm: dimension mismatch");

  QrFactorization f = qr_pivoted(h, rank_tol);
  LstsqResult out;
  out.x = Vec(h.cols, 0.0);
  if (f.rank == 0) {
    out.residual = norm2(rhs);
    return out;
  }

  Vec w(f.rank, 0.0);
  for (std::size_t i = 0; i < h.rows; ++i)
    for (std::size_t j = 0; j < f.rank; ++j) w[j] += f.q1(i, j) * rhs[i];

  // Factor r^T = z t (with its own column pivoting) and solve r u = w through
  //   r = p2 t^T z^T  =>  t^T s = p2^T w,  u = z s.
  QrFactorization g = qr_pivoted(transpose(f.r), rank_tol);
  if (g.rank != f.rank)
    throw Error(ErrorKind::Rank, "lstsq_min_norm: inconsistent rank in second factorization");

  Vec wt(f.rank);
  for (std::size_t j = 0; j < f.rank; ++j) wt[j] = w[g.pivot[j]];

  Vec s(f.rank, 0.0);
  for (std::size_t i = 0; i < f.rank; ++i) {
    double acc = wt[i];
    for (std::size_t j = 0; j < i; ++j) acc -= g.r(j, i) * s[j];
    s[i] = acc / g.r(i, i);
  }

  Vec u(h.cols, 0.0);
  for (std::size_t i = 0; i < h.cols; ++i)
    for (std::size_t j = 0; j < f.rank; ++j) u[i] += g.q1(i, j) * s[j];

  for (std::size_t j = 0; j < h.cols; ++j) out.x[f.pivot[j]] = u[j];
  out.residual = norm2(vec_sub(matvec(h, out.x), rhs));
  return out;
}

}  // namespace polyproj
