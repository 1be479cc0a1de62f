#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "polyproj/active_set.hpp"
#include "polyproj/errors.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/qr.hpp"

namespace polyproj {

// Shortest exact decimal form: 17 significant digits round-trip for doubles.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

// The feasible set {y : A y <= a, B y = b}. Instances are built through the
// factory functions below, which validate shapes, require B to have full row
// rank, and certify nonemptiness by solving one projection; `witness` stores
// the feasible point found by that solve.
struct Polytope {
  std::size_t n = 0;
  DenseMatrix A;  // m x n
  Vec a;
  DenseMatrix B;  // l x n
  Vec b;
  Vec witness;
  std::vector<std::size_t> eq_rows_kept;  // original equality rows retained by
                                          // reduction; empty when untouched

  std::size_t dim() const { return n; }
  std::size_t ineq_count() const { return A.rows; }
  std::size_t eq_count() const { return B.rows; }
};

struct ViolationReport {
  double v_ineq = 0.0;  // squared 2-norm of max(A y - a, 0)
  double v_eq = 0.0;    // squared 2-norm of B y - b
  double v_all = 0.0;   // max of the two
};

inline ViolationReport feasibility_violation(const Polytope& p, const Vec& y) {
  if (y.size() != p.n) throw Error(ErrorKind::Input, "feasibility_violation: dimension mismatch");
  ViolationReport rep;
  for (std::size_t i = 0; i < p.A.rows; ++i) {
    double s = -p.a[i];
    for (std::size_t j = 0; j < p.n; ++j) s += p.A(i, j) * y[j];
    if (s > 0.0) rep.v_ineq += s * s;
  }
  for (std::size_t i = 0; i < p.B.rows; ++i) {
    double s = -p.b[i];
    for (std::size_t j = 0; j < p.n; ++j) s += p.B(i, j) * y[j];
    rep.v_eq += s * s;
  }
  rep.v_all = std::max(rep.v_ineq, rep.v_eq);
  return rep;
}

inline bool contains(const Polytope& p, const Vec& y, double tol = 1e-9) {
  if (y.size() != p.n) throw Error(ErrorKind::Input, "contains: dimension mismatch");
  for (std::size_t i = 0; i < p.A.rows; ++i) {
    double s = -p.a[i];
    for (std::size_t j = 0; j < p.n; ++j) s += p.A(i, j) * y[j];
    if (s > tol) return false;
  }
  for (std::size_t i = 0; i < p.B.rows; ++i) {
    double s = -p.b[i];
    for (std::size_t j = 0; j < p.n; ++j) s += p.B(i, j) * y[j];
    if (std::fabs(s) > tol) return false;
  }
  return true;
}

inline Polytope make_polytope(DenseMatrix A, Vec a, DenseMatrix B, Vec b) {
  const std::size_t m = A.rows;
  const std::size_t l = B.rows;
  if (A.rows != a.size() || B.rows != b.size())
    throw Error(ErrorKind::Input, "make_polytope: right hand side length mismatch");
  std::size_t n = m > 0 ? A.cols : B.cols;
  if (n == 0) throw Error(ErrorKind::Input, "make_polytope: no constraints define the dimension");
  if ((m > 0 && A.cols != n) || (l > 0 && B.cols != n))
    throw Error(ErrorKind::Input, "make_polytope: inconsistent dimensions");
  require_finite(a, "make_polytope: a");
  require_finite(b, "make_polytope: b");

  if (l > 0) {
    QrFactorization f = qr_pivoted(transpose(B));
    if (f.rank < l)
      throw Error(ErrorKind::Rank, "make_polytope: equality rows are not of full row rank");
  }

  Polytope p;
  p.n = n;
  p.A = std::move(A);
  p.a = std::move(a);
  p.B = std::move(B);
  p.b = std::move(b);

  QpSolution cert = solve_projection_qp(p.A, p.a, p.B, p.b, Vec(n, 0.0));
  p.witness = cert.y;
  return p;
}

struct ReducedEqualities {
  DenseMatrix B;
  Vec b;
  std::vector<std::size_t> kept;
};

// Keeps a maximal independent subset of equality rows (chosen by pivoted QR)
// and verifies the dropped rows are implied; inconsistent dropped rows mean
// the equality system is infeasible.
inline ReducedEqualities drop_redundant_equalities(const DenseMatrix& B, const Vec& b,
                                                   double tol = kDefaultRankTol) {
  if (B.rows != b.size())
    throw Error(ErrorKind::Input, "drop_redundant_equalities: right hand side length mismatch");
  ReducedEqualities out;
  if (B.rows == 0) {
    out.B = B;
    out.b = b;
    return out;
  }

  QrFactorization f = qr_pivoted(transpose(B), tol);
  out.kept.assign(f.pivot.begin(), f.pivot.begin() + static_cast<std::ptrdiff_t>(f.rank));
  std::sort(out.kept.begin(), out.kept.end());

  out.B = DenseMatrix(f.rank, B.cols);
  out.b = Vec(f.rank);
  for (std::size_t i = 0; i < f.rank; ++i) {
    for (std::size_t j = 0; j < B.cols; ++j) out.B(i, j) = B(out.kept[i], j);
    out.b[i] = b[out.kept[i]];
  }

  AffineProjection sol = project_affine(out.B, out.b, Vec(B.cols, 0.0));
  Vec full_resid = vec_sub(matvec(B, sol.y), b);
  if (norm_inf(full_resid) > tol * (1.0 + norm_inf(b)))
    throw Error(ErrorKind::Infeasible,
                "drop_redundant_equalities: dependent rows contradict the kept rows");
  return out;
}

// Probability simplex {w : w >= 0, sum w = 1}.
inline Polytope make_simplex(std::size_t n) {
  if (n == 0) throw Error(ErrorKind::Input, "make_simplex: n must be positive");
  DenseMatrix A(n, n);
  for (std::size_t i = 0; i < n; ++i) A(i, i) = -1.0;
  DenseMatrix B(1, n);
  for (std::size_t j = 0; j < n; ++j) B(0, j) = 1.0;
  return make_polytope(std::move(A), Vec(n, 0.0), std::move(B), {1.0});
}

// Long-only portfolio: weights sum to one, are nonnegative, and the assets in
// `group` (0-based) must jointly receive at least `floor_weight`.
inline Polytope make_portfolio(std::size_t n, const std::vector<std::size_t>& group,
                               double floor_weight) {
  if (n == 0) throw Error(ErrorKind::Input, "make_portfolio: n must be positive");
  if (floor_weight < 0.0)
    throw Error(ErrorKind::Input, "make_portfolio: group floor must be nonnegative");
  std::vector<std::size_t> idx = group;
  std::sort(idx.begin(), idx.end());
  if (std::adjacent_find(idx.begin(), idx.end()) != idx.end())
    throw Error(ErrorKind::Input, "make_portfolio: duplicate group index");
  if (!idx.empty() && idx.back() >= n)
    throw Error(ErrorKind::Input, "make_portfolio: group index out of range");

  bool group_row = !idx.empty() || floor_weight > 0.0;
  std::size_t m = n + (group_row ? 1 : 0);
  DenseMatrix A(m, n);
  Vec a(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) A(i, i) = -1.0;
  if (group_row) {
    for (std::size_t j : idx) A(n, j) = -1.0;
    a[n] = -floor_weight;
  }
  DenseMatrix B(1, n);
  for (std::size_t j = 0; j < n; ++j) B(0, j) = 1.0;
  return make_polytope(std::move(A), std::move(a), std::move(B), {1.0});
}

// Partial matchings of a d1 x d2 bipartite graph, row-major vectorization:
// row sums <= 1, column sums <= 1, total mass <= alpha, entries >= 0.
inline Polytope make_matching(std::size_t d1, std::size_t d2, double alpha) {
  if (d1 == 0 || d2 == 0) throw Error(ErrorKind::Input, "make_matching: sides must be positive");
  // alpha = 0 is allowed: the set degenerates to the single point X = 0
  if (alpha < 0.0) throw Error(ErrorKind::Input, "make_matching: alpha must be nonnegative");
  std::size_t n = d1 * d2;
  std::size_t m = d1 + d2 + 1 + n;
  DenseMatrix A(m, n);
  Vec a(m, 0.0);
  for (std::size_t i = 0; i < d1; ++i) {
    for (std::size_t j = 0; j < d2; ++j) A(i, i * d2 + j) = 1.0;
    a[i] = 1.0;
  }
  for (std::size_t j = 0; j < d2; ++j) {
    for (std::size_t i = 0; i < d1; ++i) A(d1 + j, i * d2 + j) = 1.0;
    a[d1 + j] = 1.0;
  }
  for (std::size_t k = 0; k < n; ++k) A(d1 + d2, k) = 1.0;
  a[d1 + d2] = alpha;
  for (std::size_t k = 0; k < n; ++k) A(d1 + d2 + 1 + k, k) = -1.0;
  return make_polytope(std::move(A), std::move(a), DenseMatrix(0, n), {});
}

// Doubly stochastic c x c matrices, row-major vectorization. The 2c row/column
// sum equalities have one dependency, so the stored system keeps 2c - 1 rows.
inline Polytope make_birkhoff(std::size_t c) {
  if (c == 0) throw Error(ErrorKind::Input, "make_birkhoff: c must be positive");
  std::size_t n = c * c;
  DenseMatrix Bfull(2 * c, n);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) Bfull(i, i * c + j) = 1.0;
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < c; ++i) Bfull(c + j, i * c + j) = 1.0;
  ReducedEqualities red = drop_redundant_equalities(Bfull, Vec(2 * c, 1.0));

  DenseMatrix A(n, n);
  for (std::size_t k = 0; k < n; ++k) A(k, k) = -1.0;
  Polytope p = make_polytope(std::move(A), Vec(n, 0.0), std::move(red.B), std::move(red.b));
  p.eq_rows_kept = std::move(red.kept);
  return p;
}

inline void write_polytope(const Polytope& p, std::ostream& os) {
  os << "polytope v1\n" << p.n << " " << p.A.rows << " " << p.B.rows << "\n";
  for (std::size_t i = 0; i < p.A.rows; ++i) {
    for (std::size_t j = 0; j < p.n; ++j) os << (j ? " " : "") << format_double(p.A(i, j));
    os << "\n";
  }
  if (p.A.rows > 0) {
    for (std::size_t i = 0; i < p.A.rows; ++i) os << (i ? " " : "") << format_double(p.a[i]);
    os << "\n";
  }
  for (std::size_t i = 0; i < p.B.rows; ++i) {
    for (std::size_t j = 0; j < p.n; ++j) os << (j ? " " : "") << format_double(p.B(i, j));
    os << "\n";
  }
  if (p.B.rows > 0) {
    for (std::size_t i = 0; i < p.B.rows; ++i) os << (i ? " " : "") << format_double(p.b[i]);
    os << "\n";
  }
}

// Reads the text format emitted by write_polytope and revalidates everything,
// including the nonemptiness certificate.
inline Polytope read_polytope(std::istream& is) {
  std::string word, version;
  if (!(is >> word >> version) || word != "polytope" || version != "v1")
    throw Error(ErrorKind::Input, "read_polytope: bad header");
  long long n = 0, m = 0, l = 0;
  if (!(is >> n >> m >> l) || n < 0 || m < 0 || l < 0)
    throw Error(ErrorKind::Input, "read_polytope: bad dimensions");

  auto read_vec = [&](std::size_t count, const char* what) {
    Vec v(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (!(is >> v[i]))
        throw Error(ErrorKind::Input, std::string("read_polytope: truncated ") + what);
    }
    return v;
  };

  std::size_t un = static_cast<std::size_t>(n);
  std::size_t um = static_cast<std::size_t>(m);
  std::size_t ul = static_cast<std::size_t>(l);
  DenseMatrix A(um, un, read_vec(um * un, "inequality matrix"));
  Vec a = read_vec(um, "inequality bounds");
  DenseMatrix B(ul, un, read_vec(ul * un, "equality matrix"));
  Vec b = read_vec(ul, "equality values");
  return make_polytope(std::move(A), std::move(a), std::move(B), std::move(b));
}

}  // namespace polyproj
