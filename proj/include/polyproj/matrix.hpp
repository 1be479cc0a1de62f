#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "polyproj/errors.hpp"

namespace polyproj {

using Vec = std::vector<double>;

inline bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void require_finite(const Vec& v, const char* what) {
  if (!all_finite(v)) throw Error(ErrorKind::Input, std::string(what) + ": non-finite entry");
}

// Dense row-major matrix sized for desk-scale problems. Storage is a plain
// std::vector<double>; all kernels that operate on it are simple loops.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  DenseMatrix() = default;

  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  DenseMatrix(std::size_t r, std::size_t c, Vec entries)
      : rows(r), cols(c), data(std::move(entries)) {
    if (data.size() != rows * cols)
      throw Error(ErrorKind::Input, "matrix: entry count does not match shape");
    require_finite(data, "matrix");
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }
  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
};

inline DenseMatrix identity_matrix(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

inline DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

inline Vec matvec(const DenseMatrix& m, const Vec& x) {
  if (x.size() != m.cols) throw Error(ErrorKind::Input, "matvec: dimension mismatch");
  Vec y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

// y = m^T x without forming the transpose.
inline Vec matvec_transposed(const DenseMatrix& m, const Vec& x) {
  if (x.size() != m.rows) throw Error(ErrorKind::Input, "matvec_transposed: dimension mismatch");
  Vec y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.row_ptr(i);
    for (std::size_t j = 0; j < m.cols; ++j) y[j] += row[j] * x[i];
  }
  return y;
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows) throw Error(ErrorKind::Input, "matmul: dimension mismatch");
  DenseMatrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline double dot(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline double norm_inf(const Vec& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v));
  return m;
}

inline Vec vec_sub(const Vec& x, const Vec& y) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
  return r;
}

inline Vec vec_add(const Vec& x, const Vec& y) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + y[i];
  return r;
}

inline Vec vec_scale(double c, const Vec& x) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = c * x[i];
  return r;
}

// x += c * y
inline void axpy(double c, const Vec& y, Vec& x) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += c * y[i];
}

inline double frobenius_norm(const DenseMatrix& m) { return norm2(m.data); }

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    d = std::max(d, std::fabs(a.data[i] - b.data[i]));
  return d;
}

}  // namespace polyproj
