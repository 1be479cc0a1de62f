#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "polyproj/qr.hpp"
#include "polyproj/rng.hpp"

using namespace polyproj;
using Catch::Approx;

TEST_CASE("qr_pivoted identity") {
  QrFactorization f = qr_pivoted(identity_matrix(2));
  REQUIRE(f.rank == 2);
}

TEST_CASE("qr_pivoted single column") {
  DenseMatrix h(2, 1, {1.0, 2.0});
  QrFactorization f = qr_pivoted(h);
  REQUIRE(f.rank == 1);
  double s = std::sqrt(5.0);
  // q1 is the normalized column up to sign
  double sign = f.q1(0, 0) > 0 ? 1.0 : -1.0;
  REQUIRE(f.q1(0, 0) == Approx(sign * 1.0 / s).margin(1e-14));
  REQUIRE(f.q1(1, 0) == Approx(sign * 2.0 / s).margin(1e-14));
}

TEST_CASE("qr_pivoted duplicated columns have rank 1") {
  DenseMatrix h(3, 2, {1.0, 1.0, 2.0, 2.0, -1.0, -1.0});
  QrFactorization f = qr_pivoted(h);
  REQUIRE(f.rank == 1);
}

TEST_CASE("qr_pivoted zero matrix has rank 0") {
  DenseMatrix h(3, 2);
  QrFactorization f = qr_pivoted(h);
  REQUIRE(f.rank == 0);
  REQUIRE(f.q1.cols == 0);
}

TEST_CASE("orth_complement_apply removes the column space component") {
  DenseMatrix h(2, 1, {1.0, 2.0});
  QrFactorization f = qr_pivoted(h);
  Vec z = orth_complement_apply(f, {1.0, 0.0});
  REQUIRE(z[0] == Approx(0.8).margin(1e-14));
  REQUIRE(z[1] == Approx(-0.4).margin(1e-14));
}

TEST_CASE("lstsq_min_norm overdetermined column") {
  DenseMatrix h(2, 1, {1.0, 2.0});
  LstsqResult r = lstsq_min_norm(h, {1.0, 0.0});
  REQUIRE(r.x[0] == Approx(0.2).margin(1e-14));
  REQUIRE(r.residual == Approx(std::sqrt(0.8)).margin(1e-12));
}

TEST_CASE("lstsq_min_norm picks the minimum norm solution") {
  DenseMatrix h(1, 2, {1.0, 1.0});
  LstsqResult r = lstsq_min_norm(h, {2.0});
  REQUIRE(r.x[0] == Approx(1.0).margin(1e-13));
  REQUIRE(r.x[1] == Approx(1.0).margin(1e-13));
  REQUIRE(r.residual == Approx(0.0).margin(1e-13));
}

TEST_CASE("qr_pivoted reconstruction and orthonormality on random matrices") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t rows = 1 + rng.integer(10);
    std::size_t cols = 1 + rng.integer(10);
    DenseMatrix h(rows, cols);
    for (double& x : h.data) x = rng.normal();
    QrFactorization f = qr_pivoted(h);

    // q1^T q1 = I
    for (std::size_t i = 0; i < f.rank; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < rows; ++k) s += f.q1(k, i) * f.q1(k, j);
        REQUIRE(s == Approx(i == j ? 1.0 : 0.0).margin(1e-12));
      }

    // columns reconstruct through the pivot map
    double scale = frobenius_norm(h) + 1e-30;
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t i = 0; i < rows; ++i) {
        double rec = 0.0;
        for (std::size_t k = 0; k < f.rank; ++k) rec += f.q1(i, k) * f.r(k, j);
        REQUIRE(std::fabs(rec - h(i, f.pivot[j])) / scale < 1e-10);
      }
    }

    // complement + range components add back to the input vector
    Vec v(rows);
    for (double& x : v) x = rng.normal();
    Vec z = orth_complement_apply(f, v);
    Vec proj(f.rank, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < f.rank; ++k) proj[k] += f.q1(i, k) * v[i];
    for (std::size_t i = 0; i < rows; ++i) {
      double back = z[i];
      for (std::size_t k = 0; k < f.rank; ++k) back += f.q1(i, k) * proj[k];
      REQUIRE(back == Approx(v[i]).margin(1e-11));
    }
  }
}

TEST_CASE("qr_pivoted recovers the rank of random low rank products") {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t n = 4 + rng.integer(9);
    std::size_t k = 1 + rng.integer(std::min<std::size_t>(n, 8));
    DenseMatrix u(n, k), v(n, k);
    for (double& x : u.data) x = rng.normal();
    for (double& x : v.data) x = rng.normal();
    DenseMatrix h = matmul(u, transpose(v));
    QrFactorization f = qr_pivoted(h);
    REQUIRE(f.rank == k);
  }
}

TEST_CASE("lstsq_min_norm agrees with normal equations when full column rank") {
  Rng rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t rows = 6 + rng.integer(6);
    std::size_t cols = 1 + rng.integer(5);
    DenseMatrix h(rows, cols);
    for (double& x : h.data) x = rng.normal();
    Vec rhs(rows);
    for (double& x : rhs) x = rng.normal();

    LstsqResult r = lstsq_min_norm(h, rhs);

    // residual must be orthogonal to the columns of h
    Vec resid = vec_sub(matvec(h, r.x), rhs);
    Vec ht_res = matvec_transposed(h, resid);
    REQUIRE(norm_inf(ht_res) < 1e-9);
  }
}

TEST_CASE("lstsq_min_norm dimension mismatch is rejected") {
  DenseMatrix h(2, 1, {1.0, 2.0});
  REQUIRE_THROWS_AS(lstsq_min_norm(h, {1.0, 0.0, 3.0}), Error);
}
