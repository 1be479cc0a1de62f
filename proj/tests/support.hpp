#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cstddef>

#include "polyproj/polyproj.hpp"

namespace testsupport {

using namespace polyproj;

struct RandomInstance {
  Polytope poly;
  Vec interior;  // strictly feasible point used during generation
};

// Random nonempty polytope: inequalities are slackened at a random interior
// point, equalities pass through it. Full row rank of the equalities holds
// with probability one for l < n.
inline RandomInstance gen_random_polytope(Rng& rng, std::size_t n, std::size_t m, std::size_t l) {
  Vec z(n);
  for (double& v : z) v = rng.uniform(-0.5, 0.5);

  DenseMatrix A(m, n);
  Vec a(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      A(i, j) = rng.normal();
      s += A(i, j) * z[j];
    }
    a[i] = s + rng.uniform(0.05, 1.0);
  }

  DenseMatrix B(l, n);
  Vec b(l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      B(i, j) = rng.normal();
      s += B(i, j) * z[j];
    }
    b[i] = s;
  }

  RandomInstance inst{make_polytope(std::move(A), std::move(a), std::move(B), std::move(b)),
                      std::move(z)};
  return inst;
}

// Strict complementarity with margins plus linear independence of the active
// normals. Points that pass have a locally stable active set, so finite
// differences of the projection are safe at steps well below `margin`.
inline bool strict_complementarity(const Polytope& p, const ProjectionResult& res,
                                   double margin = 1e-3) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.A.rows; ++i) {
    double slack = p.a[i];
    for (std::size_t j = 0; j < p.n; ++j) slack -= p.A(i, j) * res.y[j];
    bool active = k < res.active.size() && res.active[k] == i;
    if (active) {
      ++k;
      if (res.lambda[i] < margin) return false;
    } else {
      if (slack < margin) return false;
    }
  }
  HsFactor f = hs_element(p, res);
  return f.rank == res.active.size() + p.B.rows;
}

}  // namespace testsupport
