#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "polyproj/adam.hpp"
#include "polyproj/errors.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/polytope.hpp"
#include "polyproj/rng.hpp"
#include "polyproj/tape.hpp"

namespace polyproj {

// Synthetic daily returns: a zero-mean AR(1) per asset with a common factor
// that induces cross-sectional correlation. Row t holds the n asset returns
// of period t.
inline DenseMatrix gen_portfolio_data(std::size_t n_assets, std::size_t periods,
                                      std::uint64_t seed) {
  if (n_assets == 0 || periods == 0)
    throw Error(ErrorKind::Input, "gen_portfolio_data: empty shape");
  const double phi = 0.3;     // AR(1) coefficient
  const double sigma = 0.02;  // innovation scale
  const double rho = 0.4;     // share of factor variance

  Rng rng(seed);
  DenseMatrix data(periods, n_assets);
  Vec prev(n_assets, 0.0);
  double stationary = 1.0 / std::sqrt(1.0 - phi * phi);
  for (std::size_t t = 0; t < periods; ++t) {
    double factor = rng.normal();
    for (std::size_t j = 0; j < n_assets; ++j) {
      double shock = sigma * (std::sqrt(rho) * factor + std::sqrt(1.0 - rho) * rng.normal());
      double r = t == 0 ? stationary * shock : phi * prev[j] + shock;
      data(t, j) = r;
      prev[j] = r;
    }
  }
  return data;
}

struct NetSpec {
  std::size_t hidden = 32;
};

// Portfolio allocation: an MLP reads a window of past returns and emits both
// predicted next-window mean returns (trained by squared error) and weights
// that are projected onto the long-only budget set before a Sharpe term.
struct PortfolioTask {
  std::size_t n_assets = 0;
  std::size_t window = 0;
  DenseMatrix data;  // periods x n_assets
  std::shared_ptr<const Polytope> poly;
  double risk_free = 0.03;
  double loss_weight = 1.0;
  std::uint64_t seed = 0;

  std::size_t sample_count() const { return data.rows - 2 * window + 1; }
  std::size_t input_dim() const { return window * n_assets; }
};

inline PortfolioTask make_portfolio_task(std::size_t n_assets, std::size_t window,
                                         std::size_t periods,
                                         const std::vector<std::size_t>& group,
                                         double floor_weight, std::uint64_t seed,
                                         double risk_free = 0.03, double loss_weight = 1.0) {
  if (window < 2) throw Error(ErrorKind::Input, "make_portfolio_task: window must be >= 2");
  if (periods < 2 * window)
    throw Error(ErrorKind::Input, "make_portfolio_task: periods must cover two windows");
  PortfolioTask task;
  task.n_assets = n_assets;
  task.window = window;
  task.data = gen_portfolio_data(n_assets, periods, seed);
  task.poly = std::make_shared<const Polytope>(make_portfolio(n_assets, group, floor_weight));
  task.risk_free = risk_free;
  task.loss_weight = loss_weight;
  task.seed = seed;
  return task;
}

namespace detail {

inline void append_layer_init(Vec& theta, std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < fan_out * fan_in; ++i) theta.push_back(rng.uniform(-s, s));
  for (std::size_t i = 0; i < fan_out; ++i) theta.push_back(0.0);
}

}  // namespace detail

inline Vec portfolio_init(const PortfolioTask& task, const NetSpec& net) {
  Rng rng(task.seed + 1);
  Vec theta;
  detail::append_layer_init(theta, net.hidden, task.input_dim(), rng);
  detail::append_layer_init(theta, task.n_assets, net.hidden, rng);
  detail::append_layer_init(theta, task.n_assets, net.hidden, rng);
  return theta;
}

inline Tape portfolio_tape(const PortfolioTask& task, const NetSpec& net, std::size_t sample) {
  if (sample >= task.sample_count())
    throw Error(ErrorKind::Input, "portfolio_tape: sample out of range");
  const std::size_t n = task.n_assets;
  const std::size_t w = task.window;
  const std::size_t in_dim = task.input_dim();

  Tape tape;
  int w1 = tape.parameter(Vec(net.hidden * in_dim, 0.0));
  int b1 = tape.parameter(Vec(net.hidden, 0.0));
  int w2w = tape.parameter(Vec(n * net.hidden, 0.0));
  int b2w = tape.parameter(Vec(n, 0.0));
  int w2r = tape.parameter(Vec(n * net.hidden, 0.0));
  int b2r = tape.parameter(Vec(n, 0.0));

  Vec window_flat(task.data.data.begin() + static_cast<std::ptrdiff_t>(sample * n),
                  task.data.data.begin() + static_cast<std::ptrdiff_t>((sample + w) * n));
  Vec future_flat(task.data.data.begin() + static_cast<std::ptrdiff_t>((sample + w) * n),
                  task.data.data.begin() + static_cast<std::ptrdiff_t>((sample + 2 * w) * n));
  Vec future_mean(n, 0.0);
  for (std::size_t t = 0; t < w; ++t)
    for (std::size_t j = 0; j < n; ++j) future_mean[j] += future_flat[t * n + j];
  for (double& v : future_mean) v /= static_cast<double>(w);

  int x = tape.constant(std::move(window_flat));
  int hidden = tape.tanh(tape.affine(w1, x, b1, net.hidden, in_dim));
  int weights = tape.projection(tape.affine(w2w, hidden, b2w, n, net.hidden), task.poly);
  int pred = tape.affine(w2r, hidden, b2r, n, net.hidden);
  int mse = tape.mse_loss(pred, tape.constant(future_mean));

  // realized portfolio returns over the future window and their Sharpe ratio
  int rp = tape.affine(tape.constant(std::move(future_flat)), weights, -1, w, n);
  int mean_rp = tape.mean(rp);
  DenseMatrix center(w, w);
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < w; ++j)
      center(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(w);
  int dev = tape.affine(tape.constant(center.data), rp, -1, w, w);
  int sd = tape.sqrt(tape.mean(tape.square(dev)));
  int sharpe = tape.div(tape.add(mean_rp, tape.constant({-task.risk_free})), sd);

  int weighted_mse = tape.mul(tape.constant({task.loss_weight}), mse);
  tape.add(weighted_mse, tape.mul(tape.constant({-1.0}), sharpe));
  return tape;
}

inline std::pair<Trace, Vec> train_portfolio(const PortfolioTask& task, const NetSpec& net,
                                             const AdamConfig& cfg, const TrainOptions& opt) {
  auto factory = [&task, &net](std::size_t sample) { return portfolio_tape(task, net, sample); };
  return train_with_params(factory, task.sample_count(), portfolio_init(task, net), cfg, opt);
}

// Partial matching recovery: node features on both sides of a bipartite graph
// are correlated exactly for the ground-truth pairs; an MLP scores all pairs
// and the scores are projected onto the matching polytope before a binary
// cross entropy against the ground-truth matrix.
struct MatchingTask {
  std::size_t d1 = 0;
  std::size_t d2 = 0;
  std::size_t match_count = 0;
  std::size_t feature_dim = 0;
  DenseMatrix features;  // samples x (d1 + d2) feature_dim
  Vec ground_truth;      // d1 x d2 row-major 0/1 matrix
  std::shared_ptr<const Polytope> poly;
  std::uint64_t seed = 0;

  std::size_t sample_count() const { return features.rows; }
  std::size_t input_dim() const { return (d1 + d2) * feature_dim; }
};

inline MatchingTask make_matching_task(std::size_t d1, std::size_t d2, std::size_t match_count,
                                       std::size_t feature_dim, std::size_t samples,
                                       std::uint64_t seed) {
  if (match_count == 0 || match_count > std::min(d1, d2))
    throw Error(ErrorKind::Input, "make_matching_task: bad match count");
  if (feature_dim == 0 || samples == 0)
    throw Error(ErrorKind::Input, "make_matching_task: empty shape");

  MatchingTask task;
  task.d1 = d1;
  task.d2 = d2;
  task.match_count = match_count;
  task.feature_dim = feature_dim;
  task.seed = seed;
  // the total-mass bound equals the ground-truth matching size
  task.poly = std::make_shared<const Polytope>(
      make_matching(d1, d2, static_cast<double>(match_count)));

  Rng rng(seed);
  auto shuffled = [&rng](std::size_t count) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    for (std::size_t i = count; i > 1; --i) std::swap(idx[i - 1], idx[rng.integer(i)]);
    return idx;
  };
  std::vector<std::size_t> rows = shuffled(d1);
  std::vector<std::size_t> cols = shuffled(d2);
  task.ground_truth = Vec(d1 * d2, 0.0);
  std::vector<std::size_t> col_to_row(d2, d1);  // d1 marks unmatched columns
  for (std::size_t k = 0; k < match_count; ++k) {
    task.ground_truth[rows[k] * d2 + cols[k]] = 1.0;
    col_to_row[cols[k]] = rows[k];
  }

  task.features = DenseMatrix(samples, task.input_dim());
  for (std::size_t s = 0; s < samples; ++s) {
    double* row = task.features.row_ptr(s);
    for (std::size_t i = 0; i < d1 * feature_dim; ++i) row[i] = rng.normal();
    for (std::size_t j = 0; j < d2; ++j) {
      double* f2 = row + d1 * feature_dim + j * feature_dim;
      if (col_to_row[j] < d1) {
        const double* f1 = row + col_to_row[j] * feature_dim;
        for (std::size_t k = 0; k < feature_dim; ++k) f2[k] = f1[k] + 0.1 * rng.normal();
      } else {
        for (std::size_t k = 0; k < feature_dim; ++k) f2[k] = rng.normal();
      }
    }
  }
  return task;
}

inline Vec matching_init(const MatchingTask& task, const NetSpec& net) {
  Rng rng(task.seed + 1);
  Vec theta;
  detail::append_layer_init(theta, net.hidden, task.input_dim(), rng);
  detail::append_layer_init(theta, task.d1 * task.d2, net.hidden, rng);
  return theta;
}

inline Tape matching_tape(const MatchingTask& task, const NetSpec& net, std::size_t sample) {
  if (sample >= task.sample_count())
    throw Error(ErrorKind::Input, "matching_tape: sample out of range");
  const std::size_t out = task.d1 * task.d2;
  const std::size_t in_dim = task.input_dim();

  Tape tape;
  int w1 = tape.parameter(Vec(net.hidden * in_dim, 0.0));
  int b1 = tape.parameter(Vec(net.hidden, 0.0));
  int w2 = tape.parameter(Vec(out * net.hidden, 0.0));
  int b2 = tape.parameter(Vec(out, 0.0));

  Vec input(task.features.row_ptr(sample), task.features.row_ptr(sample) + in_dim);
  int x = tape.constant(std::move(input));
  int hidden = tape.tanh(tape.affine(w1, x, b1, net.hidden, in_dim));
  int scores = tape.affine(w2, hidden, b2, out, net.hidden);
  int matched = tape.projection(scores, task.poly);
  tape.bce_loss(matched, tape.constant(task.ground_truth));
  return tape;
}

inline std::pair<Trace, Vec> train_matching(const MatchingTask& task, const NetSpec& net,
                                            const AdamConfig& cfg, const TrainOptions& opt) {
  auto factory = [&task, &net](std::size_t sample) { return matching_tape(task, net, sample); };
  return train_with_params(factory, task.sample_count(), matching_init(task, net), cfg, opt);
}

struct SinkhornConfig {
  std::size_t iterations = 20;
  double entry_floor = 1e-30;  // guards the normalizing divisions
};

// Alternating row and column normalization toward a doubly stochastic matrix.
// Entries are floored before the sweeps; negative inputs are rejected.
inline DenseMatrix sinkhorn(const DenseMatrix& m, const SinkhornConfig& cfg = {}) {
  if (m.rows != m.cols || m.rows == 0)
    throw Error(ErrorKind::Input, "sinkhorn: matrix must be square and nonempty");
  DenseMatrix x = m;
  for (double& v : x.data) {
    if (v < 0.0) throw Error(ErrorKind::Input, "sinkhorn: negative entry");
    if (v < cfg.entry_floor) v = cfg.entry_floor;
  }
  const std::size_t c = x.rows;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t i = 0; i < c; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += x(i, j);
      for (std::size_t j = 0; j < c; ++j) x(i, j) /= s;
    }
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < c; ++i) s += x(i, j);
      for (std::size_t i = 0; i < c; ++i) x(i, j) /= s;
    }
  }
  return x;
}

struct BirkhoffComparison {
  std::size_t c = 0;
  std::vector<std::size_t> sinkhorn_iters;
  struct TrialRow {
    double projection_v_all = 0.0;
    std::vector<double> sinkhorn_v_all;
  };
  std::vector<TrialRow> trials;
  double projection_median = 0.0;
  std::vector<double> sinkhorn_medians;
  std::vector<double> projection_win_rate;  // per iteration count
};

namespace detail {

inline double median(Vec values) {
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

// Feasibility comparison on random positive matrices: exact projection onto
// the Birkhoff polytope versus truncated Sinkhorn normalization, both scored
// by the same violation measure. Entries are log-normal: the wide dynamic
// range keeps a 20-30 sweep Sinkhorn run visibly truncated, matching the
// near-boundary iterates the baseline faces in training, whereas near-uniform
// draws let it converge to machine precision and make the comparison vacuous.
// Each matrix is normalized by its largest entry; Sinkhorn is invariant to
// the global scale and the projection solve stays well conditioned.
inline BirkhoffComparison compare_birkhoff(std::size_t c, std::size_t n_trials,
                                           const std::vector<std::size_t>& sinkhorn_iters,
                                           std::uint64_t seed) {
  if (n_trials == 0) throw Error(ErrorKind::Input, "compare_birkhoff: need at least one trial");
  if (sinkhorn_iters.empty())
    throw Error(ErrorKind::Input, "compare_birkhoff: need at least one iteration count");

  Polytope poly = make_birkhoff(c);
  Rng rng(seed);
  BirkhoffComparison cmp;
  cmp.c = c;
  cmp.sinkhorn_iters = sinkhorn_iters;

  Vec proj_values;
  std::vector<Vec> sink_values(sinkhorn_iters.size());
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    DenseMatrix m(c, c);
    for (double& v : m.data) v = std::exp(3.0 * rng.normal());
    double top = *std::max_element(m.data.begin(), m.data.end());
    for (double& v : m.data) v /= top;

    BirkhoffComparison::TrialRow row;
    ProjectionResult res = project(poly, m.data);
    row.projection_v_all = feasibility_violation(poly, res.y).v_all;
    proj_values.push_back(row.projection_v_all);

    for (std::size_t k = 0; k < sinkhorn_iters.size(); ++k) {
      SinkhornConfig scfg;
      scfg.iterations = sinkhorn_iters[k];
      DenseMatrix s = sinkhorn(m, scfg);
      double v = feasibility_violation(poly, s.data).v_all;
      row.sinkhorn_v_all.push_back(v);
      sink_values[k].push_back(v);
    }
    cmp.trials.push_back(std::move(row));
  }

  cmp.projection_median = detail::median(proj_values);
  for (std::size_t k = 0; k < sinkhorn_iters.size(); ++k) {
    cmp.sinkhorn_medians.push_back(detail::median(sink_values[k]));
    std::size_t wins = 0;
    for (const auto& row : cmp.trials)
      if (row.projection_v_all < row.sinkhorn_v_all[k]) ++wins;
    cmp.projection_win_rate.push_back(static_cast<double>(wins) /
                                      static_cast<double>(n_trials));
  }
  return cmp;
}

// Named sets used by the command line tools and the conservativity probes.
inline Polytope make_named_polytope(const std::string& name) {
  if (name == "example1") {
    // {y : y1 + y2 = 1, y1 >= 0.3}
    return make_polytope(DenseMatrix(1, 2, {-1.0, 0.0}), {-0.3}, DenseMatrix(1, 2, {1.0, 1.0}),
                         {1.0});
  }
  if (name == "simplex8") return make_simplex(8);
  if (name == "birkhoff4") return make_birkhoff(4);
  if (name == "matching3") return make_matching(3, 3, 2.0);
  throw Error(ErrorKind::Input, "unknown polytope name: " + name);
}

// Short random segment near the set: both the offset of the start point and
// the segment length scale with `spread` and `length`. Short segments keep
// the trapezoid quadrature error of the path integral well below the active
// set switching scale while still crossing cell boundaries regularly.
inline std::pair<Vec, Vec> random_segment(const Polytope& p, Rng& rng, double spread = 0.5,
                                          double length = 0.1) {
  Vec x0 = p.witness;
  for (std::size_t i = 0; i < p.n; ++i) x0[i] += spread * rng.uniform(-1.0, 1.0);
  Vec dir(p.n);
  for (double& v : dir) v = rng.normal();
  double nrm = norm2(dir);
  if (nrm == 0.0) dir[0] = nrm = 1.0;
  Vec x1 = x0;
  axpy(length / nrm, dir, x1);
  return {std::move(x0), std::move(x1)};
}

// Builds the tape and start parameters used by the gradient check command.
struct GradcheckSetup {
  Tape tape;
  Vec theta;
};

inline GradcheckSetup gradcheck_setup(const std::string& task, std::uint64_t seed) {
  if (task == "example") {
    auto poly = std::make_shared<const Polytope>(make_named_polytope("example1"));
    Tape tape;
    Rng rng(seed);
    Vec theta;
    for (std::size_t i = 0; i < 6; ++i) theta.push_back(rng.uniform(-1.0, 1.0));
    int w = tape.parameter(Vec(4, 0.0));
    int beta = tape.parameter(Vec(2, 0.0));
    int x = tape.constant({0.3, -0.4});
    int u = tape.affine(w, x, beta, 2, 2);
    int y = tape.projection(u, poly);
    int fit = tape.mse_loss(y, tape.constant({0.2, 0.8}));
    int shifted = tape.add(y, tape.constant({-0.6, -0.1}));
    int spread_term = tape.mul(tape.constant({0.5}), tape.sum(tape.abs(shifted)));
    tape.add(fit, spread_term);
    return {std::move(tape), std::move(theta)};
  }
  if (task == "portfolio") {
    PortfolioTask pt = make_portfolio_task(4, 3, 12, {0, 1}, 0.3, seed);
    NetSpec net;
    net.hidden = 8;
    return {portfolio_tape(pt, net, 0), portfolio_init(pt, net)};
  }
  if (task == "matching") {
    MatchingTask mt = make_matching_task(3, 3, 2, 2, 4, seed);
    NetSpec net;
    net.hidden = 8;
    return {matching_tape(mt, net, 0), matching_init(mt, net)};
  }
  throw Error(ErrorKind::Input, "unknown gradcheck task: " + task);
}

}  // namespace polyproj
