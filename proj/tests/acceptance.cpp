// Acceptance gate: eight end-to-end checks of the projection layer, its
// generalized Jacobian, the tape, and the optimizer. Each criterion prints a
// single pass/fail line with its measured worst case and pinned tolerance;
// the process exits 0 only if every criterion passes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "polyproj/polyproj.hpp"
#include "support.hpp"

using namespace polyproj;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

testsupport::RandomInstance random_instance(Rng& rng, std::size_t n_max, std::size_t m_max,
                                            std::size_t l_max) {
  std::size_t n = 2 + rng.integer(n_max - 1);
  std::size_t m = 1 + rng.integer(m_max);
  std::size_t l = rng.integer(std::min(l_max, n - 1) + 1);
  return testsupport::gen_random_polytope(rng, n, m, l);
}

Vec offset_point(const Vec& interior, double spread, Rng& rng) {
  Vec x = interior;
  for (double& v : x) v += spread * rng.normal();
  return x;
}

// 1: the active set solver against exhaustive subset enumeration.
Outcome check_oracle_agreement() {
  Rng rng(1001);
  double worst_dy = 0.0, worst_kkt = 0.0;
  const std::size_t trials = 500;
  for (std::size_t t = 0; t < trials; ++t) {
    testsupport::RandomInstance inst = random_instance(rng, 8, 10, 3);
    Vec x = offset_point(inst.interior, 1.5, rng);
    ProjectionResult res = project(inst.poly, x);
    ProjectionResult oracle = project_bruteforce(inst.poly, x);
    worst_dy = std::max(worst_dy, norm_inf(vec_sub(res.y, oracle.y)));
    worst_kkt = std::max(worst_kkt, res.kkt_residual);
  }
  Outcome o;
  o.pass = worst_dy <= 1e-8 && worst_kkt <= 1e-8;
  o.detail = std::to_string(trials) + " instances, max deviation " + fmt(worst_dy) +
             ", max kkt residual " + fmt(worst_kkt) + " (tol 1e-8)";
  return o;
}

// 2: the Jacobian returned for a point is one of the enumerable selections.
Outcome check_element_membership() {
  Rng rng(2002);
  double worst = 0.0;
  const std::size_t trials = 200;
  for (std::size_t t = 0; t < trials; ++t) {
    testsupport::RandomInstance inst = random_instance(rng, 8, 10, 3);
    Vec x = offset_point(inst.interior, 1.5, rng);
    ProjectionResult res = project(inst.poly, x);
    DenseMatrix j = dense_jacobian(hs_element(inst.poly, res));
    std::vector<HsSetElement> els = hs_enumerate(inst.poly, x, res);
    if (els.empty()) {
      Outcome o;
      o.detail = "candidate set came back empty on trial " + std::to_string(t);
      return o;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const HsSetElement& el : els)
      best = std::min(best, frobenius_norm(DenseMatrix(j.rows, j.cols,
                                                       vec_sub(j.data, el.jacobian.data))));
    worst = std::max(worst, best);
  }
  Outcome o;
  o.pass = worst <= 1e-8;
  o.detail = std::to_string(trials) + " instances, max distance to nearest candidate " +
             fmt(worst) + " (tol 1e-8)";
  return o;
}

// 3: reverse-mode gradients against central differences, on projection tapes
// whose evaluation points have a locally stable active set, plus small task
// networks where the branch flags of the checker handle residual kinks.
Outcome check_gradcheck() {
  double worst = 0.0;
  std::size_t accepted = 0, flagged = 0;
  for (std::uint64_t seed = 0; seed < 1000 && accepted < 50; ++seed) {
    GradcheckSetup setup = gradcheck_setup("example", seed);
    setup.tape.set_params(setup.theta);
    setup.tape.forward();
    int pid = setup.tape.projection_nodes()[0];
    if (!testsupport::strict_complementarity(setup.tape.projection_polytope(pid),
                                             setup.tape.projection_result(pid), 1e-3))
      continue;
    GradcheckReport rep = gradcheck(setup.tape, setup.theta, 1e-6);
    worst = std::max(worst, rep.max_rel_err);
    flagged += rep.flagged_count;
    ++accepted;
  }
  for (const char* task : {"portfolio", "matching"}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      GradcheckSetup setup = gradcheck_setup(task, seed);
      GradcheckReport rep = gradcheck(setup.tape, setup.theta, 1e-6);
      worst = std::max(worst, rep.max_rel_err);
      flagged += rep.flagged_count;
    }
  }
  Outcome o;
  o.pass = accepted == 50 && worst <= 1e-4;
  o.detail = std::to_string(accepted) + "/50 stable points plus 6 task nets, max rel err " +
             fmt(worst) + " (tol 1e-4), " + std::to_string(flagged) + " probes flagged";
  return o;
}

// 4: integrating the Jacobian along segments reproduces projection
// differences across active set switches.
Outcome check_conservativity() {
  const char* families[] = {"example1", "simplex8", "birkhoff4", "matching3"};
  double worst = 0.0;
  std::size_t switches = 0;
  bool every_family_switched = true;
  std::uint64_t seed = 4004;
  for (const char* name : families) {
    Polytope p = make_named_polytope(name);
    Rng rng(seed++);
    std::size_t family_switches = 0;
    for (std::size_t s = 0; s < 50; ++s) {
      auto [x0, x1] = random_segment(p, rng);
      PathCheckResult r = path_integral_check(p, x0, x1, 2000);
      worst = std::max(worst, r.error_inf);
      family_switches += r.switches;
    }
    switches += family_switches;
    if (family_switches == 0) every_family_switched = false;
  }
  Outcome o;
  o.pass = worst <= 1e-4 && every_family_switched;
  o.detail = "4 families x 50 segments, max integral error " + fmt(worst) + " (tol 1e-4), " +
             std::to_string(switches) + " active set switches crossed";
  return o;
}

// 5: within one cell the projection is affine, so the Jacobian expansion is
// exact; pairs whose projections use different active sets are skipped
// because the identity only holds piecewise.
Outcome check_local_expansion() {
  Rng rng(5005);
  double worst = 0.0;
  std::size_t accepted = 0, straddles = 0, attempts = 0;
  while (accepted < 200 && attempts < 4000) {
    ++attempts;
    testsupport::RandomInstance inst = random_instance(rng, 6, 8, 2);
    Vec x = offset_point(inst.interior, 1.0, rng);
    Vec delta(x.size());
    for (double& v : delta) v = rng.normal();
    double nrm = norm2(delta);
    if (nrm == 0.0) continue;
    for (double& v : delta) v *= 1e-6 / nrm;
    Vec y = x;
    axpy(1.0, delta, y);

    ProjectionResult rx = project(inst.poly, x);
    ProjectionResult ry = project(inst.poly, y);
    if (rx.active != ry.active) {
      ++straddles;
      continue;
    }
    Vec jd = jvp(hs_element(inst.poly, ry), delta);
    Vec err = vec_sub(vec_sub(ry.y, rx.y), jd);
    worst = std::max(worst, norm_inf(err));
    ++accepted;
  }
  Outcome o;
  o.pass = accepted == 200 && worst <= 1e-12;
  o.detail = std::to_string(accepted) + "/200 same-cell pairs at step 1e-6 (" +
             std::to_string(straddles) + " straddling pairs skipped), max expansion error " +
             fmt(worst) + " (tol 1e-12)";
  return o;
}

double sliding_mean_spread(const Trace& trace, double tail_fraction, std::size_t window) {
  std::size_t tail = static_cast<std::size_t>(tail_fraction * static_cast<double>(trace.size()));
  std::size_t start = trace.size() - tail;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t s = start; s + window <= trace.size(); ++s) {
    double mean = 0.0;
    for (std::size_t k = 0; k < window; ++k) mean += trace[s + k].loss;
    mean /= static_cast<double>(window);
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
  }
  return hi - lo;
}

// 6: the optimizer reproduces an independent transcription of its update rule
// and drives both toy tasks to a stable loss with feasible iterates.
Outcome check_optimizer() {
  AdamConfig cfg;
  cfg.tau1 = 2.0;
  cfg.tau2 = 3.0;
  cfg.eta0 = 0.2;
  cfg.step_exponent = 0.7;
  AdamState s = make_adam_state({0.3, -1.2});
  double theta[2] = {0.3, -1.2}, m[2] = {0.0, 0.0}, v[2] = {0.0, 0.0};
  double pm = 1.0, pv = 1.0;
  double update_dev = 0.0;
  for (std::size_t t = 0; t < 25; ++t) {
    Vec g{std::sin(static_cast<double>(t) + 1.0), std::cos(0.5 * static_cast<double>(t))};
    adam_step(s, g, cfg);
    double eta = std::min(cfg.eta0 * std::pow(1.0 + static_cast<double>(t), -cfg.step_exponent),
                          0.5 / cfg.tau2);
    pm *= 1.0 - cfg.tau1 * eta;
    pv *= 1.0 - cfg.tau2 * eta;
    for (int i = 0; i < 2; ++i) {
      m[i] = (1.0 - cfg.tau1 * eta) * m[i] + cfg.tau1 * eta * g[i];
      v[i] = (1.0 - cfg.tau2 * eta) * v[i] + cfg.tau2 * eta * g[i] * g[i];
      theta[i] -= eta * (1.0 / (1.0 - pm)) * m[i] /
                  std::sqrt((1.0 / (1.0 - pv)) * std::fabs(v[i]) + cfg.eps);
      update_dev = std::max(update_dev, std::fabs(s.theta[i] - theta[i]) /
                                            std::max(1.0, std::fabs(theta[i])));
    }
  }

  AdamConfig task_cfg;
  task_cfg.tau1 = 10.0;
  task_cfg.tau2 = 10.0;
  task_cfg.eta0 = 0.2;  // capped at 0.5/tau for the first few steps
  task_cfg.step_exponent = 0.7;
  TrainOptions opt;
  opt.steps = 2000;

  NetSpec net;
  net.hidden = 6;
  PortfolioTask pt = make_portfolio_task(3, 3, 15, {0}, 0.2, 606);
  Trace pt_trace = train_portfolio(pt, net, task_cfg, opt).first;
  MatchingTask mt = make_matching_task(3, 3, 2, 2, 8, 707);
  Trace mt_trace = train_matching(mt, net, task_cfg, opt).first;

  double feas = 0.0;
  for (const TraceRow& row : pt_trace) feas = std::max(feas, row.feas_violation_max);
  for (const TraceRow& row : mt_trace) feas = std::max(feas, row.feas_violation_max);
  double pt_spread = sliding_mean_spread(pt_trace, 0.2, 50);
  double mt_spread = sliding_mean_spread(mt_trace, 0.2, 50);

  Outcome o;
  o.pass = update_dev <= 1e-15 && pt_spread <= 1e-3 && mt_spread <= 1e-3 && feas <= 1e-8;
  o.detail = "update replication dev " + fmt(update_dev) + " (tol 1e-15), tail loss spread " +
             fmt(pt_spread) + "/" + fmt(mt_spread) + " (tol 1e-3), max violation " + fmt(feas) +
             " (tol 1e-8)";
  return o;
}

// 7: exact projection onto the doubly stochastic polytope is feasible to
// solver precision and beats truncated Sinkhorn sweeps on the same measure.
Outcome check_birkhoff_comparison() {
  BirkhoffComparison cmp = compare_birkhoff(8, 100, {20, 30}, 7007);
  double worst_proj = 0.0;
  for (const auto& row : cmp.trials) worst_proj = std::max(worst_proj, row.projection_v_all);
  double min_win = 1.0;
  for (double rate : cmp.projection_win_rate) min_win = std::min(min_win, rate);
  Outcome o;
  o.pass = worst_proj <= 1e-10 && min_win >= 0.95;
  o.detail = "c=8, 100 trials, max projection violation " + fmt(worst_proj) +
             " (tol 1e-10), min win rate " + fmt(min_win) + " (need 0.95)";
  return o;
}

// 8: at points with a stable active set the projection is differentiable and
// central differences recover the Jacobian entrywise.
Outcome check_fd_jacobian() {
  Rng rng(8008);
  double worst = 0.0;
  std::size_t accepted = 0, attempts = 0;
  const double h = 1e-6;
  while (accepted < 100 && attempts < 3000) {
    ++attempts;
    testsupport::RandomInstance inst = random_instance(rng, 6, 8, 2);
    Vec x = offset_point(inst.interior, 1.0, rng);
    ProjectionResult res = project(inst.poly, x);
    if (!testsupport::strict_complementarity(inst.poly, res, 1e-3)) continue;
    DenseMatrix j = dense_jacobian(hs_element(inst.poly, res));
    for (std::size_t col = 0; col < x.size(); ++col) {
      Vec xp = x, xm = x;
      xp[col] += h;
      xm[col] -= h;
      Vec yp = project(inst.poly, xp).y;
      Vec ym = project(inst.poly, xm).y;
      for (std::size_t row = 0; row < x.size(); ++row) {
        double fd = (yp[row] - ym[row]) / (2.0 * h);
        worst = std::max(worst, std::fabs(fd - j(row, col)));
      }
    }
    ++accepted;
  }
  Outcome o;
  o.pass = accepted == 100 && worst <= 1e-5;
  o.detail = std::to_string(accepted) + "/100 stable points, max entry deviation " + fmt(worst) +
             " (tol 1e-5)";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*fn)();
  };
  const Criterion criteria[] = {
      {"projection agrees with the subset oracle", check_oracle_agreement},
      {"returned jacobian is an enumerable selection", check_element_membership},
      {"tape gradients match central differences", check_gradcheck},
      {"jacobian path integrals reproduce projection differences", check_conservativity},
      {"jacobian expansion is exact within a cell", check_local_expansion},
      {"optimizer replicates its update and stabilizes both tasks", check_optimizer},
      {"exact birkhoff projection dominates truncated sinkhorn", check_birkhoff_comparison},
      {"jacobian matches finite differences at stable points", check_fd_jacobian},
  };

  bool all = true;
  int idx = 1;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << "criterion " << idx << "/8 " << (o.pass ? "pass" : "FAIL") << ": " << c.name
              << " (" << o.detail << ")" << std::endl;
    all = all && o.pass;
    ++idx;
  }
  std::cout << (all ? "acceptance: all 8 criteria passed" : "acceptance: failures present")
            << std::endl;
  return all ? 0 : 1;
}
