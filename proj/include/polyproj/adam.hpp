#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "polyproj/errors.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/rng.hpp"
#include "polyproj/tape.hpp"

namespace polyproj {

// Adam variant whose moment decay is tied to the step size: with step eta_t
// the moments update as
//   m <- (1 - tau1 eta_t) m + tau1 eta_t g
//   v <- (1 - tau2 eta_t) v + tau2 eta_t g*g
//   theta <- theta - eta_t * rho_m m / sqrt(rho_v |v| + eps)
// Convergence of this scheme needs tau2 <= 4 tau1, which validate() enforces,
// and a step schedule eta_t = eta0 (1 + t)^(-step_exponent) with exponent in
// (0, 1]; steps are additionally capped at 0.5 / max(tau1, tau2) so the decay
// factors stay in (0, 1).
struct AdamConfig {
  double tau1 = 1.0;
  double tau2 = 1.0;
  double eps = 1e-8;
  double eta0 = 0.1;
  double step_exponent = 0.6;
  bool bias_correction = true;
  double theta_cap = 1e6;  // infinity-norm bound; exceeding it is an error

  void validate() const {
    if (!(tau1 > 0.0) || !(tau2 > 0.0))
      throw Error(ErrorKind::Input, "adam: tau1 and tau2 must be positive");
    if (tau2 > 4.0 * tau1)
      throw Error(ErrorKind::Input, "adam: tau2 must not exceed 4 tau1");
    if (!(eps > 0.0)) throw Error(ErrorKind::Input, "adam: eps must be positive");
    if (!(eta0 > 0.0)) throw Error(ErrorKind::Input, "adam: eta0 must be positive");
    if (!(step_exponent > 0.0 && step_exponent <= 1.0))
      throw Error(ErrorKind::Input, "adam: step exponent must lie in (0, 1]");
    if (!(theta_cap > 0.0)) throw Error(ErrorKind::Input, "adam: theta cap must be positive");
  }
};

struct AdamState {
  Vec theta;
  Vec m;
  Vec v;
  std::size_t t = 0;
};

inline AdamState make_adam_state(Vec theta0) {
  require_finite(theta0, "adam: theta0");
  AdamState s;
  s.m = Vec(theta0.size(), 0.0);
  s.v = Vec(theta0.size(), 0.0);
  s.theta = std::move(theta0);
  return s;
}

inline double step_size(const AdamConfig& cfg, std::size_t t) {
  double eta = cfg.eta0 * std::pow(1.0 + static_cast<double>(t), -cfg.step_exponent);
  return std::min(eta, 0.5 / std::max(cfg.tau1, cfg.tau2));
}

// Debiasing factors (rho_m, rho_v) applied on the step from time t to t + 1:
// the reciprocals of 1 - prod_{s<=t} (1 - tau eta_s). Without bias correction
// both are 1.
inline std::pair<double, double> scaling_params(const AdamConfig& cfg, std::size_t t) {
  cfg.validate();
  if (!cfg.bias_correction) return {1.0, 1.0};
  double pm = 1.0, pv = 1.0;
  for (std::size_t s = 0; s <= t; ++s) {
    double eta = step_size(cfg, s);
    pm *= 1.0 - cfg.tau1 * eta;
    pv *= 1.0 - cfg.tau2 * eta;
  }
  return {1.0 / (1.0 - pm), 1.0 / (1.0 - pv)};
}

inline void adam_step(AdamState& state, const Vec& grad, const AdamConfig& cfg) {
  cfg.validate();
  if (grad.size() != state.theta.size())
    throw Error(ErrorKind::Input, "adam: gradient length mismatch");
  require_finite(grad, "adam: gradient");

  double eta = step_size(cfg, state.t);
  auto [rho_m, rho_v] = scaling_params(cfg, state.t);

  for (std::size_t i = 0; i < state.theta.size(); ++i) {
    state.m[i] = (1.0 - cfg.tau1 * eta) * state.m[i] + cfg.tau1 * eta * grad[i];
    state.v[i] = (1.0 - cfg.tau2 * eta) * state.v[i] + cfg.tau2 * eta * grad[i] * grad[i];
    state.theta[i] -=
        eta * rho_m * state.m[i] / std::sqrt(rho_v * std::fabs(state.v[i]) + cfg.eps);
  }
  ++state.t;

  if (norm_inf(state.theta) > cfg.theta_cap)
    throw ConvergenceError("adam: parameter norm cap exceeded", state.theta,
                           norm_inf(state.theta));
}

struct TraceRow {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;           // 2-norm of the step's mean gradient
  double feas_violation_max = 0.0;  // worst projection violation in the batch
  double eta = 0.0;
};

using Trace = std::vector<TraceRow>;

struct TrainOptions {
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;  // 0 means the full dataset each step
};

// Generic training loop: the factory builds a fresh tape for a sample index;
// all tapes must share one parameter layout. Each step averages loss and
// gradient over the batch, records a trace row at the pre-update parameters,
// then takes one optimizer step. Deterministic given the seed.
inline std::pair<Trace, Vec> train_with_params(const std::function<Tape(std::size_t)>& factory,
                                               std::size_t dataset_size, Vec theta0,
                                               const AdamConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  if (dataset_size == 0) throw Error(ErrorKind::Input, "train: empty dataset");

  AdamState state = make_adam_state(std::move(theta0));
  Rng rng(opt.seed);
  std::size_t batch = opt.batch_size == 0 ? dataset_size : opt.batch_size;

  Trace trace;
  trace.reserve(opt.steps);
  for (std::size_t step = 0; step < opt.steps; ++step) {
    Vec grad(state.theta.size(), 0.0);
    double loss = 0.0;
    double feas = 0.0;
    for (std::size_t k = 0; k < batch; ++k) {
      std::size_t idx = opt.batch_size == 0 ? k : rng.integer(dataset_size);
      Tape tape = factory(idx);
      if (tape.param_count() != state.theta.size())
        throw Error(ErrorKind::Input, "train: tape parameter layout mismatch");
      tape.set_params(state.theta);
      loss += tape.forward();
      axpy(1.0, tape.reverse(), grad);
      feas = std::max(feas, tape.max_projection_violation());
    }
    double inv = 1.0 / static_cast<double>(batch);
    loss *= inv;
    for (double& gi : grad) gi *= inv;

    TraceRow row;
    row.step = step;
    row.loss = loss;
    row.grad_norm = norm2(grad);
    row.feas_violation_max = feas;
    row.eta = step_size(cfg, state.t);
    trace.push_back(row);

    adam_step(state, grad, cfg);
  }
  return {std::move(trace), std::move(state.theta)};
}

inline Trace train(const std::function<Tape(std::size_t)>& factory, std::size_t dataset_size,
                   Vec theta0, const AdamConfig& cfg, const TrainOptions& opt) {
  return train_with_params(factory, dataset_size, std::move(theta0), cfg, opt).first;
}

}  // namespace polyproj
