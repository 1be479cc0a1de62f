#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "polyproj/adam.hpp"

using namespace polyproj;
using Catch::Approx;

TEST_CASE("config validation enforces the moment coupling") {
  AdamConfig cfg;
  cfg.tau1 = 1.0;
  cfg.tau2 = 5.0;
  try {
    cfg.validate();
    FAIL("tau2 > 4 tau1 must be rejected");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Input);
  }
  cfg.tau2 = 4.0;
  REQUIRE_NOTHROW(cfg.validate());

  AdamConfig bad;
  bad.step_exponent = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad.step_exponent = 1.5;
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad = AdamConfig{};
  bad.eps = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad = AdamConfig{};
  bad.eta0 = -0.1;
  REQUIRE_THROWS_AS(bad.validate(), Error);
  bad = AdamConfig{};
  bad.theta_cap = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("step sizes follow the schedule and respect the decay cap") {
  AdamConfig cfg;  // eta0 = 0.1, exponent = 0.6
  REQUIRE(step_size(cfg, 0) == Approx(0.1));
  REQUIRE(step_size(cfg, 1) == Approx(0.1 * std::pow(2.0, -0.6)));
  REQUIRE(step_size(cfg, 9) == Approx(0.1 * std::pow(10.0, -0.6)));

  cfg.tau1 = 2.0;
  cfg.tau2 = 2.0;
  cfg.eta0 = 0.5;
  REQUIRE(step_size(cfg, 0) == Approx(0.25));  // capped at 0.5 / max(tau)
}

TEST_CASE("debiasing factors accumulate the decay products") {
  AdamConfig cfg;
  auto [rm0, rv0] = scaling_params(cfg, 0);
  REQUIRE(rm0 == Approx(10.0).margin(1e-12));
  REQUIRE(rv0 == Approx(10.0).margin(1e-12));

  auto [rm1, rv1] = scaling_params(cfg, 1);
  double eta1 = step_size(cfg, 1);
  double expect = 1.0 / (1.0 - (1.0 - 0.1) * (1.0 - eta1));
  REQUIRE(rm1 == Approx(expect).margin(1e-14));
  REQUIRE(rv1 == rm1);  // tau1 == tau2

  cfg.bias_correction = false;
  auto [rm, rv] = scaling_params(cfg, 5);
  REQUIRE(rm == 1.0);
  REQUIRE(rv == 1.0);
}

TEST_CASE("one step matches the hand-worked update") {
  AdamConfig cfg;
  cfg.bias_correction = false;
  AdamState s = make_adam_state({1.0});
  adam_step(s, {2.0}, cfg);
  REQUIRE(s.t == 1);
  REQUIRE(s.m[0] == Approx(0.2).margin(1e-16));
  REQUIRE(s.v[0] == Approx(0.4).margin(1e-16));
  // 1 - 0.1 * 0.2 / sqrt(0.4 + 1e-8)
  REQUIRE(s.theta[0] == Approx(0.9683772237936009).margin(1e-15));

  adam_step(s, {-1.0}, cfg);
  REQUIRE(s.theta[0] == Approx(0.956353651537362).margin(1e-15));

  AdamConfig on;  // bias correction active
  AdamState s2 = make_adam_state({1.0});
  adam_step(s2, {2.0}, on);
  // 1 - 0.1 * 10 * 0.2 / sqrt(10 * 0.4 + 1e-8)
  REQUIRE(s2.theta[0] == Approx(0.9000000001249999).margin(1e-15));
}

TEST_CASE("many steps replicate an independent transcription of the update") {
  AdamConfig cfg;
  cfg.tau1 = 2.0;
  cfg.tau2 = 3.0;
  cfg.eta0 = 0.2;
  cfg.step_exponent = 0.7;
  AdamState s = make_adam_state({0.3, -1.2});

  double theta[2] = {0.3, -1.2};
  double m[2] = {0.0, 0.0};
  double v[2] = {0.0, 0.0};
  double pm = 1.0, pv = 1.0;
  for (std::size_t t = 0; t < 50; ++t) {
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
    }
    for (int i = 0; i < 2; ++i)
      REQUIRE(s.theta[i] == Approx(theta[i]).epsilon(1e-15).margin(1e-15));
  }
}

TEST_CASE("the parameter cap turns divergence into an error") {
  AdamConfig cfg;
  cfg.theta_cap = 0.05;
  AdamState s = make_adam_state({0.049});
  try {
    adam_step(s, {1.0}, cfg);
    FAIL("cap must trigger");
  } catch (const ConvergenceError& e) {
    REQUIRE(e.kind() == ErrorKind::Convergence);
    REQUIRE(e.best_iterate.size() == 1);
    REQUIRE(std::fabs(e.best_iterate[0]) > 0.05);
  }
}

TEST_CASE("the optimizer settles a scalar quadratic") {
  AdamConfig cfg;
  cfg.tau1 = 10.0;
  cfg.tau2 = 10.0;
  AdamState s = make_adam_state({0.0});
  for (int t = 0; t < 2000; ++t) adam_step(s, {2.0 * (s.theta[0] - 1.0)}, cfg);
  REQUIRE(std::fabs(s.theta[0] - 1.0) < 1e-6);
}

TEST_CASE("training is deterministic and traces pre-update state") {
  Vec targets{0.0, 2.0};
  auto factory = [&](std::size_t idx) {
    Tape tape;
    int theta = tape.parameter({0.0});
    tape.mse_loss(theta, tape.constant({targets[idx]}));
    return tape;
  };

  AdamConfig cfg;
  TrainOptions opt;
  opt.steps = 30;

  auto [trace, theta] = train_with_params(factory, targets.size(), {0.0}, cfg, opt);
  REQUIRE(trace.size() == 30);
  REQUIRE(trace[0].step == 0);
  REQUIRE(trace[0].loss == Approx(2.0));       // mean of 0 and 4 at theta = 0
  REQUIRE(trace[0].grad_norm == Approx(2.0));  // mean gradient is -2
  REQUIRE(trace[0].feas_violation_max == 0.0);
  REQUIRE(trace[0].eta == Approx(step_size(cfg, 0)));
  REQUIRE(trace[5].eta == Approx(step_size(cfg, 5)));
  REQUIRE(trace.back().loss < trace.front().loss);

  auto [trace2, theta2] = train_with_params(factory, targets.size(), {0.0}, cfg, opt);
  REQUIRE(theta == theta2);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    REQUIRE(trace[i].loss == trace2[i].loss);
    REQUIRE(trace[i].grad_norm == trace2[i].grad_norm);
  }

  // minibatch sampling is driven by the seed alone
  opt.batch_size = 1;
  opt.seed = 7;
  auto [t3, th3] = train_with_params(factory, targets.size(), {0.0}, cfg, opt);
  auto [t4, th4] = train_with_params(factory, targets.size(), {0.0}, cfg, opt);
  REQUIRE(th3 == th4);
  opt.seed = 8;
  auto [t5, th5] = train_with_params(factory, targets.size(), {0.0}, cfg, opt);
  REQUIRE(th3 != th5);
}

TEST_CASE("training rejects bad setups") {
  auto factory = [](std::size_t) {
    Tape tape;
    tape.square(tape.parameter({1.0}));
    return tape;
  };
  AdamConfig cfg;
  TrainOptions opt;
  opt.steps = 1;
  REQUIRE_THROWS_AS(train(factory, 0, {1.0}, cfg, opt), Error);
  REQUIRE_THROWS_AS(train(factory, 3, {1.0, 2.0}, cfg, opt), Error);
}

TEST_CASE("a zero gradient leaves the iterate untouched") {
  AdamConfig cfg;
  AdamState s = make_adam_state({0.7, -0.3});
  adam_step(s, {0.0, 0.0}, cfg);
  REQUIRE(s.theta == Vec{0.7, -0.3});
  REQUIRE(s.m == Vec{0.0, 0.0});
  REQUIRE(s.v == Vec{0.0, 0.0});
  REQUIRE(s.t == 1);
}

TEST_CASE("the schedule decays fast enough to dominate a log factor") {
  AdamConfig cfg;
  for (std::size_t t = 11; t < 1000; ++t) {
    double cur = step_size(cfg, t) * std::log(static_cast<double>(t) + 2.0);
    double nxt = step_size(cfg, t + 1) * std::log(static_cast<double>(t) + 3.0);
    REQUIRE(nxt < cur);
  }
  REQUIRE(step_size(cfg, 1000000) < 1e-3);
}

TEST_CASE("training pulls a scalar quadratic to its minimizer") {
  auto factory = [](std::size_t) {
    Tape tape;
    int theta = tape.parameter({0.0});
    tape.mse_loss(theta, tape.constant({1.0}));
    return tape;
  };
  AdamConfig cfg;
  cfg.tau1 = 10.0;
  cfg.tau2 = 10.0;
  TrainOptions opt;
  opt.steps = 2000;
  auto [trace, theta] = train_with_params(factory, 1, {0.0}, cfg, opt);
  REQUIRE(std::fabs(theta[0] - 1.0) <= 1e-2);
  REQUIRE(trace.back().loss < 1e-3);
}
