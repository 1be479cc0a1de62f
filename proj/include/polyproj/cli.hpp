#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "polyproj/adam.hpp"
#include "polyproj/errors.hpp"
#include "polyproj/hs_jacobian.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/polytope.hpp"
#include "polyproj/projection.hpp"
#include "polyproj/rng.hpp"
#include "polyproj/tape.hpp"
#include "polyproj/tasks.hpp"
#include "polyproj/version.hpp"

namespace polyproj {

inline constexpr double kGradcheckPassTol = 1e-4;
inline constexpr double kConservativityPassTol = 1e-4;

namespace cli_detail {

inline std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  parts.push_back(current);
  return parts;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::Input, what + ": cannot parse number '" + text + "'");
  }
}

inline std::uint64_t parse_count(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(text, &pos);
    if (pos != text.size() || v < 0) throw std::invalid_argument(text);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw Error(ErrorKind::Input, what + ": cannot parse count '" + text + "'");
  }
}

// Vector literal: either a comma separated list or @path to a whitespace
// separated file.
inline Vec parse_vector_spec(const std::string& spec) {
  Vec v;
  if (!spec.empty() && spec[0] == '@') {
    std::ifstream in(spec.substr(1));
    if (!in) throw Error(ErrorKind::Input, "cannot open vector file " + spec.substr(1));
    double x;
    while (in >> x) v.push_back(x);
    if (v.empty()) throw Error(ErrorKind::Input, "vector file is empty: " + spec.substr(1));
    return v;
  }
  for (const std::string& part : split(spec, ',')) {
    std::string t = trim(part);
    if (t.empty()) throw Error(ErrorKind::Input, "empty component in vector literal");
    v.push_back(parse_double(t, "vector literal"));
  }
  return v;
}

inline Polytope load_polytope(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Input, "cannot open polytope file " + path);
  return read_polytope(in);
}

inline std::vector<std::size_t> one_based(const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = idx[i] + 1;
  return out;
}

// Output sink: --out writes a file plus a .manifest with the resolved
// configuration, otherwise the payload goes to the stream.
class Sink {
 public:
  Sink(std::string out_path, std::ostream& fallback)
      : out_path_(std::move(out_path)), fallback_(fallback) {
    manifest_["version"] = kVersion;
  }

  void note(const std::string& key, const std::string& value) { manifest_[key] = value; }
  // the const char* overload keeps string literals away from the bool one
  void note(const std::string& key, const char* value) { manifest_[key] = value; }
  void note(const std::string& key, bool value) { manifest_[key] = value ? "true" : "false"; }
  void note(const std::string& key, double value) { manifest_[key] = format_double(value); }
  void note(const std::string& key, std::uint64_t value) { manifest_[key] = std::to_string(value); }

  void deliver(const std::string& payload) const {
    if (out_path_.empty()) {
      fallback_ << payload;
      return;
    }
    std::ofstream out(out_path_);
    if (!out) throw Error(ErrorKind::Input, "cannot write output file " + out_path_);
    out << payload;
    std::ofstream man(out_path_ + ".manifest");
    if (!man) throw Error(ErrorKind::Input, "cannot write manifest for " + out_path_);
    for (const auto& [key, value] : manifest_) man << key << "=" << value << "\n";
  }

 private:
  std::string out_path_;
  std::ostream& fallback_;
  std::map<std::string, std::string> manifest_;  // sorted, deterministic
};

// key=value configuration files with # comments; every key must be consumed.
class ConfigReader {
 public:
  explicit ConfigReader(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorKind::Input,
                    "config line " + std::to_string(lineno) + ": expected key=value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw Error(ErrorKind::Input, "config line " + std::to_string(lineno) + ": empty key");
      if (values_.count(key))
        throw Error(ErrorKind::Input, "config: duplicate key '" + key + "'");
      values_[key] = value;
    }
  }

  std::string require(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end())
      throw Error(ErrorKind::Input, "config: missing required key '" + key + "'");
    consumed_.insert(key);
    return it->second;
  }

  std::string get(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return parse_double(it->second, "config key '" + key + "'");
  }

  std::uint64_t get_count(const std::string& key, std::uint64_t fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return parse_count(it->second, "config key '" + key + "'");
  }

  std::uint64_t require_count(const std::string& key) {
    return parse_count(require(key), "config key '" + key + "'");
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw Error(ErrorKind::Input, "config key '" + key + "': expected true or false");
  }

  // Comma separated 1-based indices converted to 0-based.
  std::vector<std::size_t> get_index_list(const std::string& key) {
    auto it = values_.find(key);
    std::vector<std::size_t> idx;
    if (it == values_.end()) return idx;
    consumed_.insert(key);
    if (trim(it->second).empty()) return idx;
    for (const std::string& part : split(it->second, ',')) {
      std::uint64_t v = parse_count(trim(part), "config key '" + key + "'");
      if (v == 0)
        throw Error(ErrorKind::Input, "config key '" + key + "': indices are 1-based");
      idx.push_back(static_cast<std::size_t>(v - 1));
    }
    return idx;
  }

  void finish() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key))
        throw Error(ErrorKind::Input, "config: unknown key '" + key + "'");
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

inline nlohmann::json projection_to_json(const ProjectionResult& res) {
  nlohmann::json j;
  j["y"] = res.y;
  j["lambda"] = res.lambda;
  j["mu"] = res.mu;
  j["active"] = one_based(res.active);
  j["kkt_residual"] = res.kkt_residual;
  j["iterations"] = res.iterations;
  return j;
}

inline int cmd_project(const std::string& poly_path, const std::string& x_spec, double tol,
                       Sink& sink) {
  Polytope p = load_polytope(poly_path);
  Vec x = parse_vector_spec(x_spec);
  ProjectOptions opts;
  opts.tol = tol;
  ProjectionResult res = project(p, x, opts);
  sink.note("command", "project");
  sink.note("poly", poly_path);
  sink.note("x", x_spec);
  sink.note("tol", tol);
  sink.deliver(projection_to_json(res).dump(2) + "\n");
  return 0;
}

inline int cmd_jacobian(const std::string& poly_path, const std::string& x_spec, double tol,
                        Sink& sink) {
  Polytope p = load_polytope(poly_path);
  Vec x = parse_vector_spec(x_spec);
  ProjectOptions opts;
  opts.tol = tol;
  ProjectionResult res = project(p, x, opts);
  HsFactor f = hs_element(p, res);
  DenseMatrix j = dense_jacobian(f);

  nlohmann::json doc;
  doc["n"] = p.n;
  doc["active"] = one_based(res.active);
  doc["rank"] = f.rank;
  std::vector<Vec> rows(p.n);
  for (std::size_t r = 0; r < p.n; ++r)
    rows[r] = Vec(j.row_ptr(r), j.row_ptr(r) + p.n);
  doc["jacobian"] = rows;
  sink.note("command", "jacobian");
  sink.note("poly", poly_path);
  sink.note("x", x_spec);
  sink.note("tol", tol);
  sink.deliver(doc.dump(2) + "\n");
  return 0;
}

inline int cmd_gradcheck(const std::string& task, std::uint64_t seed, double h, Sink& sink) {
  GradcheckSetup setup = gradcheck_setup(task, seed);
  GradcheckReport report = gradcheck(setup.tape, setup.theta, h);
  bool pass = report.max_rel_err <= kGradcheckPassTol;

  std::ostringstream csv;
  csv << "param,analytic,numeric,rel_err,flagged\n";
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const GradcheckEntry& e = report.entries[i];
    csv << (i + 1) << "," << format_double(e.analytic) << "," << format_double(e.numeric) << ","
        << format_double(e.rel_err) << "," << (e.flagged ? 1 : 0) << "\n";
  }
  csv << "# max_rel_err=" << format_double(report.max_rel_err)
      << " flagged_count=" << report.flagged_count << " pass=" << (pass ? "true" : "false")
      << "\n";

  sink.note("command", "gradcheck");
  sink.note("task", task);
  sink.note("seed", seed);
  sink.note("h", h);
  sink.note("pass_tol", kGradcheckPassTol);
  sink.deliver(csv.str());
  return pass ? 0 : 1;
}

inline int cmd_conservativity(const std::string& poly_path, const std::string& family,
                              std::uint64_t segments, std::uint64_t samples, std::uint64_t seed,
                              Sink& sink) {
  if (poly_path.empty() == family.empty())
    throw Error(ErrorKind::Input, "conservativity: pass exactly one of --poly and --family");
  if (segments == 0) throw Error(ErrorKind::Input, "conservativity: need at least one segment");
  if (samples < 2) throw Error(ErrorKind::Input, "conservativity: need at least two samples");

  Polytope p = poly_path.empty() ? make_named_polytope(family) : load_polytope(poly_path);
  Rng rng(seed);
  std::ostringstream csv;
  csv << "segment,error_inf,switches\n";
  double worst = 0.0;
  for (std::uint64_t s = 0; s < segments; ++s) {
    auto [x0, x1] = random_segment(p, rng);
    PathCheckResult r = path_integral_check(p, x0, x1, samples);
    worst = std::max(worst, r.error_inf);
    csv << s << "," << format_double(r.error_inf) << "," << r.switches << "\n";
  }
  sink.note("command", "conservativity");
  sink.note("poly", poly_path.empty() ? family : poly_path);
  sink.note("segments", segments);
  sink.note("samples", samples);
  sink.note("seed", seed);
  sink.note("pass_tol", kConservativityPassTol);
  sink.deliver(csv.str());
  return worst <= kConservativityPassTol ? 0 : 1;
}

inline std::string trace_to_csv(const Trace& trace) {
  std::ostringstream csv;
  csv << "step,loss,grad_norm,feas_violation_max,eta\n";
  for (const TraceRow& row : trace) {
    csv << row.step << "," << format_double(row.loss) << "," << format_double(row.grad_norm)
        << "," << format_double(row.feas_violation_max) << "," << format_double(row.eta) << "\n";
  }
  return csv.str();
}

inline int cmd_train(const std::string& config_path, std::uint64_t seed, Sink& sink) {
  std::ifstream in(config_path);
  if (!in) throw Error(ErrorKind::Input, "cannot open config file " + config_path);
  ConfigReader cfg(in);

  std::string task = cfg.require("task");
  AdamConfig adam;
  adam.eta0 = cfg.get_double("eta0", adam.eta0);
  adam.tau1 = cfg.get_double("tau1", adam.tau1);
  adam.tau2 = cfg.get_double("tau2", adam.tau2);
  adam.eps = cfg.get_double("eps", adam.eps);
  adam.step_exponent = cfg.get_double("step_exponent", adam.step_exponent);
  adam.bias_correction = cfg.get_bool("bias_correction", adam.bias_correction);
  adam.validate();

  TrainOptions opt;
  opt.steps = static_cast<std::size_t>(cfg.require_count("steps"));
  opt.batch_size = static_cast<std::size_t>(cfg.get_count("batch", 0));
  opt.seed = seed;

  NetSpec net;
  net.hidden = static_cast<std::size_t>(cfg.get_count("hidden", 32));

  sink.note("command", "train");
  sink.note("config", config_path);
  sink.note("task", task);
  sink.note("seed", seed);
  sink.note("steps", static_cast<std::uint64_t>(opt.steps));
  sink.note("batch", static_cast<std::uint64_t>(opt.batch_size));
  sink.note("hidden", static_cast<std::uint64_t>(net.hidden));
  sink.note("eta0", adam.eta0);
  sink.note("tau1", adam.tau1);
  sink.note("tau2", adam.tau2);
  sink.note("eps", adam.eps);
  sink.note("step_exponent", adam.step_exponent);
  sink.note("bias_correction", adam.bias_correction);

  Trace trace;
  if (task == "portfolio") {
    std::size_t n = static_cast<std::size_t>(cfg.get_count("n", 8));
    std::size_t window = static_cast<std::size_t>(cfg.get_count("window", 4));
    std::size_t periods = static_cast<std::size_t>(cfg.get_count("periods", 64));
    std::vector<std::size_t> group = cfg.get_index_list("group");
    double floor_weight = cfg.get_double("floor", 0.0);
    double risk_free = cfg.get_double("risk_free", 0.03);
    double loss_weight = cfg.get_double("loss_weight", 1.0);
    cfg.finish();
    sink.note("n", static_cast<std::uint64_t>(n));
    sink.note("window", static_cast<std::uint64_t>(window));
    sink.note("periods", static_cast<std::uint64_t>(periods));
    std::string group_text;
    for (std::size_t gi : group) {
      if (!group_text.empty()) group_text += ",";
      group_text += std::to_string(gi + 1);
    }
    sink.note("group", group_text);
    sink.note("floor", floor_weight);
    sink.note("risk_free", risk_free);
    sink.note("loss_weight", loss_weight);
    PortfolioTask pt =
        make_portfolio_task(n, window, periods, group, floor_weight, seed, risk_free, loss_weight);
    trace = train_portfolio(pt, net, adam, opt).first;
  } else if (task == "matching") {
    std::size_t d1 = static_cast<std::size_t>(cfg.get_count("d1", 3));
    std::size_t d2 = static_cast<std::size_t>(cfg.get_count("d2", 3));
    std::size_t match_count = static_cast<std::size_t>(cfg.get_count("match_count", 2));
    std::size_t feature_dim = static_cast<std::size_t>(cfg.get_count("feature_dim", 2));
    std::size_t samples = static_cast<std::size_t>(cfg.get_count("samples", 16));
    cfg.finish();
    sink.note("d1", static_cast<std::uint64_t>(d1));
    sink.note("d2", static_cast<std::uint64_t>(d2));
    sink.note("match_count", static_cast<std::uint64_t>(match_count));
    sink.note("feature_dim", static_cast<std::uint64_t>(feature_dim));
    sink.note("samples", static_cast<std::uint64_t>(samples));
    MatchingTask mt = make_matching_task(d1, d2, match_count, feature_dim, samples, seed);
    trace = train_matching(mt, net, adam, opt).first;
  } else {
    throw Error(ErrorKind::Input, "config: unknown task '" + task + "'");
  }

  sink.deliver(trace_to_csv(trace));
  return 0;
}

inline int cmd_compare_sinkhorn(std::uint64_t c, std::uint64_t trials, const std::string& iters,
                                std::uint64_t seed, Sink& sink) {
  std::vector<std::size_t> iter_list;
  for (const std::string& part : split(iters, ','))
    iter_list.push_back(static_cast<std::size_t>(parse_count(trim(part), "--iters")));

  BirkhoffComparison cmp = compare_birkhoff(static_cast<std::size_t>(c),
                                            static_cast<std::size_t>(trials), iter_list, seed);

  std::ostringstream csv;
  csv << "trial,projection_v_all";
  for (std::size_t k : cmp.sinkhorn_iters) csv << ",sinkhorn" << k << "_v_all";
  csv << "\n";
  for (std::size_t t = 0; t < cmp.trials.size(); ++t) {
    csv << t << "," << format_double(cmp.trials[t].projection_v_all);
    for (double v : cmp.trials[t].sinkhorn_v_all) csv << "," << format_double(v);
    csv << "\n";
  }
  csv << "median," << format_double(cmp.projection_median);
  for (double v : cmp.sinkhorn_medians) csv << "," << format_double(v);
  csv << "\n";
  csv << "win_rate,";
  for (double v : cmp.projection_win_rate) csv << "," << format_double(v);
  csv << "\n";

  sink.note("command", "compare-sinkhorn");
  sink.note("c", c);
  sink.note("trials", trials);
  sink.note("iters", iters);
  sink.note("seed", seed);
  sink.deliver(csv.str());
  return 0;
}

}  // namespace cli_detail

// Entry point shared by the binary and the tests. `args` excludes the program
// name. Exit codes: 0 success (and passing measurements), 1 input/validation
// errors or failing measurements, 2 convergence failures.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using cli_detail::Sink;

  CLI::App app{"exact projections onto polyhedra with generalized Jacobians"};
  app.fallthrough();
  // keep the short -h free so gradcheck can use --h for the difference step
  app.set_help_flag("--help", "print this help message and exit");

  std::string out_path;
  std::uint64_t seed = 0;
  double tol = 1e-10;
  app.add_option("--out", out_path, "write the result to this file (plus a .manifest)");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--tol", tol, "projection solve tolerance");

  auto subcommand = [&app](const std::string& name, const std::string& description) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->set_help_flag("--help", "print this help message and exit");
    return sub;
  };

  std::string poly_path, x_spec;
  CLI::App* project_cmd = subcommand("project", "project a point onto a polytope");
  project_cmd->add_option("--poly", poly_path, "polytope file")->required();
  project_cmd->add_option("--x", x_spec, "point: comma separated or @file")->required();

  CLI::App* jacobian_cmd =
      subcommand("jacobian", "generalized Jacobian of the projection at a point");
  jacobian_cmd->add_option("--poly", poly_path, "polytope file")->required();
  jacobian_cmd->add_option("--x", x_spec, "point: comma separated or @file")->required();

  std::string task = "example";
  double fd_h = 1e-6;
  CLI::App* gradcheck_cmd =
      subcommand("gradcheck", "compare tape gradients against central differences");
  gradcheck_cmd->add_option("--task", task, "example, portfolio or matching");
  gradcheck_cmd->add_option("--h", fd_h, "finite difference step in [1e-8, 1e-4]");

  std::string family;
  std::uint64_t segments = 50, samples = 2000;
  CLI::App* cons_cmd = subcommand(
      "conservativity", "path integral check of the generalized Jacobian along segments");
  cons_cmd->add_option("--poly", poly_path, "polytope file");
  cons_cmd->add_option("--family", family, "example1, simplex8, birkhoff4 or matching3");
  cons_cmd->add_option("--segments", segments, "number of random segments");
  cons_cmd->add_option("--samples", samples, "quadrature samples per segment (>= 2)");

  std::string config_path;
  CLI::App* train_cmd = subcommand("train", "train a task described by a config file");
  train_cmd->add_option("--config", config_path, "key=value config file")->required();

  std::uint64_t c = 8, trials = 100;
  std::string iters = "20,30";
  CLI::App* sink_cmd = subcommand(
      "compare-sinkhorn", "exact Birkhoff projection versus Sinkhorn normalization");
  sink_cmd->add_option("--c", c, "matrix side length");
  sink_cmd->add_option("--trials", trials, "number of random matrices");
  sink_cmd->add_option("--iters", iters, "comma separated Sinkhorn sweep counts");

  app.require_subcommand(0, 1);

  std::vector<std::string> full = args;
  full.insert(full.begin(), "polyproj");
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& s : full) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    Sink sink(out_path, out);
    if (app.got_subcommand(project_cmd))
      return cli_detail::cmd_project(poly_path, x_spec, tol, sink);
    if (app.got_subcommand(jacobian_cmd))
      return cli_detail::cmd_jacobian(poly_path, x_spec, tol, sink);
    if (app.got_subcommand(gradcheck_cmd))
      return cli_detail::cmd_gradcheck(task, seed, fd_h, sink);
    if (app.got_subcommand(cons_cmd))
      return cli_detail::cmd_conservativity(poly_path, family, segments, samples, seed, sink);
    if (app.got_subcommand(train_cmd)) return cli_detail::cmd_train(config_path, seed, sink);
    if (app.got_subcommand(sink_cmd))
      return cli_detail::cmd_compare_sinkhorn(c, trials, iters, seed, sink);
    out << app.help();
    return 1;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Convergence ? 2 : 1;
  }
}

}  // namespace polyproj
