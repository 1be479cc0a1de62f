#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include "polyproj/errors.hpp"
#include "polyproj/hs_jacobian.hpp"
#include "polyproj/matrix.hpp"
#include "polyproj/polytope.hpp"
#include "polyproj/projection.hpp"

namespace polyproj {

enum class Op {
  Parameter,
  Constant,
  Affine,
  Add,
  Mul,
  Div,
  Relu,
  Sigmoid,
  Tanh,
  Sqrt,
  Square,
  Abs,
  Sum,
  Mean,
  MseLoss,
  BceLoss,
  Projection,
};

inline constexpr double kSqrtFloor = 1e-12;

struct TapeNode {
  Op op;
  std::vector<int> parents;
  std::size_t size = 0;
  Vec value;
  Vec adjoint;
  std::size_t out_rows = 0;  // affine shape
  std::size_t in_cols = 0;
  double clamp_eps = 1e-3;  // bce
  std::shared_ptr<const Polytope> poly;
  double proj_tol = 1e-10;
  ProjectionResult proj_result;
  HsFactor proj_factor;
};

// Reverse-mode tape over vector-valued nodes. Parameters are the leading
// nodes; the last node must be scalar and is the quantity differentiated.
// Nonsmooth ops (relu, abs, the sqrt floor, the bce clamp, projection active
// sets) record which branch the forward pass took in a signature so callers
// can tell when two evaluations used different selections.
class Tape {
 public:
  int parameter(Vec init) {
    if (nodes_.size() != param_nodes_)
      throw Error(ErrorKind::Input, "tape: parameters must precede all other nodes");
    require_finite(init, "tape: parameter");
    if (init.empty()) throw Error(ErrorKind::Input, "tape: empty parameter");
    TapeNode n;
    n.op = Op::Parameter;
    n.size = init.size();
    n.value = std::move(init);
    param_scalars_ += n.size;
    ++param_nodes_;
    return push(std::move(n));
  }

  int constant(Vec value) {
    require_finite(value, "tape: constant");
    if (value.empty()) throw Error(ErrorKind::Input, "tape: empty constant");
    TapeNode n;
    n.op = Op::Constant;
    n.size = value.size();
    n.value = std::move(value);
    return push(std::move(n));
  }

  // weight is a row-major out_rows x in_cols block; bias < 0 means no bias.
  int affine(int weight, int input, int bias, std::size_t out_rows, std::size_t in_cols) {
    check_node(weight);
    check_node(input);
    if (node(weight).size != out_rows * in_cols)
      throw Error(ErrorKind::Input, "tape: affine weight size mismatch");
    if (node(input).size != in_cols)
      throw Error(ErrorKind::Input, "tape: affine input size mismatch");
    if (bias >= 0) {
      check_node(bias);
      if (node(bias).size != out_rows)
        throw Error(ErrorKind::Input, "tape: affine bias size mismatch");
    }
    TapeNode n;
    n.op = Op::Affine;
    n.parents = bias >= 0 ? std::vector<int>{weight, input, bias}
                          : std::vector<int>{weight, input};
    n.size = out_rows;
    n.out_rows = out_rows;
    n.in_cols = in_cols;
    return push(std::move(n));
  }

  int add(int u, int v) { return binary_elementwise(Op::Add, u, v); }
  int mul(int u, int v) { return binary_elementwise(Op::Mul, u, v); }
  int div(int u, int v) { return binary_elementwise(Op::Div, u, v); }

  int relu(int u) { return unary_elementwise(Op::Relu, u); }
  int sigmoid(int u) { return unary_elementwise(Op::Sigmoid, u); }
  int tanh(int u) { return unary_elementwise(Op::Tanh, u); }
  int sqrt(int u) { return unary_elementwise(Op::Sqrt, u); }
  int square(int u) { return unary_elementwise(Op::Square, u); }
  int abs(int u) { return unary_elementwise(Op::Abs, u); }

  int sum(int u) { return reduction(Op::Sum, u); }
  int mean(int u) { return reduction(Op::Mean, u); }

  int mse_loss(int pred, int target) {
    check_node(pred);
    check_node(target);
    if (node(pred).size != node(target).size)
      throw Error(ErrorKind::Input, "tape: mse size mismatch");
    TapeNode n;
    n.op = Op::MseLoss;
    n.parents = {pred, target};
    n.size = 1;
    return push(std::move(n));
  }

  int bce_loss(int pred, int target, double clamp_eps = 1e-3) {
    check_node(pred);
    check_node(target);
    if (node(pred).size != node(target).size)
      throw Error(ErrorKind::Input, "tape: bce size mismatch");
    if (!(clamp_eps > 0.0 && clamp_eps < 0.5))
      throw Error(ErrorKind::Input, "tape: bce clamp must lie in (0, 0.5)");
    TapeNode n;
    n.op = Op::BceLoss;
    n.parents = {pred, target};
    n.size = 1;
    n.clamp_eps = clamp_eps;
    return push(std::move(n));
  }

  int projection(int u, std::shared_ptr<const Polytope> poly, double tol = 1e-10) {
    check_node(u);
    if (!poly) throw Error(ErrorKind::Input, "tape: projection needs a polytope");
    if (node(u).size != poly->n)
      throw Error(ErrorKind::Input, "tape: projection input size mismatch");
    TapeNode n;
    n.op = Op::Projection;
    n.parents = {u};
    n.size = poly->n;
    n.poly = std::move(poly);
    n.proj_tol = tol;
    return push(std::move(n));
  }

  std::size_t param_count() const { return param_scalars_; }
  std::size_t node_count() const { return nodes_.size(); }

  void set_params(const Vec& theta) {
    if (theta.size() != param_scalars_)
      throw Error(ErrorKind::Input, "tape: parameter vector length mismatch");
    require_finite(theta, "tape: parameters");
    std::size_t off = 0;
    for (std::size_t i = 0; i < param_nodes_; ++i) {
      for (std::size_t j = 0; j < nodes_[i].size; ++j) nodes_[i].value[j] = theta[off + j];
      off += nodes_[i].size;
    }
    forward_done_ = false;
  }

  Vec params() const {
    Vec theta;
    theta.reserve(param_scalars_);
    for (std::size_t i = 0; i < param_nodes_; ++i)
      theta.insert(theta.end(), nodes_[i].value.begin(), nodes_[i].value.end());
    return theta;
  }

  double forward() {
    if (nodes_.empty()) throw Error(ErrorKind::Input, "tape: empty");
    if (nodes_.back().size != 1)
      throw Error(ErrorKind::Input, "tape: output node must be scalar");
    signature_.clear();
    for (TapeNode& n : nodes_) eval(n);
    forward_done_ = true;
    return nodes_.back().value[0];
  }

  // Gradient of the output with respect to the concatenated parameters,
  // using one generalized Jacobian selection per nonsmooth node.
  Vec reverse() {
    if (!forward_done_) throw Error(ErrorKind::Input, "tape: reverse before forward");
    for (TapeNode& n : nodes_) n.adjoint.assign(n.size, 0.0);
    nodes_.back().adjoint[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) propagate(nodes_[i]);
    Vec grad;
    grad.reserve(param_scalars_);
    for (std::size_t i = 0; i < param_nodes_; ++i)
      grad.insert(grad.end(), nodes_[i].adjoint.begin(), nodes_[i].adjoint.end());
    return grad;
  }

  const Vec& value(int id) const {
    check_node(id);
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  const ProjectionResult& projection_result(int id) const {
    check_node(id);
    const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Op::Projection) throw Error(ErrorKind::Input, "tape: not a projection node");
    return n.proj_result;
  }

  const HsFactor& projection_factor(int id) const {
    check_node(id);
    const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Op::Projection) throw Error(ErrorKind::Input, "tape: not a projection node");
    return n.proj_factor;
  }

  const Polytope& projection_polytope(int id) const {
    check_node(id);
    const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Op::Projection) throw Error(ErrorKind::Input, "tape: not a projection node");
    return *n.poly;
  }

  std::vector<int> projection_nodes() const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::Projection) ids.push_back(static_cast<int>(i));
    return ids;
  }

  const std::vector<int>& signature() const { return signature_; }

  // Worst feasibility violation over all projection outputs of the last
  // forward pass; zero when the tape has no projection nodes.
  double max_projection_violation() const {
    if (!forward_done_) throw Error(ErrorKind::Input, "tape: no forward pass yet");
    double worst = 0.0;
    for (const TapeNode& n : nodes_)
      if (n.op == Op::Projection)
        worst = std::max(worst, feasibility_violation(*n.poly, n.value).v_all);
    return worst;
  }

 private:
  int push(TapeNode n) {
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw Error(ErrorKind::Input, "tape: bad node id");
  }

  const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  int binary_elementwise(Op op, int u, int v) {
    check_node(u);
    check_node(v);
    if (node(u).size != node(v).size)
      throw Error(ErrorKind::Input, "tape: elementwise size mismatch");
    TapeNode n;
    n.op = op;
    n.parents = {u, v};
    n.size = node(u).size;
    return push(std::move(n));
  }

  int unary_elementwise(Op op, int u) {
    check_node(u);
    TapeNode n;
    n.op = op;
    n.parents = {u};
    n.size = node(u).size;
    return push(std::move(n));
  }

  int reduction(Op op, int u) {
    check_node(u);
    TapeNode n;
    n.op = op;
    n.parents = {u};
    n.size = 1;
    return push(std::move(n));
  }

  void eval(TapeNode& n) {
    switch (n.op) {
      case Op::Parameter:
      case Op::Constant:
        break;
      case Op::Affine: {
        const Vec& w = node(n.parents[0]).value;
        const Vec& x = node(n.parents[1]).value;
        n.value.assign(n.out_rows, 0.0);
        for (std::size_t r = 0; r < n.out_rows; ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < n.in_cols; ++c) s += w[r * n.in_cols + c] * x[c];
          n.value[r] = s;
        }
        if (n.parents.size() == 3) {
          const Vec& bias = node(n.parents[2]).value;
          for (std::size_t r = 0; r < n.out_rows; ++r) n.value[r] += bias[r];
        }
        break;
      }
      case Op::Add: {
        const Vec& u = node(n.parents[0]).value;
        const Vec& v = node(n.parents[1]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) n.value[i] = u[i] + v[i];
        break;
      }
      case Op::Mul: {
        const Vec& u = node(n.parents[0]).value;
        const Vec& v = node(n.parents[1]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) n.value[i] = u[i] * v[i];
        break;
      }
      case Op::Div: {
        const Vec& u = node(n.parents[0]).value;
        const Vec& v = node(n.parents[1]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) {
          if (v[i] == 0.0) throw Error(ErrorKind::Input, "tape: division by zero");
          n.value[i] = u[i] / v[i];
        }
        break;
      }
      case Op::Relu: {
        const Vec& u = node(n.parents[0]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) {
          n.value[i] = u[i] > 0.0 ? u[i] : 0.0;
          signature_.push_back(u[i] > 0.0 ? 1 : 0);
        }
        break;
      }
      case Op::Sigmoid: {
        const Vec& u = node(n.parents[0]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) n.value[i] = 1.0 / (1.0 + std::exp(-u[i]));
        break;
      }
      case Op::Tanh: {
        const Vec& u = node(n.parents[0]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) n.value[i] = std::tanh(u[i]);
        break;
      }
      case Op::Sqrt: {
        const Vec& u = node(n.parents[0]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) {
          n.value[i] = std::sqrt(u[i] > kSqrtFloor ? u[i] : kSqrtFloor);
          signature_.push_back(u[i] > kSqrtFloor ? 1 : 0);
        }
        break;
      }
      case Op::Square: {
        const Vec& u = node(n.parents[0]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) n.value[i] = u[i] * u[i];
        break;
      }
      case Op::Abs: {
        const Vec& u = node(n.parents[0]).value;
        n.value.resize(n.size);
        for (std::size_t i = 0; i < n.size; ++i) {
          n.value[i] = std::fabs(u[i]);
          signature_.push_back(u[i] > 0.0 ? 1 : (u[i] < 0.0 ? -1 : 0));
        }
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        const Vec& u = node(n.parents[0]).value;
        double s = 0.0;
        for (double x : u) s += x;
        if (n.op == Op::Mean) s /= static_cast<double>(u.size());
        n.value.assign(1, s);
        break;
      }
      case Op::MseLoss: {
        const Vec& pred = node(n.parents[0]).value;
        const Vec& tgt = node(n.parents[1]).value;
        double s = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          double d = pred[i] - tgt[i];
          s += d * d;
        }
        n.value.assign(1, s / static_cast<double>(pred.size()));
        break;
      }
      case Op::BceLoss: {
        const Vec& pred = node(n.parents[0]).value;
        const Vec& tgt = node(n.parents[1]).value;
        double s = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          double zone = 1.0;
          double pc = pred[i];
          if (pc <= n.clamp_eps) {
            pc = n.clamp_eps;
            zone = 0.0;
          } else if (pc >= 1.0 - n.clamp_eps) {
            pc = 1.0 - n.clamp_eps;
            zone = 2.0;
          }
          signature_.push_back(static_cast<int>(zone));
          s -= tgt[i] * std::log(pc) + (1.0 - tgt[i]) * std::log(1.0 - pc);
        }
        n.value.assign(1, s / static_cast<double>(pred.size()));
        break;
      }
      case Op::Projection: {
        ProjectOptions opts;
        opts.tol = n.proj_tol;
        n.proj_result = project(*n.poly, node(n.parents[0]).value, opts);
        n.value = n.proj_result.y;
        n.proj_factor = hs_element(*n.poly, n.proj_result);
        signature_.push_back(static_cast<int>(n.proj_result.active.size()));
        for (std::size_t idx : n.proj_result.active) signature_.push_back(static_cast<int>(idx));
        break;
      }
    }
  }

  void propagate(TapeNode& n) {
    const Vec& g = n.adjoint;
    switch (n.op) {
      case Op::Parameter:
      case Op::Constant:
        break;
      case Op::Affine: {
        TapeNode& wn = nodes_[static_cast<std::size_t>(n.parents[0])];
        TapeNode& xn = nodes_[static_cast<std::size_t>(n.parents[1])];
        const Vec& w = wn.value;
        const Vec& x = xn.value;
        for (std::size_t r = 0; r < n.out_rows; ++r) {
          for (std::size_t c = 0; c < n.in_cols; ++c) {
            wn.adjoint[r * n.in_cols + c] += g[r] * x[c];
            xn.adjoint[c] += g[r] * w[r * n.in_cols + c];
          }
        }
        if (n.parents.size() == 3) {
          TapeNode& bn = nodes_[static_cast<std::size_t>(n.parents[2])];
          for (std::size_t r = 0; r < n.out_rows; ++r) bn.adjoint[r] += g[r];
        }
        break;
      }
      case Op::Add: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        TapeNode& vn = nodes_[static_cast<std::size_t>(n.parents[1])];
        for (std::size_t i = 0; i < n.size; ++i) {
          un.adjoint[i] += g[i];
          vn.adjoint[i] += g[i];
        }
        break;
      }
      case Op::Mul: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        TapeNode& vn = nodes_[static_cast<std::size_t>(n.parents[1])];
        for (std::size_t i = 0; i < n.size; ++i) {
          un.adjoint[i] += g[i] * vn.value[i];
          vn.adjoint[i] += g[i] * un.value[i];
        }
        break;
      }
      case Op::Div: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        TapeNode& vn = nodes_[static_cast<std::size_t>(n.parents[1])];
        for (std::size_t i = 0; i < n.size; ++i) {
          un.adjoint[i] += g[i] / vn.value[i];
          vn.adjoint[i] -= g[i] * un.value[i] / (vn.value[i] * vn.value[i]);
        }
        break;
      }
      case Op::Relu: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        for (std::size_t i = 0; i < n.size; ++i)
          if (un.value[i] > 0.0) un.adjoint[i] += g[i];
        break;
      }
      case Op::Sigmoid: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        for (std::size_t i = 0; i < n.size; ++i)
          un.adjoint[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case Op::Tanh: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        for (std::size_t i = 0; i < n.size; ++i)
          un.adjoint[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case Op::Sqrt: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        for (std::size_t i = 0; i < n.size; ++i)
          if (un.value[i] > kSqrtFloor) un.adjoint[i] += g[i] * 0.5 / n.value[i];
        break;
      }
      case Op::Square: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        for (std::size_t i = 0; i < n.size; ++i) un.adjoint[i] += g[i] * 2.0 * un.value[i];
        break;
      }
      case Op::Abs: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        for (std::size_t i = 0; i < n.size; ++i) {
          double sgn = un.value[i] > 0.0 ? 1.0 : (un.value[i] < 0.0 ? -1.0 : 0.0);
          un.adjoint[i] += g[i] * sgn;
        }
        break;
      }
      case Op::Sum: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        for (double& adj : un.adjoint) adj += g[0];
        break;
      }
      case Op::Mean: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        double share = g[0] / static_cast<double>(un.size);
        for (double& adj : un.adjoint) adj += share;
        break;
      }
      case Op::MseLoss: {
        TapeNode& pn = nodes_[static_cast<std::size_t>(n.parents[0])];
        TapeNode& tn = nodes_[static_cast<std::size_t>(n.parents[1])];
        double scale = 2.0 * g[0] / static_cast<double>(pn.size);
        for (std::size_t i = 0; i < pn.size; ++i) {
          double d = pn.value[i] - tn.value[i];
          pn.adjoint[i] += scale * d;
          tn.adjoint[i] -= scale * d;
        }
        break;
      }
      case Op::BceLoss: {
        TapeNode& pn = nodes_[static_cast<std::size_t>(n.parents[0])];
        TapeNode& tn = nodes_[static_cast<std::size_t>(n.parents[1])];
        double inv = g[0] / static_cast<double>(pn.size);
        for (std::size_t i = 0; i < pn.size; ++i) {
          double p = pn.value[i];
          double pc = p <= n.clamp_eps ? n.clamp_eps
                                       : (p >= 1.0 - n.clamp_eps ? 1.0 - n.clamp_eps : p);
          // the loss is constant in the prediction inside the clamped zones
          if (p > n.clamp_eps && p < 1.0 - n.clamp_eps)
            pn.adjoint[i] -= inv * (tn.value[i] / pc - (1.0 - tn.value[i]) / (1.0 - pc));
          tn.adjoint[i] -= inv * (std::log(pc) - std::log(1.0 - pc));
        }
        break;
      }
      case Op::Projection: {
        TapeNode& un = nodes_[static_cast<std::size_t>(n.parents[0])];
        Vec back = vjp(n.proj_factor, g);
        for (std::size_t i = 0; i < n.size; ++i) un.adjoint[i] += back[i];
        break;
      }
    }
  }

  std::vector<TapeNode> nodes_;
  std::size_t param_scalars_ = 0;
  std::size_t param_nodes_ = 0;
  bool forward_done_ = false;
  std::vector<int> signature_;
};

struct GradcheckEntry {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;  // |analytic - numeric| / max(1, |numeric|)
  bool flagged = false;  // a finite difference probe crossed a nonsmooth branch
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_err = 0.0;  // over unflagged entries only
  std::size_t flagged_count = 0;
};

// Central differences against the reverse sweep at `theta`. Parameters whose
// probes change any nonsmooth branch are flagged instead of judged: a one
// sided selection cannot be expected to match a two sided difference there.
inline GradcheckReport gradcheck(Tape& tape, const Vec& theta, double h) {
  if (!(h >= 1e-8 && h <= 1e-4))
    throw Error(ErrorKind::Input, "gradcheck: h must lie in [1e-8, 1e-4]");

  tape.set_params(theta);
  tape.forward();
  std::vector<int> base_sig = tape.signature();
  Vec analytic = tape.reverse();

  GradcheckReport report;
  report.entries.resize(theta.size());
  Vec probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    tape.set_params(probe);
    double fp = tape.forward();
    bool flag = tape.signature() != base_sig;

    probe[i] = theta[i] - h;
    tape.set_params(probe);
    double fm = tape.forward();
    flag = flag || tape.signature() != base_sig;
    probe[i] = theta[i];

    GradcheckEntry& e = report.entries[i];
    e.analytic = analytic[i];
    e.numeric = (fp - fm) / (2.0 * h);
    e.rel_err = std::fabs(e.analytic - e.numeric) / std::max(1.0, std::fabs(e.numeric));
    e.flagged = flag;
    if (flag)
      ++report.flagged_count;
    else
      report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
  }

  tape.set_params(theta);
  tape.forward();
  return report;
}

}  // namespace polyproj
