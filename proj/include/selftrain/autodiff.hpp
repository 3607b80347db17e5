// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selftrain/tensor.hpp"

namespace selftrain {

// Reverse-mode differentiation over a define-then-run graph. Nodes are
// appended in topological order (parents always precede children), so
// forward is an ascending sweep and backward a descending one.

enum class Op {
  Parameter,
  Input,
  Add,
  Mul,
  MatMul,
  Relu,
  Exp,
  Log,
  Softmax,
  Sum,
  Mean,
  CrossEntropy,
  Flatten,
  RestoreRows,
};

inline const char *op_name(Op op) {
  switch (op) {
  case Op::Parameter: return "parameter";
  case Op::Input: return "input";
  case Op::Add: return "add";
  case Op::Mul: return "mul";
  case Op::MatMul: return "matmul";
  case Op::Relu: return "relu";
  case Op::Exp: return "exp";
  case Op::Log: return "log";
  case Op::Softmax: return "softmax";
  case Op::Sum: return "sum";
  case Op::Mean: return "mean";
  case Op::CrossEntropy: return "cross_entropy";
  case Op::Flatten: return "flatten";
  case Op::RestoreRows: return "restore_rows";
  }
  return "?";
}

using NodeId = std::size_t;
using Bindings = std::map<std::string, Tensor, std::less<>>;
using Gradients = std::map<std::string, Tensor, std::less<>>;

class GraphError : public std::runtime_error {
public:
  GraphError(NodeId node, Op op, const std::string &what)
      : std::runtime_error("node " + std::to_string(node) + " (" +
                           op_name(op) + "): " + what),
        node_(node) {}
  NodeId node() const noexcept { return node_; }

private:
  NodeId node_;
};

struct ForwardResult {
  Tensor value;
  /// First evaluated node whose value contains inf/nan, if any.
  std::optional<NodeId> non_finite_at;

  bool finite() const noexcept { return !non_finite_at.has_value(); }
};

class Graph {
public:
  /// Differentiable leaf. backward() reports a gradient for every parameter.
  NodeId parameter(std::string name) { return leaf(Op::Parameter, std::move(name)); }
  /// Constant leaf (data, targets, coefficients). Never differentiated.
  NodeId input(std::string name) { return leaf(Op::Input, std::move(name)); }

  /// Elementwise; `b` may also be a scalar or match the trailing dims of `a`.
  NodeId add(NodeId a, NodeId b) { return node(Op::Add, {a, b}); }
  /// Elementwise; either side may be a scalar.
  NodeId mul(NodeId a, NodeId b) { return node(Op::Mul, {a, b}); }
  NodeId matmul(NodeId a, NodeId b) { return node(Op::MatMul, {a, b}); }
  NodeId relu(NodeId a) { return node(Op::Relu, {a}); }
  NodeId exp(NodeId a) { return node(Op::Exp, {a}); }
  NodeId log(NodeId a) { return node(Op::Log, {a}); }
  /// Over the last dimension.
  NodeId softmax(NodeId a) { return node(Op::Softmax, {a}); }
  NodeId sum(NodeId a) { return node(Op::Sum, {a}); }
  NodeId mean(NodeId a) { return node(Op::Mean, {a}); }
  /// Mean softmax cross-entropy over rows of `logits` [M, C]. `targets` is a
  /// constant [M] of class indices; negative entries are ignored rows. With
  /// no valid rows the loss is 0.
  NodeId cross_entropy(NodeId logits, NodeId targets) {
    return node(Op::CrossEntropy, {logits, targets});
  }
  /// [..., F] -> [prod(...), F]
  NodeId flatten(NodeId a) { return node(Op::Flatten, {a}); }
  /// [R, C] -> like.shape[:-1] + [C]; `like` only donates its shape.
  NodeId restore_rows(NodeId a, NodeId like) {
    return node(Op::RestoreRows, {a, like});
  }

  void set_output(NodeId id) {
    check_id(id);
    output_ = id;
  }
  NodeId output() const {
    if (nodes_.empty())
      throw std::logic_error("graph is empty");
    return output_.value_or(nodes_.size() - 1);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(NodeId id) const { return nodes_.at(id).op; }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto &n : nodes_)
      if (n.op == Op::Parameter)
        names.push_back(n.name);
    return names;
  }

  bool has_leaf(std::string_view name) const {
    return leaves_.find(name) != leaves_.end();
  }

  /// Sets a leaf value and invalidates everything downstream of it.
  void bind(std::string_view name, Tensor value) {
    auto it = leaves_.find(name);
    if (it == leaves_.end())
      throw std::invalid_argument("graph has no leaf named '" +
                                  std::string(name) + "'");
    const NodeId id = it->second;
    nodes_[id].value = std::move(value);
    nodes_[id].valid = true;
    std::vector<char> dirty(nodes_.size(), 0);
    dirty[id] = 1;
    for (NodeId i = id + 1; i < nodes_.size(); ++i) {
      for (NodeId p : nodes_[i].parents)
        if (dirty[p]) {
          dirty[i] = 1;
          nodes_[i].valid = false;
          break;
        }
    }
  }

  /// Evaluates `id` and any stale ancestors; fresh values are reused.
  const Tensor &eval(NodeId id) {
    check_id(id);
    evaluate(id);
    return nodes_[id].value;
  }

  const Tensor &value(NodeId id) const {
    check_id(id);
    if (!nodes_[id].valid)
      throw std::logic_error("node " + std::to_string(id) + " not evaluated");
    return nodes_[id].value;
  }

  ForwardResult forward(const Bindings &inputs) {
    return forward(inputs, output());
  }

  ForwardResult forward(const Bindings &inputs, NodeId target) {
    for (const auto &[name, t] : inputs)
      bind(name, t);
    non_finite_.reset();
    evaluate(target);
    return ForwardResult{nodes_[target].value, non_finite_};
  }

  /// First non-finite value seen by evaluation since the last forward().
  std::optional<NodeId> non_finite_at() const noexcept { return non_finite_; }

  Gradients backward() { return backward(output()); }

  /// Gradient of scalar node `target` with respect to every parameter.
  Gradients backward(NodeId target) {
    check_id(target);
    const Node &out = nodes_[target];
    if (!out.valid)
      throw GraphError(target, out.op, "backward before forward");
    if (!out.value.is_scalar())
      throw GraphError(target, out.op,
                       "backward needs a scalar output, got shape " +
                           shape_str(out.value.shape()));

    std::vector<char> needed(target + 1, 0);
    needed[target] = 1;
    for (NodeId i = target + 1; i-- > 0;)
      if (needed[i])
        for (NodeId p : nodes_[i].parents)
          needed[p] = 1;

    std::vector<std::optional<Tensor>> grads(target + 1);
    grads[target] = Tensor(out.value.shape(), 1.0);
    for (NodeId i = target + 1; i-- > 0;) {
      if (!needed[i] || !grads[i] || !nodes_[i].requires_grad)
        continue;
      propagate(i, *grads[i], grads);
    }

    Gradients result;
    for (NodeId i = 0; i < nodes_.size(); ++i) {
      const Node &n = nodes_[i];
      if (n.op != Op::Parameter)
        continue;
      if (i <= target && grads[i])
        result.emplace(n.name, std::move(*grads[i]));
      else if (n.valid)
        result.emplace(n.name, Tensor(n.value.shape(), 0.0));
    }
    return result;
  }

private:
  struct Node {
    Op op;
    std::vector<NodeId> parents;
    std::string name;
    Tensor value;
    bool valid = false;
    bool requires_grad = false;
  };

  NodeId leaf(Op op, std::string name) {
    if (leaves_.count(name))
      throw std::invalid_argument("duplicate leaf name '" + name + "'");
    Node n{op, {}, name, Tensor{}, false, op == Op::Parameter};
    nodes_.push_back(std::move(n));
    leaves_.emplace(std::move(name), nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  NodeId node(Op op, std::vector<NodeId> parents) {
    bool rg = false;
    for (NodeId p : parents) {
      check_id(p);
      rg = rg || nodes_[p].requires_grad;
    }
    // Targets and shape donors never carry gradient.
    if (op == Op::CrossEntropy || op == Op::RestoreRows)
      rg = nodes_[parents[0]].requires_grad;
    nodes_.push_back(Node{op, std::move(parents), {}, Tensor{}, false, rg});
    return nodes_.size() - 1;
  }

  void check_id(NodeId id) const {
    if (id >= nodes_.size())
      throw std::out_of_range("no graph node " + std::to_string(id));
  }

  void evaluate(NodeId id) {
    Node &n = nodes_[id];
    if (n.valid)
      return;
    if (n.op == Op::Parameter || n.op == Op::Input)
      throw GraphError(id, n.op, "leaf '" + n.name + "' is not bound");
    for (NodeId p : n.parents)
      evaluate(p);
    n.value = compute(id);
    n.valid = true;
    if (!non_finite_ && !n.value.all_finite())
      non_finite_ = id;
  }

  // Broadcast patterns supported by add/mul.
  enum class Bcast { Same, ScalarA, ScalarB, RowB };

  Bcast broadcast(NodeId id, const Tensor &a, const Tensor &b,
                  bool allow_rows) const {
    if (a.shape() == b.shape())
      return Bcast::Same;
    if (b.is_scalar())
      return Bcast::ScalarB;
    if (a.is_scalar())
      return Bcast::ScalarA;
    if (allow_rows && b.rank() < a.rank() &&
        std::equal(b.shape().begin(), b.shape().end(),
                   a.shape().end() - static_cast<std::ptrdiff_t>(b.rank())))
      return Bcast::RowB;
    throw GraphError(id, nodes_[id].op,
                     "incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }

  Tensor compute(NodeId id) const {
    const Node &n = nodes_[id];
    auto in = [&](std::size_t k) -> const Tensor & {
      return nodes_[n.parents[k]].value;
    };
    auto fail = [&](const std::string &what) -> GraphError {
      return GraphError(id, n.op, what);
    };

    switch (n.op) {
    case Op::Add:
    case Op::Mul: {
      const Tensor &a = in(0), &b = in(1);
      const bool is_add = n.op == Op::Add;
      const Bcast bc = broadcast(id, a, b, is_add);
      const Tensor &big = bc == Bcast::ScalarA ? b : a;
      Tensor out(big.shape());
      auto combine = [is_add](double x, double y) {
        return is_add ? x + y : x * y;
      };
      for (std::size_t i = 0; i < out.size(); ++i) {
        switch (bc) {
        case Bcast::Same: out[i] = combine(a[i], b[i]); break;
        case Bcast::ScalarB: out[i] = combine(a[i], b[0]); break;
        case Bcast::ScalarA: out[i] = combine(a[0], b[i]); break;
        case Bcast::RowB: out[i] = combine(a[i], b[i % b.size()]); break;
        }
      }
      return out;
    }
    case Op::MatMul: {
      const Tensor &a = in(0), &b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw fail("matmul of " + shape_str(a.shape()) + " by " +
                   shape_str(b.shape()));
      const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
      Tensor out(Shape{m, p});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double aij = a[i * k + j];
          for (std::size_t c = 0; c < p; ++c)
            out[i * p + c] += aij * b[j * p + c];
        }
      return out;
    }
    case Op::Relu: {
      Tensor out = in(0);
      for (double &v : out.data())
        v = v > 0.0 ? v : 0.0;
      return out;
    }
    case Op::Exp: {
      Tensor out = in(0);
      for (double &v : out.data())
        v = std::exp(v);
      return out;
    }
    case Op::Log: {
      Tensor out = in(0);
      for (double &v : out.data())
        v = std::log(v);
      return out;
    }
    case Op::Softmax: {
      Tensor out = in(0);
      const std::size_t cols = out.shape().back();
      for (std::size_t r = 0; r < out.size() / cols; ++r) {
        double *row = out.data().data() + r * cols;
        const double mx = *std::max_element(row, row + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          z += (row[c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < cols; ++c)
          row[c] /= z;
      }
      return out;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor &a = in(0);
      double s = 0.0;
      for (double v : a.data())
        s += v;
      if (n.op == Op::Mean)
        s /= static_cast<double>(a.size());
      return Tensor::scalar(s);
    }
    case Op::CrossEntropy: {
      const Tensor &z = in(0), &t = in(1);
      if (z.rank() != 2)
        throw fail("logits must be [rows, classes], got " +
                   shape_str(z.shape()));
      const std::size_t rows = z.dim(0), cols = z.dim(1);
      if (t.size() != rows)
        throw fail("targets " + shape_str(t.shape()) + " do not match " +
                   std::to_string(rows) + " rows");
      double total = 0.0;
      std::size_t count = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        if (t[r] < 0.0)
          continue;
        const auto cls = static_cast<std::size_t>(t[r]);
        if (cls >= cols || static_cast<double>(cls) != t[r])
          throw fail("target " + std::to_string(t[r]) + " out of range");
        const double *row = z.data().data() + r * cols;
        const double mx = *std::max_element(row, row + cols);
        double se = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          se += std::exp(row[c] - mx);
        total += mx + std::log(se) - row[cls];
        ++count;
      }
      return Tensor::scalar(count ? total / static_cast<double>(count) : 0.0);
    }
    case Op::Flatten: {
      const Tensor &a = in(0);
      const std::size_t cols = a.shape().back();
      return a.reshaped(Shape{a.size() / cols, cols});
    }
    case Op::RestoreRows: {
      const Tensor &a = in(0), &like = in(1);
      if (a.rank() != 2)
        throw fail("expects [rows, cols], got " + shape_str(a.shape()));
      Shape s(like.shape().begin(), like.shape().end() - 1);
      if (shape_size(s) != a.dim(0))
        throw fail("cannot restore " + shape_str(a.shape()) + " onto " +
                   shape_str(like.shape()));
      s.push_back(a.dim(1));
      return a.reshaped(std::move(s));
    }
    case Op::Parameter:
    case Op::Input:
      break;
    }
    throw fail("unhandled op");
  }

  void accumulate(std::vector<std::optional<Tensor>> &grads, NodeId to,
                  Tensor g) const {
    if (!nodes_[to].requires_grad)
      return;
    auto &slot = grads[to];
    if (!slot) {
      slot = std::move(g);
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i)
      (*slot)[i] += g[i];
  }

  void propagate(NodeId id, const Tensor &g,
                 std::vector<std::optional<Tensor>> &grads) const {
    const Node &n = nodes_[id];
    auto pid = [&](std::size_t k) { return n.parents[k]; };
    auto in = [&](std::size_t k) -> const Tensor & {
      return nodes_[n.parents[k]].value;
    };

    switch (n.op) {
    case Op::Add:
    case Op::Mul: {
      const Tensor &a = in(0), &b = in(1);
      const bool is_add = n.op == Op::Add;
      const Bcast bc = broadcast(id, a, b, is_add);
      Tensor ga(a.shape()), gb(b.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t ia = bc == Bcast::ScalarA ? 0 : i;
        const std::size_t ib = bc == Bcast::Same      ? i
                               : bc == Bcast::ScalarA ? i
                               : bc == Bcast::RowB    ? i % b.size()
                                                      : 0;
        ga[ia] += is_add ? g[i] : g[i] * b[ib];
        gb[ib] += is_add ? g[i] : g[i] * a[ia];
      }
      accumulate(grads, pid(0), std::move(ga));
      accumulate(grads, pid(1), std::move(gb));
      return;
    }
    case Op::MatMul: {
      const Tensor &a = in(0), &b = in(1);
      const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
      if (nodes_[pid(0)].requires_grad) {
        Tensor ga(a.shape());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < p; ++c)
              s += g[i * p + c] * b[j * p + c];
            ga[i * k + j] = s;
          }
        accumulate(grads, pid(0), std::move(ga));
      }
      if (nodes_[pid(1)].requires_grad) {
        Tensor gb(b.shape());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double aij = a[i * k + j];
            for (std::size_t c = 0; c < p; ++c)
              gb[j * p + c] += aij * g[i * p + c];
          }
        accumulate(grads, pid(1), std::move(gb));
      }
      return;
    }
    case Op::Relu: {
      const Tensor &x = in(0);
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i)
        gx[i] = x[i] > 0.0 ? g[i] : 0.0;
      accumulate(grads, pid(0), std::move(gx));
      return;
    }
    case Op::Exp: {
      Tensor gx(n.value.shape());
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] = g[i] * n.value[i];
      accumulate(grads, pid(0), std::move(gx));
      return;
    }
    case Op::Log: {
      const Tensor &x = in(0);
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i)
        gx[i] = g[i] / x[i];
      accumulate(grads, pid(0), std::move(gx));
      return;
    }
    case Op::Softmax: {
      const Tensor &y = n.value;
      const std::size_t cols = y.shape().back();
      Tensor gx(y.shape());
      for (std::size_t r = 0; r < y.size() / cols; ++r) {
        const std::size_t o = r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c)
          dot += g[o + c] * y[o + c];
        for (std::size_t c = 0; c < cols; ++c)
          gx[o + c] = y[o + c] * (g[o + c] - dot);
      }
      accumulate(grads, pid(0), std::move(gx));
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor &x = in(0);
      const double scale =
          n.op == Op::Mean ? g[0] / static_cast<double>(x.size()) : g[0];
      accumulate(grads, pid(0), Tensor(x.shape(), scale));
      return;
    }
    case Op::CrossEntropy: {
      const Tensor &z = in(0), &t = in(1);
      const std::size_t rows = z.dim(0), cols = z.dim(1);
      std::size_t count = 0;
      for (std::size_t r = 0; r < rows; ++r)
        count += t[r] >= 0.0;
      Tensor gz(z.shape());
      if (count) {
        const double scale = g[0] / static_cast<double>(count);
        for (std::size_t r = 0; r < rows; ++r) {
          if (t[r] < 0.0)
            continue;
          const double *row = z.data().data() + r * cols;
          const double mx = *std::max_element(row, row + cols);
          double se = 0.0;
          for (std::size_t c = 0; c < cols; ++c)
            se += std::exp(row[c] - mx);
          const auto cls = static_cast<std::size_t>(t[r]);
          for (std::size_t c = 0; c < cols; ++c) {
            const double p = std::exp(row[c] - mx) / se;
            gz[r * cols + c] = scale * (p - (c == cls ? 1.0 : 0.0));
          }
        }
      }
      accumulate(grads, pid(0), std::move(gz));
      return;
    }
    case Op::Flatten:
    case Op::RestoreRows:
      accumulate(grads, pid(0), g.reshaped(in(0).shape()));
      return;
    case Op::Parameter:
    case Op::Input:
      return;
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> leaves_;
  std::optional<NodeId> output_;
  std::optional<NodeId> non_finite_;
};

/// Maximum relative error between backward() and central differences over
/// every element of every parameter bound in `point`. Elements whose
/// analytic and numeric values are both below 1e-8 in magnitude use the
/// absolute error instead.
inline double grad_check(Graph &graph, const Bindings &point, double epsilon) {
  if (!(epsilon > 0.0))
    throw std::invalid_argument("grad_check epsilon must be positive");
  const NodeId out = graph.output();
  graph.forward(point, out);
  const Gradients analytic = graph.backward(out);

  double worst = 0.0;
  for (const auto &[name, base] : point) {
    auto g = analytic.find(name);
    if (g == analytic.end())
      continue;
    Tensor probe = base;
    for (std::size_t i = 0; i < base.size(); ++i) {
      probe[i] = base[i] + epsilon;
      graph.bind(name, probe);
      const double up = graph.eval(out).item();
      probe[i] = base[i] - epsilon;
      graph.bind(name, probe);
      const double down = graph.eval(out).item();
      probe[i] = base[i];

      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = g->second[i];
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double err =
          denom < 1e-8 ? std::abs(a - numeric) : std::abs(a - numeric) / denom;
      worst = std::max(worst, err);
    }
    graph.bind(name, base);
  }
  return worst;
}

} // namespace selftrain
