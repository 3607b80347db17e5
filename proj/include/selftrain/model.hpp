// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selftrain/autodiff.hpp"
#include "selftrain/random.hpp"
#include "selftrain/tensor.hpp"

namespace selftrain {

enum class ModelKind { Classifier, DenseGrid };

/// Relu MLP. A DenseGrid model applies the same MLP to every cell of an
/// [N, H, W, F] grid and emits [N, H, W, classes].
struct ModelSpec {
  ModelKind kind = ModelKind::Classifier;
  std::size_t input_width = 2;
  std::vector<std::size_t> hidden{16, 16};
  std::size_t classes = 2;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  /// Width of the auxiliary head used by joint training; 0 disables it.
  std::size_t aux_classes = 0;

  void validate() const {
    if (input_width == 0)
      throw std::invalid_argument("model input width must be positive");
    if (hidden.empty())
      throw std::invalid_argument("model needs at least one hidden layer");
    for (std::size_t h : hidden)
      if (h == 0)
        throw std::invalid_argument("hidden widths must be positive");
    if (classes < 2)
      throw std::invalid_argument("model needs at least two classes");
    if (kind == ModelKind::DenseGrid && (grid_h == 0 || grid_w == 0))
      throw std::invalid_argument("dense-grid model needs a grid shape");
  }

  friend bool operator==(const ModelSpec &, const ModelSpec &) = default;
};

/// Named model tensors in layer order, plus the seed that produced them.
struct ParamSet {
  ModelSpec spec;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor *find(std::string_view name) const {
    for (const auto &[n, t] : tensors)
      if (n == name)
        return &t;
    return nullptr;
  }
  Tensor *find(std::string_view name) {
    for (auto &[n, t] : tensors)
      if (n == name)
        return &t;
    return nullptr;
  }
  const Tensor &at(std::string_view name) const {
    if (const Tensor *t = find(name))
      return *t;
    throw std::out_of_range("no parameter '" + std::string(name) + "'");
  }
  Tensor &at(std::string_view name) {
    if (Tensor *t = find(name))
      return *t;
    throw std::out_of_range("no parameter '" + std::string(name) + "'");
  }

  bool all_finite() const {
    for (const auto &[n, t] : tensors)
      if (!t.all_finite())
        return false;
    return true;
  }

  friend bool operator==(const ParamSet &, const ParamSet &) = default;
};

inline bool is_weight_name(std::string_view name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() &&
         name.substr(name.size() - suffix.size()) == suffix;
}

namespace detail {

inline void push_dense(ParamSet &ps, const std::string &prefix,
                       std::size_t fan_in, std::size_t fan_out, Rng &rng) {
  // He-uniform keeps relu activations at unit scale.
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor w(Shape{fan_in, fan_out});
  for (double &v : w.data())
    v = rng.uniform(-limit, limit);
  ps.tensors.emplace_back(prefix + ".weight", std::move(w));
  ps.tensors.emplace_back(prefix + ".bias", Tensor(Shape{fan_out}, 0.0));
}

} // namespace detail

/// Deterministic per (spec, seed). The auxiliary head draws from its own
/// stream so adding it never changes the trunk or main head.
inline ParamSet init_params(const ModelSpec &spec, std::uint64_t seed) {
  spec.validate();
  ParamSet ps{spec, seed, {}};
  Rng rng(derive_seed(seed, 1));
  std::size_t width = spec.input_width;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    detail::push_dense(ps, "layer" + std::to_string(i), width, spec.hidden[i],
                       rng);
    width = spec.hidden[i];
  }
  detail::push_dense(ps, "head", width, spec.classes, rng);
  if (spec.aux_classes > 0) {
    Rng aux(derive_seed(seed, 2));
    detail::push_dense(ps, "aux_head", width, spec.aux_classes, aux);
  }
  return ps;
}

/// Parameter leaves of one model inside a graph. Several branches (human
/// batch, pseudo batch, auxiliary batch) may share the same leaves.
class ModelNodes {
public:
  ModelNodes(Graph &graph, const ModelSpec &spec) : spec_(spec) {
    spec.validate();
    for (std::size_t i = 0; i < spec.hidden.size(); ++i)
      declare(graph, "layer" + std::to_string(i));
    declare(graph, "head");
    if (spec.aux_classes > 0)
      declare(graph, "aux_head");
  }

  /// Main-head logits for input node `x`.
  NodeId logits(Graph &graph, NodeId x) const {
    return apply_head(graph, x, "head");
  }

  NodeId aux_logits(Graph &graph, NodeId x) const {
    if (spec_.aux_classes == 0)
      throw std::logic_error("model has no auxiliary head");
    return apply_head(graph, x, "aux_head");
  }

  static void bind(Graph &graph, const ParamSet &params) {
    for (const auto &[name, t] : params.tensors)
      if (graph.has_leaf(name))
        graph.bind(name, t);
  }

  const ModelSpec &spec() const noexcept { return spec_; }

private:
  void declare(Graph &graph, const std::string &prefix) {
    layers_[prefix] = {graph.parameter(prefix + ".weight"),
                       graph.parameter(prefix + ".bias")};
  }

  NodeId dense(Graph &graph, NodeId h, const std::string &prefix) const {
    const auto &[w, b] = layers_.at(prefix);
    return graph.add(graph.matmul(h, w), b);
  }

  NodeId apply_head(Graph &graph, NodeId x, const std::string &head) const {
    const bool grid = spec_.kind == ModelKind::DenseGrid;
    NodeId h = grid ? graph.flatten(x) : x;
    for (std::size_t i = 0; i < spec_.hidden.size(); ++i)
      h = graph.relu(dense(graph, h, "layer" + std::to_string(i)));
    NodeId out = dense(graph, h, head);
    return grid ? graph.restore_rows(out, x) : out;
  }

  ModelSpec spec_;
  std::map<std::string, std::pair<NodeId, NodeId>> layers_;
};

inline void check_batch_shape(const ModelSpec &spec, const Tensor &batch) {
  if (spec.kind == ModelKind::Classifier) {
    if (batch.rank() != 2 || batch.dim(1) != spec.input_width)
      throw std::invalid_argument("classifier expects [N, " +
                                  std::to_string(spec.input_width) +
                                  "] batch, got " + shape_str(batch.shape()));
  } else if (batch.rank() != 4 || batch.dim(3) != spec.input_width) {
    throw std::invalid_argument("dense-grid model expects [N, H, W, " +
                                std::to_string(spec.input_width) +
                                "] batch, got " + shape_str(batch.shape()));
  }
}

/// Logits [N, classes] or [N, H, W, classes].
inline Tensor model_forward(const ParamSet &params, const Tensor &batch,
                            bool aux_head = false) {
  check_batch_shape(params.spec, batch);
  Graph g;
  ModelNodes nodes(g, params.spec);
  const NodeId x = g.input("x");
  const NodeId out = aux_head ? nodes.aux_logits(g, x) : nodes.logits(g, x);
  ModelNodes::bind(g, params);
  g.bind("x", batch);
  return g.eval(out);
}

/// Row-wise softmax over the last dimension.
inline Tensor softmax_last(const Tensor &logits) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.softmax(x);
  g.bind("x", logits);
  return g.eval(y);
}

} // namespace selftrain
