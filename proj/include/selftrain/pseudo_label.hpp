// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "selftrain/example.hpp"
#include "selftrain/grid.hpp"
#include "selftrain/model.hpp"

namespace selftrain {

/// Class distribution for one item or cell, with its hard label (lowest
/// index among ties) and score (the max probability).
struct ScoredPrediction {
  std::vector<double> probs;
  int label = 0;
  double score = 0.0;

  static ScoredPrediction from_probs(std::vector<double> probs) {
    if (probs.empty())
      throw std::invalid_argument("prediction needs at least one class");
    ScoredPrediction p;
    p.probs = std::move(probs);
    p.score = p.probs[0];
    for (std::size_t c = 1; c < p.probs.size(); ++c)
      if (p.probs[c] > p.score) {
        p.score = p.probs[c];
        p.label = static_cast<int>(c);
      }
    return p;
  }

  bool is_simplex(double tol = 1e-9) const {
    double s = 0.0;
    for (double v : probs) {
      if (!(v >= 0.0))
        return false;
      s += v;
    }
    return std::abs(s - 1.0) <= tol;
  }
};

/// Per-cell probabilities of one grid, [H, W, classes] row-major.
struct DensePrediction {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<double> probs;

  std::size_t cells() const noexcept { return height * width; }

  ScoredPrediction cell(std::size_t i) const {
    const auto first = probs.begin() + static_cast<std::ptrdiff_t>(i * classes);
    return ScoredPrediction::from_probs(
        std::vector<double>(first, first + static_cast<std::ptrdiff_t>(classes)));
  }

  friend bool operator==(const DensePrediction &,
                         const DensePrediction &) = default;
};

struct PseudoLabelConfig {
  double threshold = 0.5;
  int ignore_label = kIgnoreLabel;

  void validate(std::size_t classes) const {
    if (std::isnan(threshold))
      throw std::invalid_argument("pseudo-label threshold is NaN");
    if (ignore_label >= 0 && ignore_label < static_cast<int>(classes))
      throw std::invalid_argument("ignore label collides with a real class");
  }
};

struct MultiScaleConfig {
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};

  void validate() const {
    if (scales.empty())
      throw std::invalid_argument("multi-scale inference needs a scale");
    for (double s : scales)
      if (!(s > 0.0) || !std::isfinite(s))
        throw std::invalid_argument("scales must be positive and finite");
  }
};

/// Softmax predictions for vector examples, one forward over the batch.
inline std::vector<ScoredPrediction>
predict_classes(const ParamSet &params, const std::vector<Example> &items) {
  if (items.empty())
    return {};
  const Tensor probs = softmax_last(model_forward(params, stack_features(items)));
  const std::size_t k = probs.shape().back();
  std::vector<ScoredPrediction> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    out.push_back(ScoredPrediction::from_probs(
        std::vector<double>(probs.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                            probs.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k))));
  return out;
}

namespace detail {

inline DensePrediction dense_probs(const ParamSet &params,
                                   const std::vector<double> &features,
                                   std::size_t h, std::size_t w,
                                   std::size_t c) {
  const Tensor batch(Shape{1, h, w, c}, features);
  const Tensor probs = softmax_last(model_forward(params, batch));
  return {h, w, params.spec.classes, probs.data()};
}

} // namespace detail

/// Single-scale dense inference.
inline DensePrediction predict_dense(const ParamSet &params, const Example &ex) {
  if (!ex.is_grid())
    throw std::invalid_argument("dense inference needs a grid example");
  return detail::dense_probs(params, ex.features, ex.height(), ex.width(),
                             ex.channels());
}

/// Runs the model on the grid resampled by each scale, maps each probability
/// map back to the input grid, and averages them uniformly.
inline DensePrediction multi_scale_infer(const ParamSet &params,
                                         const Example &ex,
                                         const MultiScaleConfig &cfg) {
  if (params.spec.kind != ModelKind::DenseGrid)
    throw std::invalid_argument("multi-scale inference needs a dense-grid model");
  if (!ex.is_grid())
    throw std::invalid_argument("multi-scale inference needs a grid example");
  cfg.validate();
  const std::size_t h = ex.height(), w = ex.width(), c = ex.channels();
  const std::size_t k = params.spec.classes;

  std::vector<DensePrediction> maps;
  for (double s : cfg.scales) {
    const std::size_t sh = scaled_extent(h, s), sw = scaled_extent(w, s);
    if (sh == 0 || sw == 0)
      throw std::invalid_argument("scale " + std::to_string(s) +
                                  " shrinks the grid below one cell");
    const auto feats = resample_bilinear(ex.features, h, w, c, sh, sw);
    DensePrediction p = detail::dense_probs(params, feats, sh, sw, c);
    p.probs = resample_bilinear(p.probs, sh, sw, k, h, w);
    p.height = h;
    p.width = w;
    maps.push_back(std::move(p));
  }
  if (maps.size() == 1)
    return std::move(maps.front());

  DensePrediction avg{h, w, k, std::vector<double>(h * w * k, 0.0)};
  for (const auto &m : maps)
    for (std::size_t i = 0; i < avg.probs.size(); ++i)
      avg.probs[i] += m.probs[i];
  const double n = static_cast<double>(maps.size());
  for (std::size_t cell = 0; cell < h * w; ++cell) {
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      z += (avg.probs[cell * k + j] /= n);
    for (std::size_t j = 0; j < k; ++j)
      avg.probs[cell * k + j] /= z;
  }
  return avg;
}

/// Hard label when the score reaches the threshold; otherwise the item is
/// left out of the pseudo dataset.
inline std::optional<int>
pseudo_label_classification(const ScoredPrediction &pred,
                            const PseudoLabelConfig &cfg) {
  if (pred.score >= cfg.threshold)
    return pred.label;
  return std::nullopt;
}

struct DenseLabels {
  std::vector<int> labels;
  std::vector<std::uint8_t> ignore;
  std::size_t kept_cells = 0;
  /// Mean score over kept cells; 0 when none are kept.
  double mean_score = 0.0;
};

/// Cells below the threshold get the ignore label.
inline DenseLabels pseudo_label_dense(const DensePrediction &pred,
                                      const PseudoLabelConfig &cfg) {
  cfg.validate(pred.classes);
  DenseLabels out;
  out.labels.resize(pred.cells());
  out.ignore.resize(pred.cells());
  double score_sum = 0.0;
  for (std::size_t i = 0; i < pred.cells(); ++i) {
    const ScoredPrediction p = pred.cell(i);
    if (p.score >= cfg.threshold) {
      out.labels[i] = p.label;
      score_sum += p.score;
      ++out.kept_cells;
    } else {
      out.labels[i] = cfg.ignore_label;
      out.ignore[i] = 1;
    }
  }
  if (out.kept_cells)
    out.mean_score = score_sum / static_cast<double>(out.kept_cells);
  return out;
}

struct PseudoDataset {
  std::vector<Example> examples;
  std::size_t pool_size = 0;
  double kept_fraction = 0.0;
  std::vector<std::string> warnings;
};

/// Labels an unlabeled pool once with a fixed teacher. Vector items below
/// the threshold and grids with every cell ignored are dropped. Output
/// keeps pool order.
inline PseudoDataset build_pseudo_dataset(const ParamSet &teacher,
                                          const std::vector<Example> &pool,
                                          const PseudoLabelConfig &label_cfg,
                                          const MultiScaleConfig &scale_cfg = {}) {
  PseudoDataset out;
  out.pool_size = pool.size();
  if (pool.empty()) {
    out.warnings.push_back("empty unlabeled pool; pseudo dataset is empty");
    return out;
  }
  label_cfg.validate(teacher.spec.classes);

  if (teacher.spec.kind == ModelKind::Classifier) {
    const auto preds = predict_classes(teacher, pool);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto label = pseudo_label_classification(preds[i], label_cfg);
      if (!label)
        continue;
      Example e = pool[i].unlabeled_copy();
      e.target = {*label};
      e.source = Source::Pseudo;
      e.score = preds[i].score;
      out.examples.push_back(std::move(e));
    }
  } else {
    for (const Example &item : pool) {
      const DenseLabels dl =
          pseudo_label_dense(multi_scale_infer(teacher, item, scale_cfg), label_cfg);
      if (dl.kept_cells == 0)
        continue;
      Example e = item.unlabeled_copy();
      e.target = dl.labels;
      e.ignore = dl.ignore;
      e.source = Source::Pseudo;
      e.score = dl.mean_score;
      out.examples.push_back(std::move(e));
    }
  }
  out.kept_fraction = static_cast<double>(out.examples.size()) /
                      static_cast<double>(pool.size());
  return out;
}

} // namespace selftrain
