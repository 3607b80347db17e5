// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "selftrain/example.hpp"
#include "selftrain/model.hpp"
#include "selftrain/pseudo_label.hpp"

namespace selftrain {

struct Metrics {
  std::string name;
  /// Empty when the metric is undefined (e.g. every cell ignored).
  std::optional<double> value;
};

/// Accumulates per-class intersections and unions; cells flagged ignored
/// are excluded from both sets.
class IouAccumulator {
public:
  explicit IouAccumulator(std::size_t classes)
      : inter_(classes, 0), uni_(classes, 0) {}

  void add(int pred, int truth) {
    const auto k = static_cast<int>(inter_.size());
    if (pred < 0 || pred >= k || truth < 0 || truth >= k)
      throw std::out_of_range("label outside class range in mIOU");
    if (pred == truth) {
      ++inter_[static_cast<std::size_t>(pred)];
      ++uni_[static_cast<std::size_t>(pred)];
    } else {
      ++uni_[static_cast<std::size_t>(pred)];
      ++uni_[static_cast<std::size_t>(truth)];
    }
  }

  /// Mean IoU over classes present in prediction or truth.
  std::optional<double> value() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < inter_.size(); ++c) {
      if (uni_[c] == 0)
        continue;
      sum += static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
      ++n;
    }
    if (n == 0)
      return std::nullopt;
    return sum / static_cast<double>(n);
  }

private:
  std::vector<std::size_t> inter_;
  std::vector<std::size_t> uni_;
};

inline std::optional<double> mean_iou(const std::vector<int> &pred,
                                      const std::vector<int> &truth,
                                      const std::vector<std::uint8_t> &ignore,
                                      std::size_t classes) {
  if (pred.size() != truth.size() ||
      (!ignore.empty() && ignore.size() != truth.size()))
    throw std::invalid_argument("mIOU inputs differ in size");
  IouAccumulator acc(classes);
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (ignore.empty() || !ignore[i])
      acc.add(pred[i], truth[i]);
  return acc.value();
}

/// Accuracy for vector tasks, dataset-pooled mIOU for grid tasks.
inline Metrics evaluate_metrics(const ParamSet &params,
                                const std::vector<Example> &data) {
  if (params.spec.kind == ModelKind::Classifier) {
    Metrics m{"accuracy", std::nullopt};
    if (data.empty())
      return m;
    const auto preds = predict_classes(params, data);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!data[i].labeled())
        throw std::invalid_argument("evaluation data must be labeled");
      correct += preds[i].label == data[i].target[0];
    }
    m.value = static_cast<double>(correct) / static_cast<double>(data.size());
    return m;
  }

  IouAccumulator acc(params.spec.classes);
  for (const Example &ex : data) {
    if (!ex.labeled())
      throw std::invalid_argument("evaluation data must be labeled");
    const DensePrediction p = predict_dense(params, ex);
    for (std::size_t i = 0; i < ex.cells(); ++i)
      if (!ex.ignore[i])
        acc.add(p.cell(i).label, ex.target[i]);
  }
  return {"miou", acc.value()};
}

} // namespace selftrain
