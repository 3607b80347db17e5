// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "selftrain/tensor.hpp"

namespace selftrain {

/// Reserved label for dense cells excluded from the loss.
inline constexpr int kIgnoreLabel = 255;

enum class Source { Human, Pseudo };

inline const char *source_name(Source s) {
  return s == Source::Human ? "human" : "pseudo";
}

/// One data item. Vector examples have feature_shape [D] and a single
/// target; grid examples have feature_shape [H, W, C] and one target per
/// cell, with `ignore` flagging cells that carry kIgnoreLabel.
struct Example {
  std::vector<double> features;
  Shape feature_shape;
  /// Empty when unlabeled.
  std::vector<int> target;
  std::vector<std::uint8_t> ignore;
  Source source = Source::Human;
  /// Teacher confidence; pseudo examples only.
  std::optional<double> score;

  bool is_grid() const noexcept { return feature_shape.size() == 3; }
  bool labeled() const noexcept { return !target.empty(); }
  std::size_t height() const { return is_grid() ? feature_shape[0] : 1; }
  std::size_t width() const { return is_grid() ? feature_shape[1] : 1; }
  std::size_t channels() const { return feature_shape.back(); }
  std::size_t cells() const { return height() * width(); }

  Example unlabeled_copy() const {
    Example e;
    e.features = features;
    e.feature_shape = feature_shape;
    return e;
  }

  void validate(std::size_t classes) const {
    if (feature_shape.empty() || shape_size(feature_shape) != features.size())
      throw std::invalid_argument("example features do not match shape");
    if (!labeled())
      return;
    if (target.size() != cells())
      throw std::invalid_argument("example target does not match its grid");
    if (is_grid() && ignore.size() != target.size())
      throw std::invalid_argument("dense example needs an ignore mask");
    for (std::size_t i = 0; i < target.size(); ++i) {
      const bool ignored = is_grid() && ignore[i];
      if (ignored ? target[i] != kIgnoreLabel
                  : (target[i] < 0 || target[i] >= static_cast<int>(classes)))
        throw std::invalid_argument("example label out of range: " +
                                    std::to_string(target[i]));
    }
    if (source == Source::Human && score)
      throw std::invalid_argument("human examples carry no score");
  }

  friend bool operator==(const Example &, const Example &) = default;
};

/// Stacks feature payloads into [N, D] or [N, H, W, C].
inline Tensor stack_features(const std::vector<const Example *> &items) {
  if (items.empty())
    throw std::invalid_argument("cannot stack an empty batch");
  const Shape &fs = items.front()->feature_shape;
  Shape shape{items.size()};
  shape.insert(shape.end(), fs.begin(), fs.end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const Example *e : items) {
    if (e->feature_shape != fs)
      throw std::invalid_argument("batch mixes feature shapes " +
                                  shape_str(fs) + " and " +
                                  shape_str(e->feature_shape));
    data.insert(data.end(), e->features.begin(), e->features.end());
  }
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor stack_features(const std::vector<Example> &items) {
  std::vector<const Example *> ptrs;
  ptrs.reserve(items.size());
  for (const auto &e : items)
    ptrs.push_back(&e);
  return stack_features(ptrs);
}

/// Flat per-row targets for cross-entropy; ignored cells become -1.
inline Tensor stack_targets(const std::vector<const Example *> &items) {
  std::vector<double> t;
  for (const Example *e : items) {
    if (!e->labeled())
      throw std::invalid_argument("batch contains an unlabeled example");
    for (std::size_t i = 0; i < e->target.size(); ++i) {
      const bool ignored = e->is_grid() && e->ignore[i];
      t.push_back(ignored ? -1.0 : static_cast<double>(e->target[i]));
    }
  }
  return Tensor::vector(std::move(t));
}

inline Tensor stack_targets(const std::vector<Example> &items) {
  std::vector<const Example *> ptrs;
  ptrs.reserve(items.size());
  for (const auto &e : items)
    ptrs.push_back(&e);
  return stack_targets(ptrs);
}

} // namespace selftrain
