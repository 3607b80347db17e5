// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace selftrain {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double score = 0.0;
  int cls = 0;

  double area() const noexcept { return (x2 - x1) * (y2 - y1); }
  bool valid() const noexcept { return x1 < x2 && y1 < y2; }

  friend bool operator==(const Box &, const Box &) = default;
};

inline double iou(const Box &a, const Box &b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0)
    return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct SoftNmsConfig {
  double sigma = 0.3;
  /// Boxes whose decayed score ends below this are dropped.
  double discard_floor = 0.001;

  void validate() const {
    if (!(sigma > 0.0))
      throw std::invalid_argument("soft-NMS sigma must be positive");
    if (!(discard_floor >= 0.0 && discard_floor < 1.0))
      throw std::invalid_argument("soft-NMS discard floor must be in [0, 1)");
  }
};

/// Gaussian Soft-NMS. Repeatedly takes the highest-scoring remaining box
/// (lowest input index on ties) and multiplies every remaining box of the
/// same class by exp(-iou^2 / sigma). Output is sorted by final score,
/// descending.
inline std::vector<Box> soft_nms(const std::vector<Box> &boxes,
                                 const SoftNmsConfig &cfg = {}) {
  cfg.validate();
  for (const Box &b : boxes)
    if (!b.valid())
      throw std::invalid_argument("soft-NMS got a degenerate box");

  const std::size_t n = boxes.size();
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i)
    score[i] = boxes[i].score;
  std::vector<char> done(n, 0);
  std::vector<std::size_t> picked;
  picked.reserve(n);

  for (std::size_t round = 0; round < n; ++round) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!done[i] && (best == n || score[i] > score[best]))
        best = i;
    done[best] = 1;
    picked.push_back(best);
    for (std::size_t i = 0; i < n; ++i) {
      if (done[i] || boxes[i].cls != boxes[best].cls)
        continue;
      const double o = iou(boxes[best], boxes[i]);
      score[i] *= std::exp(-(o * o) / cfg.sigma);
    }
  }

  std::vector<Box> out;
  for (std::size_t i : picked) {
    if (score[i] < cfg.discard_floor)
      continue;
    Box b = boxes[i];
    b.score = score[i];
    out.push_back(b);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Box &a, const Box &b) { return a.score > b.score; });
  return out;
}

/// Suppression first, then the hard score threshold.
inline std::vector<Box> pseudo_label_boxes(const std::vector<Box> &boxes,
                                           double threshold,
                                           const SoftNmsConfig &cfg = {}) {
  std::vector<Box> kept = soft_nms(boxes, cfg);
  std::erase_if(kept, [&](const Box &b) { return b.score < threshold; });
  return kept;
}

} // namespace selftrain
