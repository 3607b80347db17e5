// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "selftrain/example.hpp"
#include "selftrain/random.hpp"

namespace selftrain {

/// Rigid motion applied to generated moons; identity by default. Used for
/// shifted unlabeled pools and the auxiliary pre-training task.
struct MoonsTransform {
  double rotation = 0.0;
  double shift_x = 0.0;
  double shift_y = 0.0;
};

/// Centre of point symmetry of the two moons: reflecting through it maps
/// the upper moon onto the lower one.
inline constexpr double kMoonsCenterX = 0.5;
inline constexpr double kMoonsCenterY = 0.25;

/// Two interleaving half circles. Class 0 is (cos t, sin t), class 1 is
/// (1 - cos t, 0.5 - sin t), t ~ U[0, pi]; ceil(n/2) points go to class 0.
inline std::vector<Example> gen_two_moons(std::size_t n, double noise,
                                          std::uint64_t seed,
                                          MoonsTransform tf = {}) {
  if (n < 2)
    throw std::invalid_argument("two moons needs n >= 2");
  if (!(noise >= 0.0))
    throw std::invalid_argument("noise must be >= 0");
  Rng rng(derive_seed(seed, 0x6d6f6f6e));
  const std::size_t n0 = n - n / 2;
  std::vector<Example> out;
  out.reserve(n);
  const double c = std::cos(tf.rotation), s = std::sin(tf.rotation);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n0 ? 0 : 1;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      x += rng.normal(0.0, noise);
      y += rng.normal(0.0, noise);
    }
    if (tf.rotation != 0.0) {
      const double dx = x - kMoonsCenterX, dy = y - kMoonsCenterY;
      x = kMoonsCenterX + c * dx - s * dy;
      y = kMoonsCenterY + s * dx + c * dy;
    }
    x += tf.shift_x;
    y += tf.shift_y;
    Example e;
    e.features = {x, y};
    e.feature_shape = {2};
    e.target = {label};
    out.push_back(std::move(e));
  }
  rng.shuffle(out);
  return out;
}

inline constexpr std::size_t kGridClasses = 3;
inline constexpr std::size_t kGridChannels = 2;

struct GridShapesOptions {
  double noise = 0.35;
  double intensity = 1.0;
};

/// Grids with one foreground shape on noisy background. Labels: 0 background,
/// 1 rectangle (raises channel 0), 2 disk (raises channel 1).
inline std::vector<Example> gen_grid_shapes(std::size_t h, std::size_t w,
                                            std::size_t n, std::uint64_t seed,
                                            GridShapesOptions opt = {}) {
  if (h < 8 || w < 8)
    throw std::invalid_argument("grid shapes need H, W >= 8");
  Rng rng(derive_seed(seed, 0x67726964));
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Example e;
    e.feature_shape = {h, w, kGridChannels};
    e.features.resize(h * w * kGridChannels);
    for (double &v : e.features)
      v = opt.noise > 0.0 ? rng.normal(0.0, opt.noise) : 0.0;
    e.target.assign(h * w, 0);
    e.ignore.assign(h * w, 0);

    const bool disk = rng.coin();
    if (disk) {
      const double rmax = static_cast<double>(std::min(h, w)) / 4.0;
      const double r = rng.uniform(1.5, rmax);
      const auto margin = static_cast<std::size_t>(std::floor(r));
      const std::size_t cy = margin + rng.index(h - 2 * margin);
      const std::size_t cx = margin + rng.index(w - 2 * margin);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double dy = static_cast<double>(i) - static_cast<double>(cy);
          const double dx = static_cast<double>(j) - static_cast<double>(cx);
          if (dy * dy + dx * dx <= r * r)
            e.target[i * w + j] = 2;
        }
    } else {
      const std::size_t rh = 2 + rng.index(h / 2 - 1);
      const std::size_t rw = 2 + rng.index(w / 2 - 1);
      const std::size_t top = rng.index(h - rh + 1);
      const std::size_t left = rng.index(w - rw + 1);
      for (std::size_t i = top; i < top + rh; ++i)
        for (std::size_t j = left; j < left + rw; ++j)
          e.target[i * w + j] = 1;
    }
    for (std::size_t cell = 0; cell < h * w; ++cell)
      if (e.target[cell] > 0)
        e.features[cell * kGridChannels +
                   static_cast<std::size_t>(e.target[cell] - 1)] +=
            opt.intensity;
    out.push_back(std::move(e));
  }
  return out;
}

struct SplitSpec {
  double labeled_fraction = 1.0;
  std::uint64_t seed = 0;
};

inline std::size_t labeled_count(std::size_t n, double fraction) {
  // Nudge so fractions like 0.29 * 100 don't floor to 28.
  return std::min(
      n, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) +
                                             1e-9)));
}

/// floor(fraction * n) examples keep labels; the rest lose their targets.
/// Both parts keep the input's relative order.
inline std::pair<std::vector<Example>, std::vector<Example>>
split_labeled(const std::vector<Example> &data, const SplitSpec &spec) {
  if (!(spec.labeled_fraction > 0.0 && spec.labeled_fraction <= 1.0))
    throw std::invalid_argument("labeled fraction must lie in (0, 1]");
  const std::size_t k = labeled_count(data.size(), spec.labeled_fraction);
  Rng rng(derive_seed(spec.seed, 0x73706c74));
  const auto perm = rng.permutation(data.size());
  std::vector<char> keep(data.size(), 0);
  for (std::size_t i = 0; i < k; ++i)
    keep[perm[i]] = 1;
  std::pair<std::vector<Example>, std::vector<Example>> parts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep[i])
      parts.first.push_back(data[i]);
    else
      parts.second.push_back(data[i].unlabeled_copy());
  }
  return parts;
}

} // namespace selftrain
