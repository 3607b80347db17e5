// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selftrain/datasets.hpp"
#include "selftrain/example.hpp"
#include "selftrain/grid.hpp"
#include "selftrain/random.hpp"

namespace selftrain {

enum class AugmentLevel { S1 = 1, S2, S3, S4 };

/// Strength preset. Perturbation ops act with strength magnitude*noise_std.
struct AugmentPreset {
  AugmentLevel level = AugmentLevel::S1;
  bool flip = true;
  double jitter_lo = 0.8;
  double jitter_hi = 1.2;
  double noise_std = 0.0;
  int op_count = 0;
  double magnitude = 0.0;

  double strength() const noexcept { return magnitude * noise_std; }

  void validate() const {
    if (!(jitter_lo > 0.0) || jitter_lo > jitter_hi)
      throw std::invalid_argument("invalid scale jitter range");
    if (!(noise_std >= 0.0) || !(magnitude >= 0.0) || op_count < 0)
      throw std::invalid_argument("augment strengths must be non-negative");
  }
};

/// S1 flip + narrow jitter; S2 adds one weak op; S3 widens the jitter;
/// S4 is the strongest op ladder on the wide jitter.
inline AugmentPreset augment_preset(AugmentLevel level) {
  switch (level) {
  case AugmentLevel::S1: return {level, true, 0.8, 1.2, 0.00, 0, 0.0};
  case AugmentLevel::S2: return {level, true, 0.8, 1.2, 0.05, 1, 0.6};
  case AugmentLevel::S3: return {level, true, 0.5, 2.0, 0.10, 2, 0.8};
  case AugmentLevel::S4: return {level, true, 0.5, 2.0, 0.15, 3, 1.0};
  }
  throw std::invalid_argument("unknown augment level");
}

inline AugmentPreset identity_preset() {
  return {AugmentLevel::S1, false, 1.0, 1.0, 0.0, 0, 0.0};
}

inline std::string_view level_name(AugmentLevel l) {
  constexpr std::string_view names[] = {"S1", "S2", "S3", "S4"};
  return names[static_cast<int>(l) - 1];
}

inline AugmentLevel parse_level(std::string_view s) {
  for (auto l : {AugmentLevel::S1, AugmentLevel::S2, AugmentLevel::S3,
                 AugmentLevel::S4})
    if (level_name(l) == s)
      return l;
  throw std::invalid_argument("unknown augment preset '" + std::string(s) +
                              "' (expected S1..S4)");
}

/// Geometry for vector examples: mirror is a point reflection through
/// `center`, which relabels class c as label_map[c]. Without a symmetry,
/// vector examples are never mirrored.
struct VectorSymmetry {
  std::vector<double> center;
  std::vector<int> label_map;
};

inline VectorSymmetry moons_symmetry() {
  return {{kMoonsCenterX, kMoonsCenterY}, {1, 0}};
}

struct AugmentTrace {
  bool flipped = false;
  double scale = 1.0;
  int ops = 0;
};

struct Augmented {
  Example example;
  AugmentTrace trace;
};

namespace detail {

inline void augment_vector(Example &ex, const AugmentPreset &p, Rng &rng,
                           const VectorSymmetry *sym, AugmentTrace &trace) {
  const std::size_t d = ex.features.size();
  std::vector<double> center(d, 0.0);
  if (sym && sym->center.size() == d)
    center = sym->center;

  if (p.flip && sym && rng.coin()) {
    for (std::size_t i = 0; i < d; ++i)
      ex.features[i] = 2.0 * center[i] - ex.features[i];
    if (ex.labeled()) {
      const auto c = static_cast<std::size_t>(ex.target[0]);
      if (c < sym->label_map.size())
        ex.target[0] = sym->label_map[c];
    }
    trace.flipped = true;
  }

  trace.scale = rng.uniform(p.jitter_lo, p.jitter_hi);
  if (trace.scale != 1.0)
    for (std::size_t i = 0; i < d; ++i)
      ex.features[i] = center[i] + trace.scale * (ex.features[i] - center[i]);

  const double strength = p.strength();
  for (int k = 0; k < p.op_count; ++k, ++trace.ops) {
    if (d == 2 && rng.coin()) {
      const double a = rng.uniform(-1.0, 1.0) * strength * std::numbers::pi / 2;
      const double c = std::cos(a), s = std::sin(a);
      const double dx = ex.features[0] - center[0];
      const double dy = ex.features[1] - center[1];
      ex.features[0] = center[0] + c * dx - s * dy;
      ex.features[1] = center[1] + s * dx + c * dy;
    } else {
      for (double &v : ex.features)
        v += rng.normal(0.0, strength);
    }
  }
}

inline void augment_grid(Example &ex, const AugmentPreset &p, Rng &rng,
                         AugmentTrace &trace) {
  const std::size_t h = ex.height(), w = ex.width(), c = ex.channels();
  const bool labeled = ex.labeled();

  if (p.flip && rng.coin()) {
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w / 2; ++j) {
        const std::size_t a = i * w + j, b = i * w + (w - 1 - j);
        for (std::size_t k = 0; k < c; ++k)
          std::swap(ex.features[a * c + k], ex.features[b * c + k]);
        if (labeled) {
          std::swap(ex.target[a], ex.target[b]);
          std::swap(ex.ignore[a], ex.ignore[b]);
        }
      }
    trace.flipped = true;
  }

  trace.scale = rng.uniform(p.jitter_lo, p.jitter_hi);
  const std::size_t sh = std::max<std::size_t>(1, scaled_extent(h, trace.scale));
  const std::size_t sw = std::max<std::size_t>(1, scaled_extent(w, trace.scale));
  if (sh != h || sw != w) {
    const auto feats = resample_bilinear(ex.features, h, w, c, sh, sw);
    std::vector<int> tgt;
    std::vector<std::uint8_t> ign;
    if (labeled) {
      tgt = resample_nearest(ex.target, h, w, sh, sw);
      ign = resample_nearest(ex.ignore, h, w, sh, sw);
    }
    // Crop when larger, pad (zeros / ignore) when smaller; offsets random.
    const std::size_t oy = sh > h ? rng.index(sh - h + 1) : 0;
    const std::size_t ox = sw > w ? rng.index(sw - w + 1) : 0;
    const std::size_t py = sh < h ? rng.index(h - sh + 1) : 0;
    const std::size_t px = sw < w ? rng.index(w - sw + 1) : 0;
    std::fill(ex.features.begin(), ex.features.end(), 0.0);
    if (labeled) {
      std::fill(ex.target.begin(), ex.target.end(), kIgnoreLabel);
      std::fill(ex.ignore.begin(), ex.ignore.end(), std::uint8_t{1});
    }
    for (std::size_t i = 0; i < std::min(h, sh); ++i)
      for (std::size_t j = 0; j < std::min(w, sw); ++j) {
        const std::size_t src = (i + oy) * sw + (j + ox);
        const std::size_t dst = (i + py) * w + (j + px);
        for (std::size_t k = 0; k < c; ++k)
          ex.features[dst * c + k] = feats[src * c + k];
        if (labeled) {
          ex.target[dst] = tgt[src];
          ex.ignore[dst] = ign[src];
        }
      }
  }

  const double strength = p.strength();
  for (int k = 0; k < p.op_count; ++k, ++trace.ops) {
    if (rng.coin()) {
      for (double &v : ex.features)
        v += rng.normal(0.0, strength);
    } else {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double shift = rng.uniform(-strength, strength);
        for (std::size_t cell = 0; cell < h * w; ++cell)
          ex.features[cell * c + ch] += shift;
      }
    }
  }
}

} // namespace detail

/// Mirror flip, scale jitter (crop-or-pad back for grids), then op_count
/// perturbations. Labels follow the geometry. Deterministic per seed.
inline Augmented augment_traced(const Example &ex, const AugmentPreset &preset,
                                std::uint64_t seed,
                                const VectorSymmetry *symmetry = nullptr) {
  preset.validate();
  Augmented out{ex, {}};
  Rng rng(derive_seed(seed, 0x61756720));
  if (ex.is_grid())
    detail::augment_grid(out.example, preset, rng, out.trace);
  else
    detail::augment_vector(out.example, preset, rng, symmetry, out.trace);
  return out;
}

inline Example augment_example(const Example &ex, const AugmentPreset &preset,
                               std::uint64_t seed,
                               const VectorSymmetry *symmetry = nullptr) {
  return augment_traced(ex, preset, seed, symmetry).example;
}

} // namespace selftrain
