// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "selftrain/augment.hpp"
#include "selftrain/batch.hpp"
#include "selftrain/datasets.hpp"
#include "selftrain/records.hpp"

using namespace selftrain;

namespace {

std::size_t count_label(const std::vector<Example> &xs, int label) {
  return static_cast<std::size_t>(std::count_if(
      xs.begin(), xs.end(), [&](const Example &e) { return e.target[0] == label; }));
}

} // namespace

TEST(TwoMoons, NoiselessClassZeroOnUpperUnitCircle) {
  const auto xs = gen_two_moons(101, 0.0, 3);
  std::size_t zeros = 0;
  for (const auto &e : xs) {
    if (e.target[0] != 0)
      continue;
    ++zeros;
    EXPECT_NEAR(std::hypot(e.features[0], e.features[1]), 1.0, 1e-12);
    EXPECT_GE(e.features[1], 0.0);
  }
  EXPECT_EQ(zeros, 51u);
}

TEST(TwoMoons, BalancedAndDeterministic) {
  const auto a = gen_two_moons(100, 0.2, 9);
  EXPECT_EQ(count_label(a, 0), 50u);
  EXPECT_EQ(count_label(a, 1), 50u);
  EXPECT_EQ(a, gen_two_moons(100, 0.2, 9));
  EXPECT_NE(a, gen_two_moons(100, 0.2, 10));
}

TEST(TwoMoons, PointSymmetricAboutCenter) {
  // Reflecting a noiseless class-0 point through the center lands on the
  // class-1 curve: (1 - cos t, 0.5 - sin t).
  for (const auto &e : gen_two_moons(40, 0.0, 1)) {
    if (e.target[0] != 0)
      continue;
    const double x = 2 * kMoonsCenterX - e.features[0];
    const double y = 2 * kMoonsCenterY - e.features[1];
    EXPECT_NEAR(std::hypot(1 - x, 0.5 - y), 1.0, 1e-12);
  }
}

TEST(GridShapes, ForegroundPresentAndLabelsValid) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto xs = gen_grid_shapes(8 + seed, 12, 20, seed);
    for (const auto &e : xs) {
      EXPECT_NO_THROW(e.validate(kGridClasses));
      EXPECT_GT(std::count_if(e.target.begin(), e.target.end(), [](int t) { return t > 0; }), 0);
      for (int t : e.target)
        EXPECT_TRUE(t >= 0 && t < static_cast<int>(kGridClasses));
    }
    EXPECT_EQ(xs, gen_grid_shapes(8 + seed, 12, 20, seed));
  }
}

TEST(GridShapes, TooSmallThrows) {
  EXPECT_THROW(gen_grid_shapes(7, 8, 1, 0), std::invalid_argument);
}

TEST(Split, FractionExamples) {
  const auto xs = gen_two_moons(10, 0.1, 2);
  auto [all, none] = split_labeled(xs, {1.0, 4});
  EXPECT_EQ(all.size(), 10u);
  EXPECT_TRUE(none.empty());
  auto [half, rest] = split_labeled(xs, {0.5, 4});
  EXPECT_EQ(half.size(), 5u);
  EXPECT_EQ(rest.size(), 5u);
  for (const auto &e : rest)
    EXPECT_FALSE(e.labeled());
  EXPECT_THROW(split_labeled(xs, {0.0, 1}), std::invalid_argument);
}

TEST(SplitProperty, PartitionOfTheInput) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(60);
    const double f = rng.uniform(0.01, 1.0);
    const auto xs = gen_two_moons(n, 0.2, trial);
    const auto [lab, unl] = split_labeled(xs, {f, static_cast<std::uint64_t>(trial)});
    EXPECT_EQ(lab.size(), static_cast<std::size_t>(std::floor(f * n + 1e-9)));
    EXPECT_EQ(lab.size() + unl.size(), n);
    std::multiset<std::vector<double>> original, merged;
    for (const auto &e : xs)
      original.insert(e.features);
    for (const auto &e : lab)
      merged.insert(e.features);
    for (const auto &e : unl)
      merged.insert(e.features);
    EXPECT_EQ(original, merged);
    EXPECT_EQ(split_labeled(xs, {f, static_cast<std::uint64_t>(trial)}),
              std::make_pair(lab, unl));
  }
}

TEST(Augment, IdentityPresetIsIdentity) {
  const auto sym = moons_symmetry();
  for (const auto &e : gen_two_moons(20, 0.2, 1))
    EXPECT_EQ(augment_example(e, identity_preset(), 3, &sym), e);
  for (const auto &e : gen_grid_shapes(9, 9, 5, 1))
    EXPECT_EQ(augment_example(e, identity_preset(), 3), e);
}

TEST(Augment, PresetLadder) {
  EXPECT_EQ(augment_preset(AugmentLevel::S1).jitter_lo, 0.8);
  EXPECT_EQ(augment_preset(AugmentLevel::S1).jitter_hi, 1.2);
  EXPECT_EQ(augment_preset(AugmentLevel::S2).jitter_hi, 1.2);
  EXPECT_EQ(augment_preset(AugmentLevel::S3).jitter_lo, 0.5);
  EXPECT_EQ(augment_preset(AugmentLevel::S4).jitter_hi, 2.0);
  for (int l = 1; l < 4; ++l) {
    const auto a = augment_preset(static_cast<AugmentLevel>(l));
    const auto b = augment_preset(static_cast<AugmentLevel>(l + 1));
    EXPECT_LE(a.noise_std, b.noise_std);
    EXPECT_LE(a.magnitude, b.magnitude);
  }
  EXPECT_EQ(parse_level("S3"), AugmentLevel::S3);
  EXPECT_THROW(parse_level("S5"), std::invalid_argument);
}

TEST(AugmentProperty, ScaleStaysInJitterRange) {
  const auto sym = moons_symmetry();
  const auto moons = gen_two_moons(10, 0.2, 0);
  const auto grids = gen_grid_shapes(10, 10, 2, 0);
  for (auto level : {AugmentLevel::S1, AugmentLevel::S4}) {
    const auto p = augment_preset(level);
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
      const double s1 = augment_traced(moons[seed % 10], p, seed, &sym).trace.scale;
      const double s2 = augment_traced(grids[seed % 2], p, seed).trace.scale;
      for (double s : {s1, s2}) {
        EXPECT_GE(s, p.jitter_lo);
        EXPECT_LE(s, p.jitter_hi);
      }
    }
  }
}

TEST(AugmentProperty, DeterministicAndFinite) {
  const auto sym = moons_symmetry();
  const auto moons = gen_two_moons(30, 0.2, 4);
  const auto grids = gen_grid_shapes(11, 9, 6, 4);
  for (int l = 1; l <= 4; ++l) {
    const auto p = augment_preset(static_cast<AugmentLevel>(l));
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const Example &m = moons[seed % moons.size()];
      const Example &g = grids[seed % grids.size()];
      const Example am = augment_example(m, p, seed, &sym);
      const Example ag = augment_example(g, p, seed);
      EXPECT_EQ(am, augment_example(m, p, seed, &sym));
      EXPECT_EQ(ag, augment_example(g, p, seed));
      for (double v : am.features)
        EXPECT_TRUE(std::isfinite(v));
      for (double v : ag.features)
        EXPECT_TRUE(std::isfinite(v));
      EXPECT_EQ(ag.feature_shape, g.feature_shape);
      EXPECT_NO_THROW(ag.validate(kGridClasses));
    }
  }
}

TEST(AugmentProperty, GridFlipMirrorsLabels) {
  GridShapesOptions clean{0.0, 1.0};
  const auto grids = gen_grid_shapes(9, 10, 10, 6, clean);
  AugmentPreset flip_only = identity_preset();
  flip_only.flip = true;
  std::size_t flips = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Example &g = grids[seed % grids.size()];
    const Augmented a = augment_traced(g, flip_only, seed);
    if (!a.trace.flipped) {
      EXPECT_EQ(a.example, g);
      continue;
    }
    ++flips;
    const std::size_t h = g.height(), w = g.width();
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        EXPECT_EQ(a.example.target[i * w + (w - 1 - j)], g.target[i * w + j]);
        // Noise-free grids: features still encode the label after the flip.
        const std::size_t cell = i * w + (w - 1 - j);
        const int t = a.example.target[cell];
        if (t > 0) {
          EXPECT_EQ(a.example.features[cell * 2 + static_cast<std::size_t>(t - 1)], 1.0);
        }
      }
  }
  EXPECT_GT(flips, 5u);
}

TEST(AugmentProperty, VectorFlipSwapsMoonLabels) {
  const auto sym = moons_symmetry();
  AugmentPreset flip_only = identity_preset();
  flip_only.flip = true;
  const auto moons = gen_two_moons(20, 0.0, 8);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Example &m = moons[seed % moons.size()];
    const Augmented a = augment_traced(m, flip_only, seed, &sym);
    if (!a.trace.flipped)
      continue;
    EXPECT_EQ(a.example.target[0], 1 - m.target[0]);
    const double x = a.example.features[0], y = a.example.features[1];
    // The reflected point lies on the curve of its new label.
    const double r = a.example.target[0] == 0 ? std::hypot(x, y) : std::hypot(1 - x, 0.5 - y);
    EXPECT_NEAR(r, 1.0, 1e-12);
  }
}

TEST(AugmentProperty, PaddingMarksIgnoredCells) {
  const auto grids = gen_grid_shapes(12, 12, 4, 2);
  AugmentPreset shrink = identity_preset();
  shrink.jitter_lo = 0.5;
  shrink.jitter_hi = 0.6;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Example a = augment_example(grids[seed % 4], shrink, seed);
    const auto ignored = std::count(a.ignore.begin(), a.ignore.end(), 1);
    EXPECT_GT(ignored, 0);
    for (std::size_t i = 0; i < a.cells(); ++i)
      if (a.ignore[i]) {
        EXPECT_EQ(a.target[i], kIgnoreLabel);
      }
  }
}

TEST(MixBatch, HalfAndHalf) {
  BatchMixer mixer(10, 30, 1);
  const MixedBatch b = mix_batch(mixer, 8);
  EXPECT_EQ(b.human.size(), 4u);
  EXPECT_EQ(b.pseudo.size(), 4u);
  EXPECT_FALSE(b.degraded);
}

TEST(MixBatch, EmptyPseudoDegrades) {
  BatchMixer mixer(10, 0, 1);
  const MixedBatch b = mix_batch(mixer, 8);
  EXPECT_EQ(b.human.size(), 8u);
  EXPECT_TRUE(b.pseudo.empty());
  EXPECT_TRUE(b.degraded);
}

TEST(MixBatch, OddBatchThrows) {
  BatchMixer mixer(10, 10, 1);
  EXPECT_THROW(mix_batch(mixer, 7), std::invalid_argument);
  EXPECT_THROW(BatchMixer(0, 0, 1), std::invalid_argument);
}

TEST(MixBatchProperty, EpochsCoverEverySourceItem) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t nh = 1 + rng.index(20), np = 1 + rng.index(20);
    const std::size_t bs = 2 * (1 + rng.index(8));
    BatchMixer mixer(nh, np, static_cast<std::uint64_t>(trial));
    std::map<std::size_t, std::size_t> hc, pc;
    const std::size_t rounds = 2 * nh * np;
    for (std::size_t r = 0; r < rounds; ++r) {
      const MixedBatch b = mix_batch(mixer, bs);
      ASSERT_EQ(b.human.size(), bs / 2);
      ASSERT_EQ(b.pseudo.size(), bs / 2);
      for (auto i : b.human) ++hc[i];
      for (auto i : b.pseudo) ++pc[i];
    }
    // Epoch sampling: draw counts differ by at most one epoch's worth.
    auto spread = [](const std::map<std::size_t, std::size_t> &m) {
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto &[k, v] : m) { lo = std::min(lo, v); hi = std::max(hi, v); }
      return hi - lo;
    };
    EXPECT_EQ(hc.size(), nh);
    EXPECT_EQ(pc.size(), np);
    EXPECT_LE(spread(hc), 1u);
    EXPECT_LE(spread(pc), 1u);
  }
}

TEST(Records, RoundTripKeepsExamples) {
  RecordSet rs;
  rs.kind = "mixed";
  rs.meta = {{"seed", 4}};
  for (auto &e : gen_two_moons(5, 0.2, 4))
    rs.examples.push_back(e);
  for (auto &e : gen_grid_shapes(8, 9, 2, 4))
    rs.examples.push_back(e);
  Example p = rs.examples[0].unlabeled_copy();
  p.target = {1};
  p.source = Source::Pseudo;
  p.score = 0.875;
  rs.examples.push_back(p);
  rs.examples.push_back(rs.examples[1].unlabeled_copy());
  std::stringstream buf;
  write_records(buf, rs);
  const RecordSet back = read_records(buf);
  EXPECT_EQ(back.kind, rs.kind);
  EXPECT_EQ(back.meta, rs.meta);
  EXPECT_EQ(back.examples, rs.examples);
}

TEST(Records, RejectsMalformedLines) {
  std::stringstream bad(
      "{\"format\":\"selftrain-records\",\"version\":1,\"kind\":\"x\",\"count\":1,\"meta\":{}}\n"
      "{\"shape\":[2],\"features\":[1.0],\"source\":\"human\"}\n");
  EXPECT_ANY_THROW(read_records(bad));
  std::stringstream wrong("{\"format\":\"other\"}\n");
  EXPECT_ANY_THROW(read_records(wrong));
}
