// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "selftrain/metrics.hpp"
#include "selftrain/model.hpp"
#include "selftrain/optim.hpp"
#include "selftrain/param_io.hpp"
#include "selftrain/trainer.hpp"

using namespace selftrain;

namespace {

ModelSpec classifier() { return {}; }

ModelSpec dense_spec() {
  ModelSpec s;
  s.kind = ModelKind::DenseGrid;
  s.input_width = 2;
  s.classes = 3;
  s.grid_h = 4;
  s.grid_w = 5;
  s.hidden = {6};
  return s;
}

Tensor random_batch(Rng &rng, Shape shape) {
  Tensor t(shape, 0.0);
  for (auto &v : t.data())
    v = rng.uniform(-1, 1);
  return t;
}

ParamSet single(const std::string &name, double p) {
  ParamSet ps;
  ps.tensors.emplace_back(name, Tensor::vector({p}));
  return ps;
}

} // namespace

TEST(InitParams, DeterministicPerSeed) {
  for (const ModelSpec &s : {classifier(), dense_spec()})
    EXPECT_EQ(init_params(s, 17), init_params(s, 17));
}

TEST(InitParams, BiasesStartAtZero) {
  const ParamSet p = init_params(classifier(), 3);
  std::size_t biases = 0;
  for (const auto &[name, t] : p.tensors) {
    if (is_weight_name(name))
      continue;
    ++biases;
    for (double v : t.data())
      EXPECT_EQ(v, 0.0) << name;
  }
  EXPECT_EQ(biases, 3u);
}

TEST(InitParams, DifferentSeedsDiffer) {
  const ParamSet a = init_params(classifier(), 1);
  const ParamSet b = init_params(classifier(), 2);
  bool differs = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    differs = differs || a.tensors[i].second != b.tensors[i].second;
  EXPECT_TRUE(differs);
}

TEST(InitParams, AuxHeadLeavesTrunkUntouched) {
  ModelSpec with_aux = classifier();
  with_aux.aux_classes = 2;
  const ParamSet plain = init_params(classifier(), 9);
  const ParamSet aux = init_params(with_aux, 9);
  for (const auto &[name, t] : plain.tensors)
    EXPECT_EQ(aux.at(name), t) << name;
  EXPECT_NE(aux.find("aux_head.weight"), nullptr);
}

TEST(ModelForward, ZeroParamsGiveZeroLogits) {
  ParamSet p = init_params(classifier(), 0);
  for (auto &[name, t] : p.tensors)
    for (auto &v : t.data())
      v = 0.0;
  const Tensor logits = model_forward(p, Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(logits, Tensor({3, 2}, 0.0));
}

TEST(ModelForward, RowsAreIndependent) {
  Rng rng(4);
  const ParamSet p = init_params(classifier(), 5);
  const Tensor batch = random_batch(rng, {8, 2});
  const Tensor all = model_forward(p, batch);
  for (std::size_t r = 0; r < 8; ++r) {
    const Tensor one = model_forward(p, Tensor({1, 2}, {batch[2 * r], batch[2 * r + 1]}));
    EXPECT_EQ(one[0], all[2 * r]);
    EXPECT_EQ(one[1], all[2 * r + 1]);
  }
}

TEST(ModelForward, PermutingRowsPermutesLogits) {
  Rng rng(6);
  const ParamSet p = init_params(classifier(), 6);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor batch = random_batch(rng, {7, 2});
    const auto perm = rng.permutation(7);
    Tensor shuffled({7, 2}, 0.0);
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        shuffled[r * 2 + c] = batch[perm[r] * 2 + c];
    const Tensor a = model_forward(p, batch);
    const Tensor b = model_forward(p, shuffled);
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        EXPECT_EQ(b[r * 2 + c], a[perm[r] * 2 + c]);
  }
}

TEST(ModelForward, DenseGridKeepsSpatialShape) {
  Rng rng(8);
  const ModelSpec s = dense_spec();
  const ParamSet p = init_params(s, 8);
  const Tensor logits = model_forward(p, random_batch(rng, {2, 4, 5, 2}));
  EXPECT_EQ(logits.shape(), (Shape{2, 4, 5, 3}));
}

TEST(ModelForward, ShapeMismatchThrows) {
  const ParamSet p = init_params(classifier(), 0);
  EXPECT_ANY_THROW(model_forward(p, Tensor({4, 3}, 0.0)));
  EXPECT_ANY_THROW(model_forward(init_params(dense_spec(), 0), Tensor({1, 4, 5, 3}, 0.0)));
}

TEST(LrAt, LargeBatchEndpoints) {
  const Schedule s{1000, 0.0032, 0.32, 90000};
  EXPECT_EQ(lr_at(s, 0), 0.0032);
  EXPECT_EQ(lr_at(s, 1000), 0.32);
  EXPECT_NEAR(lr_at(s, 90000), 0.0, 1e-12);
}

TEST(LrAt, ContinuousAtWarmupBoundary) {
  const Schedule s{100, 0.001, 0.1, 1000};
  EXPECT_EQ(lr_at(s, 100), s.lr_peak);
  EXPECT_NEAR(lr_at(s, 99), s.lr_peak, (s.lr_peak - s.lr_start) / 100 + 1e-15);
  EXPECT_NEAR(lr_at(s, 101), s.lr_peak, 1e-5);
}

TEST(LrAt, OutOfRangeStepThrows) {
  EXPECT_THROW(lr_at(Schedule{}, 1001), std::out_of_range);
}

TEST(LrAt, MonotonePiecesProperty) {
  for (std::size_t warm : {1u, 10u, 250u}) {
    const Schedule s{warm, 0.01, 0.5, 700};
    for (std::size_t t = 1; t < warm; ++t)
      EXPECT_GT(lr_at(s, t), lr_at(s, t - 1));
    for (std::size_t t = warm + 1; t <= s.total_steps; ++t)
      EXPECT_LE(lr_at(s, t), lr_at(s, t - 1));
  }
}

TEST(SgdStep, PlainGradientStep) {
  ParamSet p = single("w.weight", 1.0);
  OptimizerState st{0.0, 0.0, {}};
  sgd_step(p, {{"w.weight", Tensor::vector({0.5})}}, st, 0.1);
  EXPECT_DOUBLE_EQ(p.at("w.weight")[0], 0.95);
}

TEST(SgdStep, WeightDecayOnly) {
  ParamSet p = single("w.weight", 1.0);
  OptimizerState st{0.0, 1e-4, {}};
  sgd_step(p, {{"w.weight", Tensor::vector({0.0})}}, st, 1.0);
  EXPECT_DOUBLE_EQ(p.at("w.weight")[0], 0.9999);
}

TEST(SgdStep, BiasesAreNotDecayed) {
  ParamSet p = single("w.bias", 1.0);
  OptimizerState st{0.0, 1e-2, {}};
  sgd_step(p, {{"w.bias", Tensor::vector({0.0})}}, st, 1.0);
  EXPECT_EQ(p.at("w.bias")[0], 1.0);
}

TEST(SgdStep, MomentumMatchesRecurrence) {
  ParamSet p = single("w.weight", 2.0);
  OptimizerState st{0.9, 1e-3, {}};
  double ref_p = 2.0, ref_v = 0.0;
  const double grads[] = {0.3, -0.1, 0.7, 0.2};
  for (double g : grads) {
    sgd_step(p, {{"w.weight", Tensor::vector({g})}}, st, 0.05);
    ref_v = 0.9 * ref_v + g + 1e-3 * ref_p;
    ref_p -= 0.05 * ref_v;
  }
  EXPECT_EQ(p.at("w.weight")[0], ref_p);
}

TEST(SgdStep, ZeroLrIsExactIdentity) {
  Rng rng(2);
  ParamSet p = init_params(classifier(), 2);
  const ParamSet before = p;
  OptimizerState st;
  Gradients g;
  for (const auto &[name, t] : p.tensors)
    g.emplace(name, random_batch(rng, t.shape()));
  for (int i = 0; i < 3; ++i)
    sgd_step(p, g, st, 0.0);
  EXPECT_EQ(p, before);
}

TEST(SgdStep, NonFiniteGradientNamesParameter) {
  ParamSet p = single("layer0.weight", 1.0);
  OptimizerState st;
  try {
    sgd_step(p, {{"layer0.weight", Tensor::vector({NAN})}}, st, 0.1);
    FAIL() << "expected an error";
  } catch (const std::domain_error &e) {
    EXPECT_NE(std::string(e.what()).find("layer0.weight"), std::string::npos);
  }
  EXPECT_EQ(p.at("layer0.weight")[0], 1.0);
}

TEST(TrainingProperty, LinearlySeparableReachesFullTrainAccuracy) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(seed, 77));
    std::vector<Example> data;
    while (data.size() < 60) {
      const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
      const double side = x + 0.5 * y;
      if (std::abs(side) < 0.1)
        continue;
      Example e;
      e.features = {x, y};
      e.feature_shape = {2};
      e.target = {side > 0 ? 1 : 0};
      data.push_back(e);
    }
    ParamSet p = init_params(classifier(), seed);
    TrainOptions opt;
    opt.schedule = {100, 0.001, 0.1, 2000};
    opt.steps = 2000;
    opt.preset = identity_preset();
    opt.seed = seed;
    opt.eval_every = 0;
    const TrainOutcome out = train_model(p, {&data, nullptr, nullptr}, opt);
    EXPECT_FALSE(out.diverged);
    EXPECT_EQ(evaluate_metrics(p, data).value, 1.0) << "seed " << seed;
  }
}

TEST(ParamIo, BinaryRoundTrip) {
  ModelSpec s = dense_spec();
  s.aux_classes = 3;
  const ParamSet p = init_params(s, 31);
  std::stringstream buf;
  write_params(buf, p);
  EXPECT_EQ(buf.str().substr(0, 8), "STPARAM1");
  const ParamSet q = read_params(buf);
  EXPECT_EQ(p, q);
}

TEST(ParamIo, RejectsTruncatedAndForeignData) {
  const ParamSet p = init_params(classifier(), 1);
  std::stringstream buf;
  write_params(buf, p);
  const std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_ANY_THROW(read_params(cut));
  std::stringstream junk("not a parameter file at all");
  EXPECT_ANY_THROW(read_params(junk));
}
