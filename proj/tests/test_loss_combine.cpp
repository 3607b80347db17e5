// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "selftrain/datasets.hpp"
#include "selftrain/loss_combine.hpp"
#include "selftrain/model.hpp"
#include "selftrain/random.hpp"

using namespace selftrain;

namespace {

EmaPair pair_of(double h, double p) {
  EmaPair e;
  e.human = h;
  e.pseudo = p;
  return e;
}

// Closed form of the EMA after a sequence: d^(n-1) * x0 + sum_k (1-d) d^(n-1-k) x_k.
long double ema_closed_form(const std::vector<double> &xs, long double d) {
  long double acc = xs.front();
  long double scale = 1.0L;
  long double tail = 0.0L;
  for (std::size_t k = xs.size() - 1; k >= 1; --k) {
    tail += (1.0L - d) * scale * xs[k];
    scale *= d;
  }
  return scale * acc + tail;
}

} // namespace

TEST(EmaUpdate, FirstValueInitializes) {
  const EmaPair e = ema_update({}, 5.0, 3.0);
  EXPECT_EQ(e.human, 5.0);
  EXPECT_EQ(e.pseudo, 3.0);
}

TEST(EmaUpdate, DecaysTowardZeroLoss) {
  const EmaPair e = ema_update(pair_of(1.0, 1.0), 0.0, 1.0);
  EXPECT_DOUBLE_EQ(*e.human, 0.9997);
  EXPECT_EQ(*e.pseudo, 1.0);
}

TEST(EmaUpdate, RejectsBadLosses) {
  EXPECT_THROW(ema_update({}, -1.0, 1.0), std::domain_error);
  EXPECT_THROW(ema_update({}, 1.0, NAN), std::domain_error);
  EXPECT_THROW(ema_update({}, INFINITY, 1.0), std::domain_error);
}

TEST(EmaOracle, LongSequencesMatchClosedForm) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(10000);
    std::vector<double> hs(n), ps(n);
    EmaPair e;
    for (std::size_t i = 0; i < n; ++i) {
      hs[i] = rng.uniform(0.0, 3.0);
      ps[i] = rng.uniform(0.0, 3.0);
      e = ema_update(e, hs[i], ps[i]);
    }
    EXPECT_NEAR(*e.human, static_cast<double>(ema_closed_form(hs, 0.9997L)), 1e-12);
    EXPECT_NEAR(*e.pseudo, static_cast<double>(ema_closed_form(ps, 0.9997L)), 1e-12);
  }
}

TEST(Combine, StandardIsWeightedSum) {
  EXPECT_EQ(combine_standard(2.0, 4.0, 0.5), 4.0);
  EXPECT_EQ(combine_standard(2.0, 4.0, 0.0), 2.0);
}

TEST(Combine, NormalizedHandValue) {
  EXPECT_NEAR(combine_normalized(2.0, 4.0, 1.0, pair_of(1.0, 2.0)), 2.0, 1e-12);
}

TEST(Combine, NormalizedNeedsInitializedPositiveEma) {
  EXPECT_THROW(combine_normalized(1, 1, 1, EmaPair{}), std::logic_error);
  EXPECT_THROW(combine_normalized(1, 1, 1, pair_of(1.0, 0.0)), std::domain_error);
}

TEST(Combine, JointAddsWeightedAux) {
  EXPECT_EQ(combine_joint(1.5, 2.0, 0.0), 1.5);
  EXPECT_DOUBLE_EQ(combine_joint(1.5, 2.0, 0.2), 1.9);
}

TEST(Combine, ValidateRejectsNegativeWeights) {
  EXPECT_THROW(validate(Standard{-1}), std::invalid_argument);
  EXPECT_THROW(validate(Joint{-0.1}), std::invalid_argument);
  EXPECT_THROW(validate(NormalizedJoint{1, NAN}), std::invalid_argument);
  EXPECT_NO_THROW(validate(Normalized{0}));
}

TEST(Combine, CoefficientsReproduceScalarCombination) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const EmaPair e = pair_of(rng.uniform(0.1, 3), rng.uniform(0.1, 3));
    const double lh = rng.uniform(0, 3), lp = rng.uniform(0, 3), la = rng.uniform(0, 3);
    const double a = rng.uniform(0, 4), w = rng.uniform(0, 1);
    for (const CombineMode &m : {CombineMode{Standard{a}}, CombineMode{Normalized{a}},
                                 CombineMode{Joint{w}}, CombineMode{NormalizedJoint{a, w}}}) {
      const LossCoefficients c = coefficients(m, e);
      EXPECT_NEAR(c.human * lh + c.pseudo * lp + c.aux * la, combine(m, e, lh, lp, la),
                  1e-12);
    }
  }
}

TEST(NormalizedProperty, AlphaInvarianceUnderEqualNormalizedLosses) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const double eh = rng.uniform(0.05, 5), ep = rng.uniform(0.05, 5), r = rng.uniform(0, 4);
    const EmaPair e = pair_of(eh, ep);
    for (double a : {0.25, 0.5, 1.0, 2.0, 3.0, 4.0})
      EXPECT_NEAR(combine_normalized(r * eh, r * ep, a, e), r * eh, 1e-12);
  }
}

TEST(NormalizedProperty, OutputIsConvexCombination) {
  Rng rng(22);
  for (int trial = 0; trial < 500; ++trial) {
    const EmaPair e = pair_of(rng.uniform(0.05, 5), rng.uniform(0.05, 5));
    const double lh = rng.uniform(0, 5), lp = rng.uniform(0, 5), a = rng.uniform(0, 10);
    const double scaled = *e.human / *e.pseudo * lp;
    const double v = combine_normalized(lh, lp, a, e);
    EXPECT_GE(v, std::min(lh, scaled) - 1e-12);
    EXPECT_LE(v, std::max(lh, scaled) + 1e-12);
  }
}

// The combined gradient through the model equals the coefficient-weighted
// branch gradients and matches finite differences with the EMAs frozen.
TEST(NormalizedProperty, GradientFlowThroughModel) {
  const ModelSpec spec{ModelKind::Classifier, 2, {5}, 2, 0, 0, 0};
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto human = gen_two_moons(6, 0.2, 100 + trial);
    const auto pseudo = gen_two_moons(6, 0.2, 200 + trial);
    const ParamSet params = init_params(spec, 300 + trial);
    const double alpha = rng.uniform(0.25, 4);
    const EmaPair e = pair_of(rng.uniform(0.2, 2), rng.uniform(0.2, 2));
    const LossCoefficients c = coefficients(Normalized{alpha}, e);

    Graph g;
    ModelNodes m(g, spec);
    const NodeId lh = g.cross_entropy(m.logits(g, g.input("xh")), g.input("yh"));
    const NodeId lp = g.cross_entropy(m.logits(g, g.input("xp")), g.input("yp"));
    const NodeId total =
        g.add(g.mul(lh, g.input("ch")), g.mul(lp, g.input("cp")));
    g.set_output(total);

    Bindings point{{"xh", stack_features(human)}, {"yh", stack_targets(human)},
                   {"xp", stack_features(pseudo)}, {"yp", stack_targets(pseudo)},
                   {"ch", Tensor::scalar(c.human)}, {"cp", Tensor::scalar(c.pseudo)}};
    for (const auto &[name, t] : params.tensors)
      point.emplace(name, t);

    EXPECT_LT(grad_check(g, point, 1e-5), 1e-4);

    g.forward(point);
    EXPECT_NEAR(g.value(total).item(),
                combine_normalized(g.value(lh).item(), g.value(lp).item(), alpha, e), 1e-12);
    const Gradients gt = g.backward(total);
    const Gradients gh = g.backward(lh);
    const Gradients gp = g.backward(lp);
    const double ratio = *e.human / *e.pseudo;
    for (const auto &[name, t] : gt)
      for (std::size_t i = 0; i < t.size(); ++i)
        EXPECT_NEAR(t[i],
                    gh.at(name)[i] / (1 + alpha) + alpha / (1 + alpha) * ratio * gp.at(name)[i],
                    1e-12);
  }
}
