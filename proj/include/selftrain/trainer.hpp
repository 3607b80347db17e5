// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/augment.hpp"
#include "selftrain/autodiff.hpp"
#include "selftrain/batch.hpp"
#include "selftrain/loss_combine.hpp"
#include "selftrain/metrics.hpp"
#include "selftrain/model.hpp"
#include "selftrain/optim.hpp"

namespace selftrain {

struct TrainOptions {
  Schedule schedule;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  AugmentPreset preset = augment_preset(AugmentLevel::S1);
  std::optional<VectorSymmetry> symmetry;
  /// Combination of human / pseudo / auxiliary losses; Standard{0} with no
  /// pseudo data is plain supervised training.
  CombineMode combine = Standard{0.0};
  double ema_decay = 0.9997;
  std::uint64_t seed = 0;
  /// Validation metric is recorded at step 0, every eval_every steps, and
  /// at the end. 0 disables the curve.
  std::size_t eval_every = 25;
  const std::vector<Example> *validation = nullptr;
};

/// Training sources. `pseudo` and `aux` may be null or empty.
struct TrainData {
  const std::vector<Example> *human = nullptr;
  const std::vector<Example> *pseudo = nullptr;
  const std::vector<Example> *aux = nullptr;
};

struct TrainOutcome {
  bool diverged = false;
  std::size_t steps_run = 0;
  /// (step, validation metric) pairs.
  std::vector<std::pair<std::size_t, double>> curve;
  /// Combined loss per step.
  std::vector<double> losses;
  std::vector<std::string> warnings;
  EmaPair ema;
};

/// First curve step whose metric reaches 95% of the final value.
inline std::optional<std::size_t>
steps_to_target(const std::vector<std::pair<std::size_t, double>> &curve,
                double fraction = 0.95) {
  if (curve.empty())
    return std::nullopt;
  const double target = fraction * curve.back().second;
  for (const auto &[step, v] : curve)
    if (v >= target)
      return step;
  return curve.back().first;
}

namespace detail {

/// One graph reused across steps: a branch per source sharing the model
/// parameters, combined with constant coefficients.
struct TrainGraph {
  Graph g;
  std::optional<ModelNodes> model;
  NodeId loss_h = 0, loss_p = 0, loss_a = 0, total = 0;
  bool pseudo = false, aux = false;

  TrainGraph(const ModelSpec &spec, bool with_pseudo, bool with_aux)
      : pseudo(with_pseudo), aux(with_aux) {
    model.emplace(g, spec);
    // Dense logits are scored per cell.
    const auto rows = [&](NodeId l) {
      return spec.kind == ModelKind::DenseGrid ? g.flatten(l) : l;
    };
    loss_h = g.cross_entropy(rows(model->logits(g, g.input("x_h"))), g.input("y_h"));
    total = g.mul(loss_h, g.input("c_h"));
    if (pseudo) {
      loss_p = g.cross_entropy(rows(model->logits(g, g.input("x_p"))), g.input("y_p"));
      total = g.add(total, g.mul(loss_p, g.input("c_p")));
    }
    if (aux) {
      loss_a = g.cross_entropy(rows(model->aux_logits(g, g.input("x_a"))),
                               g.input("y_a"));
      total = g.add(total, g.mul(loss_a, g.input("c_a")));
    }
    g.set_output(total);
  }
};

inline std::vector<Example>
augmented_batch(const std::vector<Example> &src,
                const std::vector<std::size_t> &idx, const TrainOptions &opt,
                std::uint64_t stream) {
  std::vector<Example> out;
  out.reserve(idx.size());
  const VectorSymmetry *sym = opt.symmetry ? &*opt.symmetry : nullptr;
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.push_back(augment_example(src[idx[i]], opt.preset,
                                  derive_seed(stream, i), sym));
  return out;
}

inline void bind_batch(Graph &g, const std::vector<Example> &batch,
                       const char *x, const char *y) {
  std::vector<const Example *> ptrs;
  for (const auto &e : batch)
    ptrs.push_back(&e);
  g.bind(x, stack_features(ptrs));
  g.bind(y, stack_targets(ptrs));
}

} // namespace detail

/// Trains `params` in place with SGD on the warmup + cosine schedule.
/// Each step: sample a batch (half human / half pseudo when pseudo data
/// exist), augment, evaluate the branch losses, update the EMAs, weight the
/// losses, backpropagate, step. A non-finite loss or gradient stops the run
/// and marks it diverged.
inline TrainOutcome train_model(ParamSet &params, const TrainData &data,
                                const TrainOptions &opt) {
  TrainOutcome out;
  out.ema.decay = opt.ema_decay;
  if (!data.human || data.human->empty())
    throw std::invalid_argument("training needs labeled human data");
  validate(opt.combine);

  const bool has_pseudo =
      uses_pseudo(opt.combine) && data.pseudo && !data.pseudo->empty();
  const bool has_aux = uses_aux(opt.combine) && data.aux && !data.aux->empty();
  if (uses_pseudo(opt.combine) && data.pseudo && data.pseudo->empty())
    out.warnings.push_back("pseudo dataset is empty; batches are all human");
  if (uses_aux(opt.combine) && !has_aux)
    throw std::invalid_argument("joint training needs auxiliary data");
  const bool normalized = std::holds_alternative<Normalized>(opt.combine) ||
                          std::holds_alternative<NormalizedJoint>(opt.combine);

  auto record_eval = [&](std::size_t step) {
    if (!opt.validation || opt.eval_every == 0)
      return;
    const auto m = evaluate_metrics(params, *opt.validation);
    out.curve.emplace_back(step, m.value.value_or(0.0));
  };

  record_eval(0);
  if (opt.steps == 0)
    return out;

  Schedule sched = opt.schedule;
  sched.total_steps = opt.steps;
  if (sched.warmup_steps >= sched.total_steps)
    sched.warmup_steps = sched.total_steps / 10;

  detail::TrainGraph tg(params.spec, has_pseudo, has_aux);
  OptimizerState state{opt.momentum, opt.weight_decay, {}};
  BatchMixer mixer(data.human->size(), has_pseudo ? data.pseudo->size() : 0,
                   derive_seed(opt.seed, 0x6d6978));
  std::optional<EpochSampler> aux_sampler;
  if (has_aux)
    aux_sampler.emplace(data.aux->size(), derive_seed(opt.seed, 0x617578));
  const std::size_t aux_batch = has_pseudo ? opt.batch_size / 2 : opt.batch_size;

  for (std::size_t step = 0; step < opt.steps; ++step) {
    const std::uint64_t step_seed = derive_seed(opt.seed, step);
    const MixedBatch mb = mix_batch(mixer, opt.batch_size);

    ModelNodes::bind(tg.g, params);
    detail::bind_batch(tg.g,
                       detail::augmented_batch(*data.human, mb.human, opt,
                                               derive_seed(step_seed, 1)),
                       "x_h", "y_h");
    if (has_pseudo)
      detail::bind_batch(tg.g,
                         detail::augmented_batch(*data.pseudo, mb.pseudo, opt,
                                                 derive_seed(step_seed, 2)),
                         "x_p", "y_p");
    if (has_aux) {
      std::vector<std::size_t> idx(aux_batch);
      for (auto &i : idx)
        i = aux_sampler->next();
      detail::bind_batch(tg.g,
                         detail::augmented_batch(*data.aux, idx, opt,
                                                 derive_seed(step_seed, 3)),
                         "x_a", "y_a");
    }

    const double l_h = tg.g.eval(tg.loss_h).item();
    const double l_p = has_pseudo ? tg.g.eval(tg.loss_p).item() : 0.0;
    const double l_a = has_aux ? tg.g.eval(tg.loss_a).item() : 0.0;
    if (!std::isfinite(l_h) || !std::isfinite(l_p) || !std::isfinite(l_a)) {
      out.diverged = true;
      break;
    }

    LossCoefficients coef{1.0, 0.0, 0.0};
    if (normalized && has_pseudo) {
      out.ema = ema_update(out.ema, l_h, l_p);
      coef = coefficients(opt.combine, out.ema);
    } else if (has_pseudo) {
      coef = coefficients(opt.combine, out.ema);
    } else if (has_aux) {
      // No pseudo branch: only the joint weight survives.
      coef.aux = std::holds_alternative<Joint>(opt.combine)
                     ? std::get<Joint>(opt.combine).weight
                     : std::get<NormalizedJoint>(opt.combine).weight;
    }
    tg.g.bind("c_h", Tensor::scalar(coef.human));
    if (has_pseudo)
      tg.g.bind("c_p", Tensor::scalar(coef.pseudo));
    if (has_aux)
      tg.g.bind("c_a", Tensor::scalar(coef.aux));

    const double total = tg.g.eval(tg.total).item();
    if (!std::isfinite(total)) {
      out.diverged = true;
      break;
    }
    out.losses.push_back(total);
    const Gradients grads = tg.g.backward(tg.total);
    bool finite = true;
    for (const auto &[name, gr] : grads)
      finite = finite && gr.all_finite();
    if (!finite) {
      out.diverged = true;
      break;
    }
    sgd_step(params, grads, state, lr_at(sched, step));
    if (!params.all_finite()) {
      out.diverged = true;
      break;
    }
    out.steps_run = step + 1;
    if (opt.eval_every && (out.steps_run % opt.eval_every == 0 ||
                           out.steps_run == opt.steps))
      record_eval(out.steps_run);
  }
  return out;
}

} // namespace selftrain
