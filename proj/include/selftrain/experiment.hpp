// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "selftrain/augment.hpp"
#include "selftrain/datasets.hpp"
#include "selftrain/loss_combine.hpp"
#include "selftrain/metrics.hpp"
#include "selftrain/model.hpp"
#include "selftrain/optim.hpp"
#include "selftrain/pseudo_label.hpp"
#include "selftrain/trainer.hpp"

namespace selftrain {

enum class Task { Moons, GridShapes };
enum class InitMode { Random, Pretrained };
enum class StudentInit { Teacher, Random };
enum class RunMode { Supervised, SelfTrain, Joint, SelfTrainJoint };
enum class CombineKind { Standard, Normalized };
enum class PoolSource { InDomain, Shifted };

namespace detail {

template <typename E> struct EnumNames;

template <> struct EnumNames<Task> {
  static constexpr std::pair<Task, std::string_view> items[] = {
      {Task::Moons, "moons"}, {Task::GridShapes, "grid-shapes"}};
};
template <> struct EnumNames<InitMode> {
  static constexpr std::pair<InitMode, std::string_view> items[] = {
      {InitMode::Random, "random"}, {InitMode::Pretrained, "pretrained"}};
};
template <> struct EnumNames<StudentInit> {
  static constexpr std::pair<StudentInit, std::string_view> items[] = {
      {StudentInit::Teacher, "teacher"}, {StudentInit::Random, "random"}};
};
template <> struct EnumNames<RunMode> {
  static constexpr std::pair<RunMode, std::string_view> items[] = {
      {RunMode::Supervised, "supervised"},
      {RunMode::SelfTrain, "self-train"},
      {RunMode::Joint, "joint"},
      {RunMode::SelfTrainJoint, "self-train+joint"}};
};
template <> struct EnumNames<CombineKind> {
  static constexpr std::pair<CombineKind, std::string_view> items[] = {
      {CombineKind::Standard, "standard"},
      {CombineKind::Normalized, "normalized"}};
};
template <> struct EnumNames<PoolSource> {
  static constexpr std::pair<PoolSource, std::string_view> items[] = {
      {PoolSource::InDomain, "in-domain"}, {PoolSource::Shifted, "shifted"}};
};

} // namespace detail

template <typename E> std::string_view to_string(E e) {
  for (const auto &[v, name] : detail::EnumNames<E>::items)
    if (v == e)
      return name;
  throw std::invalid_argument("unnamed enum value");
}

template <typename E> E parse_enum(std::string_view s) {
  std::string options;
  for (const auto &[v, name] : detail::EnumNames<E>::items) {
    if (name == s)
      return v;
    options += (options.empty() ? "" : "|") + std::string(name);
  }
  throw std::invalid_argument("unknown value '" + std::string(s) +
                              "' (expected " + options + ")");
}

/// Full description of a run; one row per seed comes out of it.
struct ExperimentConfig {
  Task task = Task::Moons;
  InitMode init = InitMode::Random;
  StudentInit student_init = StudentInit::Teacher;
  RunMode mode = RunMode::Supervised;
  CombineKind combine = CombineKind::Normalized;
  double alpha = 1.0;
  double weight = 0.2;
  AugmentLevel preset = AugmentLevel::S1;
  double labeled_fraction = 1.0;

  std::size_t train_size = 200;
  std::size_t pool_size = 1000;
  PoolSource pool_source = PoolSource::InDomain;
  std::size_t val_size = 500;
  std::size_t test_size = 1000;
  double noise = 0.2;
  std::size_t grid_size = 12;
  std::vector<std::size_t> hidden{16, 16};

  std::size_t teacher_steps = 1000;
  std::size_t student_steps = 1000;
  std::size_t pretrain_steps = 500;
  std::size_t warmup_steps = 100;
  double lr_start = 0.0003;
  double lr_peak = 0.03;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  double threshold = 0.5;
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  double ema_decay = 0.9997;
  std::size_t eval_every = 25;
  std::vector<std::uint64_t> seeds{0};

  bool self_training() const noexcept {
    return mode == RunMode::SelfTrain || mode == RunMode::SelfTrainJoint;
  }
  bool joint() const noexcept {
    return mode == RunMode::Joint || mode == RunMode::SelfTrainJoint;
  }

  CombineMode combine_mode() const {
    switch (mode) {
    case RunMode::Supervised: return Standard{0.0};
    case RunMode::SelfTrain:
      if (combine == CombineKind::Standard)
        return Standard{alpha};
      return Normalized{alpha};
    case RunMode::Joint: return Joint{weight};
    case RunMode::SelfTrainJoint: return NormalizedJoint{alpha, weight};
    }
    throw std::logic_error("unhandled run mode");
  }

  void validate() const {
    if (seeds.empty())
      throw std::invalid_argument("config needs at least one seed");
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
      throw std::invalid_argument("labeled_fraction must lie in (0, 1]");
    if (train_size < 2)
      throw std::invalid_argument("train_size must be at least 2");
    if (labeled_count(train_size, labeled_fraction) == 0)
      throw std::invalid_argument("labeled fraction leaves no labeled data");
    if (val_size == 0 || test_size == 0)
      throw std::invalid_argument("validation and test sets must be non-empty");
    if (batch_size == 0 || batch_size % 2)
      throw std::invalid_argument("batch_size must be even and positive");
    if (mode == RunMode::SelfTrainJoint && combine != CombineKind::Normalized)
      throw std::invalid_argument(
          "self-train+joint uses normalized combination only");
    if (task == Task::GridShapes && grid_size < 8)
      throw std::invalid_argument("grid_size must be at least 8");
    validate_schedule(teacher_steps);
    validate_schedule(student_steps);
    selftrain::validate(combine_mode());
    MultiScaleConfig{scales}.validate();
    if (!(ema_decay > 0.0 && ema_decay < 1.0))
      throw std::invalid_argument("ema_decay must lie in (0, 1)");
  }

  Schedule schedule(std::size_t steps) const {
    return {warmup_steps, lr_start, lr_peak, steps};
  }

private:
  void validate_schedule(std::size_t steps) const {
    if (steps == 0)
      return;
    Schedule s = schedule(steps);
    if (s.warmup_steps >= s.total_steps)
      s.warmup_steps = s.total_steps / 10;
    s.validate();
  }
};

inline nlohmann::json to_json(const ExperimentConfig &c) {
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["init"] = to_string(c.init);
  j["student_init"] = to_string(c.student_init);
  j["mode"] = to_string(c.mode);
  j["combine"] = to_string(c.combine);
  j["alpha"] = c.alpha;
  j["weight"] = c.weight;
  j["preset"] = level_name(c.preset);
  j["labeled_fraction"] = c.labeled_fraction;
  j["train_size"] = c.train_size;
  j["pool_size"] = c.pool_size;
  j["pool_source"] = to_string(c.pool_source);
  j["val_size"] = c.val_size;
  j["test_size"] = c.test_size;
  j["noise"] = c.noise;
  j["grid_size"] = c.grid_size;
  j["hidden"] = c.hidden;
  j["teacher_steps"] = c.teacher_steps;
  j["student_steps"] = c.student_steps;
  j["pretrain_steps"] = c.pretrain_steps;
  j["warmup_steps"] = c.warmup_steps;
  j["lr_start"] = c.lr_start;
  j["lr_peak"] = c.lr_peak;
  j["batch_size"] = c.batch_size;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["threshold"] = c.threshold;
  j["scales"] = c.scales;
  j["ema_decay"] = c.ema_decay;
  j["eval_every"] = c.eval_every;
  j["seeds"] = c.seeds;
  return j;
}

/// Keys absent from `j` keep their values in `base`; unknown keys are errors.
inline ExperimentConfig config_from_json(const nlohmann::json &j,
                                         ExperimentConfig c = {}) {
  if (!j.is_object())
    throw std::invalid_argument("experiment config must be a JSON object");
  const nlohmann::json known = to_json(c);
  for (const auto &[key, v] : j.items())
    if (!known.contains(key))
      throw std::invalid_argument("unknown config key '" + key + "'");
  auto str = [&](const char *k) { return j.at(k).get<std::string>(); };
  auto get = [&](const char *k, auto &dst) {
    if (j.contains(k))
      j.at(k).get_to(dst);
  };
  if (j.contains("task")) c.task = parse_enum<Task>(str("task"));
  if (j.contains("init")) c.init = parse_enum<InitMode>(str("init"));
  if (j.contains("student_init"))
    c.student_init = parse_enum<StudentInit>(str("student_init"));
  if (j.contains("mode")) c.mode = parse_enum<RunMode>(str("mode"));
  if (j.contains("combine")) c.combine = parse_enum<CombineKind>(str("combine"));
  if (j.contains("preset")) c.preset = parse_level(str("preset"));
  if (j.contains("pool_source"))
    c.pool_source = parse_enum<PoolSource>(str("pool_source"));
  get("alpha", c.alpha);
  get("weight", c.weight);
  get("labeled_fraction", c.labeled_fraction);
  get("train_size", c.train_size);
  get("pool_size", c.pool_size);
  get("val_size", c.val_size);
  get("test_size", c.test_size);
  get("noise", c.noise);
  get("grid_size", c.grid_size);
  get("hidden", c.hidden);
  get("teacher_steps", c.teacher_steps);
  get("student_steps", c.student_steps);
  get("pretrain_steps", c.pretrain_steps);
  get("warmup_steps", c.warmup_steps);
  get("lr_start", c.lr_start);
  get("lr_peak", c.lr_peak);
  get("batch_size", c.batch_size);
  get("momentum", c.momentum);
  get("weight_decay", c.weight_decay);
  get("threshold", c.threshold);
  get("scales", c.scales);
  get("ema_decay", c.ema_decay);
  get("eval_every", c.eval_every);
  get("seeds", c.seeds);
  return c;
}

/// One result line. Keys that do not apply to the run's mode are empty.
struct MetricsRow {
  std::string task, mode, init, student_init, combine;
  std::optional<double> alpha, weight;
  std::string preset;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::string metric;
  std::optional<double> value, teacher_value, delta;
  std::optional<std::size_t> steps_to_target;
  bool diverged = false;
  /// Not serialized; kept out of result files so they stay reproducible.
  double wall_seconds = 0.0;

  bool same_record(const MetricsRow &o) const {
    return task == o.task && mode == o.mode && init == o.init &&
           student_init == o.student_init && combine == o.combine &&
           alpha == o.alpha && weight == o.weight && preset == o.preset &&
           fraction == o.fraction && seed == o.seed && metric == o.metric &&
           value == o.value && teacher_value == o.teacher_value &&
           delta == o.delta && steps_to_target == o.steps_to_target &&
           diverged == o.diverged;
  }
};

/// All data one seed of an experiment sees.
struct TaskData {
  std::vector<Example> labeled;
  std::vector<Example> pool;
  std::vector<Example> validation;
  std::vector<Example> test;
  /// Auxiliary task used for pre-training and joint training.
  std::vector<Example> aux;
};

inline constexpr std::size_t kAuxSize = 1000;

/// Stream ids for per-seed derivations.
enum : std::uint64_t {
  kStreamTrain = 11,
  kStreamPool,
  kStreamVal,
  kStreamTest,
  kStreamAux,
  kStreamSplit,
  kStreamInit,
  kStreamStudentInit,
  kStreamPretrain,
  kStreamTeacher,
  kStreamStudent,
};

inline MoonsTransform shifted_moons() { return {0.35, 0.15, -0.1}; }
inline MoonsTransform aux_moons() { return {std::numbers::pi / 4, 0.0, 0.0}; }
inline GridShapesOptions shifted_grid() { return {0.45, 0.8}; }
inline GridShapesOptions aux_grid() { return {0.3, 0.7}; }

inline std::vector<Example> strip_labels(const std::vector<Example> &xs) {
  std::vector<Example> out;
  out.reserve(xs.size());
  for (const auto &e : xs)
    out.push_back(e.unlabeled_copy());
  return out;
}

inline TaskData make_task_data(const ExperimentConfig &cfg, std::uint64_t seed) {
  TaskData d;
  const std::size_t g = cfg.grid_size;
  auto gen = [&](std::size_t n, std::uint64_t stream, bool shifted, bool aux) {
    const std::uint64_t s = derive_seed(seed, stream);
    if (cfg.task == Task::Moons) {
      MoonsTransform tf = aux ? aux_moons() : shifted ? shifted_moons()
                                                      : MoonsTransform{};
      return n ? gen_two_moons(n, cfg.noise, s, tf) : std::vector<Example>{};
    }
    GridShapesOptions opt = aux ? aux_grid() : shifted ? shifted_grid()
                                                       : GridShapesOptions{};
    return gen_grid_shapes(g, g, n, s, opt);
  };
  auto [labeled, rest] =
      split_labeled(gen(cfg.train_size, kStreamTrain, false, false),
                    {cfg.labeled_fraction, derive_seed(seed, kStreamSplit)});
  d.labeled = std::move(labeled);
  d.pool = std::move(rest);
  for (auto &e : strip_labels(gen(cfg.pool_size, kStreamPool,
                                  cfg.pool_source == PoolSource::Shifted, false)))
    d.pool.push_back(std::move(e));
  d.validation = gen(cfg.val_size, kStreamVal, false, false);
  d.test = gen(cfg.test_size, kStreamTest, false, false);
  if (cfg.init == InitMode::Pretrained || cfg.joint())
    d.aux = gen(kAuxSize, kStreamAux, false, true);
  return d;
}

inline ModelSpec model_spec_for(const ExperimentConfig &cfg) {
  ModelSpec s;
  s.hidden = cfg.hidden;
  if (cfg.task == Task::Moons) {
    s.kind = ModelKind::Classifier;
    s.input_width = 2;
    s.classes = 2;
    s.aux_classes = cfg.joint() ? 2 : 0;
  } else {
    s.kind = ModelKind::DenseGrid;
    s.input_width = kGridChannels;
    s.classes = kGridClasses;
    s.grid_h = s.grid_w = cfg.grid_size;
    s.aux_classes = cfg.joint() ? kGridClasses : 0;
  }
  return s;
}

inline TrainOptions train_options(const ExperimentConfig &cfg,
                                  std::size_t steps, std::uint64_t seed,
                                  const std::vector<Example> *validation) {
  TrainOptions o;
  o.schedule = cfg.schedule(steps);
  o.steps = steps;
  o.batch_size = cfg.batch_size;
  o.momentum = cfg.momentum;
  o.weight_decay = cfg.weight_decay;
  o.preset = augment_preset(cfg.preset);
  if (cfg.task == Task::Moons)
    o.symmetry = moons_symmetry();
  o.ema_decay = cfg.ema_decay;
  o.seed = seed;
  o.eval_every = cfg.eval_every;
  o.validation = validation;
  return o;
}

/// Everything produced for one seed, for callers that need more than rows.
struct SeedRun {
  ParamSet teacher;
  ParamSet final_model;
  Metrics teacher_metric;
  Metrics final_metric;
  TrainOutcome teacher_outcome;
  std::optional<TrainOutcome> student_outcome;
  std::optional<PseudoDataset> pseudo;
  bool diverged = false;
};

/// Initial weights: random, or random then supervised pre-training on the
/// auxiliary task.
inline ParamSet initial_params(const ExperimentConfig &cfg, const ModelSpec &spec,
                               const TaskData &data, std::uint64_t seed) {
  ParamSet p = init_params(spec, derive_seed(seed, kStreamInit));
  if (cfg.init == InitMode::Pretrained && cfg.pretrain_steps > 0) {
    TrainOptions o = train_options(cfg, cfg.pretrain_steps,
                                   derive_seed(seed, kStreamPretrain), nullptr);
    o.eval_every = 0;
    train_model(p, {&data.aux, nullptr, nullptr}, o);
  }
  return p;
}

inline SeedRun run_seed(const ExperimentConfig &cfg, std::uint64_t seed) {
  const TaskData data = make_task_data(cfg, seed);
  const ModelSpec spec = model_spec_for(cfg);
  SeedRun run;

  // Teacher: supervised, or supervised + auxiliary loss in joint mode.
  ParamSet model = initial_params(cfg, spec, data, seed);
  TrainOptions topt = train_options(cfg, cfg.teacher_steps,
                                    derive_seed(seed, kStreamTeacher),
                                    &data.validation);
  if (cfg.mode == RunMode::Joint)
    topt.combine = Joint{cfg.weight};
  run.teacher_outcome = train_model(
      model, {&data.labeled, nullptr, cfg.mode == RunMode::Joint ? &data.aux : nullptr},
      topt);
  run.teacher = model;
  run.diverged = run.teacher_outcome.diverged;
  run.teacher_metric = evaluate_metrics(run.teacher, data.test);

  if (!cfg.self_training() || run.diverged) {
    run.final_model = run.teacher;
    run.final_metric = run.teacher_metric;
    return run;
  }

  PseudoLabelConfig plc{cfg.threshold, kIgnoreLabel};
  run.pseudo = build_pseudo_dataset(run.teacher, data.pool, plc,
                                    MultiScaleConfig{cfg.scales});

  ParamSet student = cfg.student_init == StudentInit::Teacher
                         ? run.teacher
                         : init_params(spec, derive_seed(seed, kStreamStudentInit));
  TrainOptions sopt = train_options(cfg, cfg.student_steps,
                                    derive_seed(seed, kStreamStudent),
                                    &data.validation);
  sopt.combine = cfg.combine_mode();
  run.student_outcome = train_model(
      student,
      {&data.labeled, &run.pseudo->examples,
       cfg.mode == RunMode::SelfTrainJoint ? &data.aux : nullptr},
      sopt);
  run.diverged = run.student_outcome->diverged;
  run.final_model = std::move(student);
  run.final_metric = evaluate_metrics(run.final_model, data.test);
  return run;
}

inline MetricsRow row_for(const ExperimentConfig &cfg, std::uint64_t seed,
                          const SeedRun &run) {
  MetricsRow r;
  r.task = to_string(cfg.task);
  r.mode = to_string(cfg.mode);
  r.init = to_string(cfg.init);
  r.preset = level_name(cfg.preset);
  r.fraction = cfg.labeled_fraction;
  r.seed = seed;
  r.metric = run.final_metric.name;
  switch (cfg.mode) {
  case RunMode::Supervised: r.combine = "none"; break;
  case RunMode::Joint: r.combine = "joint"; break;
  case RunMode::SelfTrain: r.combine = to_string(cfg.combine); break;
  case RunMode::SelfTrainJoint: r.combine = "normalized+joint"; break;
  }
  if (cfg.self_training()) {
    r.student_init = to_string(cfg.student_init);
    r.alpha = cfg.alpha;
  }
  if (cfg.joint())
    r.weight = cfg.weight;
  r.diverged = run.diverged;
  if (run.diverged)
    return r;
  r.value = run.final_metric.value;
  const TrainOutcome &last =
      run.student_outcome ? *run.student_outcome : run.teacher_outcome;
  r.steps_to_target = steps_to_target(last.curve);
  if (cfg.self_training()) {
    r.teacher_value = run.teacher_metric.value;
    if (r.value && r.teacher_value)
      r.delta = *r.value - *r.teacher_value;
  }
  return r;
}

/// One row per seed. A diverged seed yields a flagged row and the next seed
/// still runs.
inline std::vector<MetricsRow> run_experiment(
    const ExperimentConfig &cfg,
    const std::function<void(std::uint64_t, const SeedRun &)> &on_seed = {}) {
  cfg.validate();
  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const SeedRun run = run_seed(cfg, seed);
    if (on_seed)
      on_seed(seed, run);
    MetricsRow r = row_for(cfg, seed, run);
    r.wall_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    rows.push_back(std::move(r));
  }
  return rows;
}

} // namespace selftrain
