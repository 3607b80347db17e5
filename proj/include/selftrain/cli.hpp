// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "selftrain/experiment.hpp"
#include "selftrain/param_io.hpp"
#include "selftrain/records.hpp"
#include "selftrain/report.hpp"
#include "selftrain/sweep.hpp"

namespace selftrain {

namespace cli {

/// Deferred edits to a config; each one applies only if its flag was given.
using Overrides = std::vector<std::function<void(ExperimentConfig &)>>;

template <typename T>
void field_flag(CLI::App *app, Overrides &ov, const std::string &name,
                T ExperimentConfig::*field, const std::string &help) {
  auto value = std::make_shared<T>();
  CLI::Option *opt = app->add_option(name, *value, help);
  if constexpr (CLI::detail::is_mutable_container<T>::value)
    opt->delimiter(',');
  ov.push_back([opt, value, field](ExperimentConfig &c) {
    if (opt->count() > 0)
      c.*field = *value;
  });
}

template <typename T, typename Parse>
void parsed_flag(CLI::App *app, Overrides &ov, const std::string &name,
                 T ExperimentConfig::*field, Parse parse, const std::string &help) {
  auto value = std::make_shared<std::string>();
  CLI::Option *opt = app->add_option(name, *value, help);
  ov.push_back([opt, value, field, parse](ExperimentConfig &c) {
    if (opt->count() > 0)
      c.*field = parse(*value);
  });
}

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t num_seeds = 1;
  std::string out;
  CLI::Option *seed_opt = nullptr;
  CLI::Option *num_seeds_opt = nullptr;
  Overrides overrides;
};

inline void add_common(CLI::App *app, Common &c, const std::string &default_out,
                       bool with_mode) {
  app->add_option("--config", c.config, "JSON experiment config file")
      ->check(CLI::ExistingFile);
  c.seed_opt = app->add_option("--seed", c.seed, "first seed");
  c.num_seeds_opt = app->add_option("--num-seeds", c.num_seeds,
                                    "number of consecutive seeds")
                        ->check(CLI::PositiveNumber);
  c.out = default_out;
  app->add_option("--out", c.out, "output path")->capture_default_str();

  Overrides &ov = c.overrides;
  parsed_flag(app, ov, "--task", &ExperimentConfig::task, parse_enum<Task>,
              "moons|grid-shapes");
  parsed_flag(app, ov, "--init", &ExperimentConfig::init, parse_enum<InitMode>,
              "random|pretrained");
  parsed_flag(app, ov, "--student-init", &ExperimentConfig::student_init,
              parse_enum<StudentInit>, "teacher|random");
  parsed_flag(app, ov, "--combine", &ExperimentConfig::combine,
              parse_enum<CombineKind>, "standard|normalized");
  parsed_flag(app, ov, "--preset", &ExperimentConfig::preset, parse_level,
              "augmentation preset S1..S4");
  parsed_flag(app, ov, "--pool-source", &ExperimentConfig::pool_source,
              parse_enum<PoolSource>, "in-domain|shifted");
  if (with_mode)
    parsed_flag(app, ov, "--mode", &ExperimentConfig::mode, parse_enum<RunMode>,
                "supervised|self-train|joint|self-train+joint");
  field_flag(app, ov, "--alpha", &ExperimentConfig::alpha, "pseudo loss weight");
  field_flag(app, ov, "--weight", &ExperimentConfig::weight, "joint loss weight");
  field_flag(app, ov, "--fraction", &ExperimentConfig::labeled_fraction,
             "labeled fraction of the training set");
  field_flag(app, ov, "--train-size", &ExperimentConfig::train_size,
             "training set size");
  field_flag(app, ov, "--pool-size", &ExperimentConfig::pool_size,
             "extra unlabeled pool size");
  field_flag(app, ov, "--val-size", &ExperimentConfig::val_size,
             "validation set size");
  field_flag(app, ov, "--test-size", &ExperimentConfig::test_size,
             "test set size");
  field_flag(app, ov, "--noise", &ExperimentConfig::noise, "moons noise");
  field_flag(app, ov, "--grid-size", &ExperimentConfig::grid_size,
             "grid side length");
  field_flag(app, ov, "--hidden", &ExperimentConfig::hidden, "hidden widths");
  field_flag(app, ov, "--teacher-steps", &ExperimentConfig::teacher_steps,
             "teacher training steps");
  field_flag(app, ov, "--student-steps", &ExperimentConfig::student_steps,
             "student training steps");
  field_flag(app, ov, "--pretrain-steps", &ExperimentConfig::pretrain_steps,
             "auxiliary pre-training steps");
  field_flag(app, ov, "--warmup-steps", &ExperimentConfig::warmup_steps,
             "linear warmup steps");
  field_flag(app, ov, "--lr-start", &ExperimentConfig::lr_start,
             "learning rate at step 0");
  field_flag(app, ov, "--lr-peak", &ExperimentConfig::lr_peak,
             "learning rate after warmup");
  field_flag(app, ov, "--batch-size", &ExperimentConfig::batch_size,
             "batch size (even)");
  field_flag(app, ov, "--momentum", &ExperimentConfig::momentum, "SGD momentum");
  field_flag(app, ov, "--weight-decay", &ExperimentConfig::weight_decay,
             "weight decay");
  field_flag(app, ov, "--threshold", &ExperimentConfig::threshold,
             "pseudo label confidence threshold");
  field_flag(app, ov, "--scales", &ExperimentConfig::scales,
             "multi-scale inference scales");
  field_flag(app, ov, "--ema-decay", &ExperimentConfig::ema_decay,
             "loss EMA decay");
  field_flag(app, ov, "--eval-every", &ExperimentConfig::eval_every,
             "validation interval in steps");
}

inline nlohmann::json read_json_file(const std::string &path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error &e) {
    throw std::invalid_argument("config '" + path + "' is not valid JSON: " +
                                e.what());
  }
}

/// Config file first, then flags, then the command's fixed settings.
inline ExperimentConfig resolve(const Common &c,
                                const std::function<void(ExperimentConfig &)> &fix = {}) {
  ExperimentConfig cfg;
  if (!c.config.empty())
    cfg = config_from_json(read_json_file(c.config), cfg);
  for (const auto &apply : c.overrides)
    apply(cfg);
  if (c.seed_opt->count() > 0 || c.num_seeds_opt->count() > 0) {
    cfg.seeds.clear();
    for (std::size_t i = 0; i < c.num_seeds; ++i)
      cfg.seeds.push_back(c.seed + i);
  }
  if (fix)
    fix(cfg);
  cfg.validate();
  return cfg;
}

inline std::string params_path(const std::string &prefix, std::uint64_t seed) {
  return prefix + ".seed" + std::to_string(seed) + ".params";
}

struct Usage : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

} // namespace cli

/// Entry point of the command-line tool. Success prints one JSON status line
/// on `out`; failure prints one JSON error line on `err` and returns 2 for
/// usage errors, 1 otherwise.
inline int run_cli(int argc, const char *const *argv, std::ostream &out,
                   std::ostream &err) {
  CLI::App app{"Self-training experiments on synthetic tasks", "selftrain"};
  app.require_subcommand(1);

  cli::Common train_c, self_c, joint_c, sweep_c, label_c, eval_c, gen_c;
  std::string params_prefix;

  auto *train = app.add_subcommand("train", "supervised baseline");
  cli::add_common(train, train_c, "results.csv", false);
  train->add_option("--save-params", params_prefix, "save final params with this prefix");

  bool self_joint = false;
  auto *self = app.add_subcommand("selftrain", "teacher, pseudo labels, student");
  cli::add_common(self, self_c, "results.csv", false);
  self->add_flag("--joint", self_joint, "add the auxiliary joint loss");
  self->add_option("--save-params", params_prefix, "save final params with this prefix");

  auto *joint = app.add_subcommand("joint", "supervised plus auxiliary task loss");
  cli::add_common(joint, joint_c, "results.csv", false);
  joint->add_option("--save-params", params_prefix, "save final params with this prefix");

  std::vector<std::string> axes, presets, combines;
  SweepSpec spec;
  auto *sw = app.add_subcommand("sweep", "grid over alpha/fraction/preset/combine");
  cli::add_common(sw, sweep_c, "sweep.csv", true);
  sw->add_option("--axes", axes, "alpha, fraction, preset, combine")->required()->delimiter(',');
  sw->add_option("--alphas", spec.alphas, "alpha values")->delimiter(',');
  sw->add_option("--fractions", spec.fractions, "labeled fractions")->delimiter(',');
  sw->add_option("--presets", presets, "augmentation presets")->delimiter(',');
  sw->add_option("--combines", combines, "standard, normalized")->delimiter(',');
  sw->add_option("--jobs", spec.jobs, "concurrent cells")->check(CLI::PositiveNumber);

  std::string params_in, pool_in;
  auto *label = app.add_subcommand("pseudolabel", "label an unlabeled pool with a teacher");
  cli::add_common(label, label_c, "pseudo.jsonl", false);
  label->add_option("--params", params_in, "teacher params (trained if omitted)")
      ->check(CLI::ExistingFile);
  label->add_option("--pool", pool_in, "pool records (generated if omitted)")
      ->check(CLI::ExistingFile);

  std::string data_in;
  auto *ev = app.add_subcommand("eval", "accuracy or mIOU of saved params");
  cli::add_common(ev, eval_c, "eval.csv", false);
  ev->add_option("--params", params_in, "params file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_in, "labeled records (test split if omitted)")
      ->check(CLI::ExistingFile);

  std::string split = "labeled";
  auto *gen = app.add_subcommand("gen", "write a generated dataset split");
  cli::add_common(gen, gen_c, "data.jsonl", false);
  gen->add_option("--split", split, "labeled|pool|validation|test|aux")
      ->check(CLI::IsMember({"labeled", "pool", "validation", "test", "aux"}));

  auto fail = [&](const char *kind, const std::string &msg, int code) {
    err << nlohmann::json{{"status", "error"}, {"kind", kind}, {"message", msg}}.dump()
        << '\n';
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0)
      return app.exit(e, out, err);
    return fail("usage", e.what(), 2);
  }

  const auto t0 = std::chrono::steady_clock::now();
  nlohmann::json status{{"status", "ok"}};
  auto finish = [&]() {
    status["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << status.dump() << '\n';
    return 0;
  };

  try {
    auto run_rows = [&](const cli::Common &c, auto fix, const char *name) {
      const ExperimentConfig cfg = cli::resolve(c, fix);
      std::size_t diverged = 0;
      const auto rows = run_experiment(cfg, [&](std::uint64_t seed, const SeedRun &r) {
        if (!params_prefix.empty())
          save_params(cli::params_path(params_prefix, seed), r.final_model);
      });
      for (const auto &r : rows)
        diverged += r.diverged;
      write_results(rows, c.out, {{"config", to_json(cfg)}});
      status["command"] = name;
      status["out"] = c.out;
      status["rows"] = rows.size();
      status["diverged"] = diverged;
      return finish();
    };

    if (*train)
      return run_rows(train_c, [](ExperimentConfig &c) { c.mode = RunMode::Supervised; },
                      "train");
    if (*self)
      return run_rows(self_c, [&](ExperimentConfig &c) {
        c.mode = self_joint ? RunMode::SelfTrainJoint : RunMode::SelfTrain;
      }, "selftrain");
    if (*joint)
      return run_rows(joint_c, [](ExperimentConfig &c) { c.mode = RunMode::Joint; },
                      "joint");

    if (*sw) {
      const ExperimentConfig base = cli::resolve(sweep_c, [&](ExperimentConfig &c) {
        if (!c.self_training() &&
            (std::find(axes.begin(), axes.end(), "alpha") != axes.end() ||
             std::find(axes.begin(), axes.end(), "combine") != axes.end()))
          throw cli::Usage("alpha and combine axes need a self-training mode");
      });
      for (const auto &a : axes)
        spec.axes.push_back(parse_axis(a));
      if (!presets.empty()) {
        spec.presets.clear();
        for (const auto &p : presets)
          spec.presets.push_back(parse_level(p));
      }
      if (!combines.empty()) {
        spec.combines.clear();
        for (const auto &c : combines)
          spec.combines.push_back(parse_enum<CombineKind>(c));
      }
      const SweepResult res = sweep(base, spec);
      nlohmann::json extra = res.summary();
      extra["config"] = to_json(base);
      write_results(res.rows, sweep_c.out, extra);
      status["command"] = "sweep";
      status["out"] = sweep_c.out;
      status["rows"] = res.rows.size();
      status["cells"] = sweep_cells(base, spec).size();
      return finish();
    }

    if (*label) {
      const ExperimentConfig cfg = cli::resolve(label_c, [](ExperimentConfig &c) {
        c.mode = RunMode::Supervised;
      });
      const std::uint64_t seed = cfg.seeds.front();
      ParamSet teacher = params_in.empty() ? run_seed(cfg, seed).teacher
                                           : load_params(params_in);
      std::vector<Example> pool;
      if (pool_in.empty())
        pool = make_task_data(cfg, seed).pool;
      else
        pool = strip_labels(load_records(pool_in).examples);
      const PseudoDataset pd = build_pseudo_dataset(
          teacher, pool, {cfg.threshold, kIgnoreLabel}, MultiScaleConfig{cfg.scales});
      RecordSet rs;
      rs.kind = "pseudo";
      rs.meta = {{"pool_size", pd.pool_size},
                 {"kept", pd.examples.size()},
                 {"kept_fraction", pd.kept_fraction},
                 {"threshold", cfg.threshold},
                 {"scales", cfg.scales}};
      rs.examples = pd.examples;
      save_records(label_c.out, rs);
      status["command"] = "pseudolabel";
      status["out"] = label_c.out;
      status["pool_size"] = pd.pool_size;
      status["kept"] = pd.examples.size();
      status["kept_fraction"] = pd.kept_fraction;
      status["warnings"] = pd.warnings;
      return finish();
    }

    if (*ev) {
      const ExperimentConfig cfg = cli::resolve(eval_c);
      const ParamSet params = load_params(params_in);
      const std::vector<Example> data =
          data_in.empty() ? make_task_data(cfg, cfg.seeds.front()).test
                          : load_records(data_in).examples;
      const Metrics m = evaluate_metrics(params, data);
      std::ofstream os(eval_c.out, std::ios::binary);
      if (!os)
        throw std::runtime_error("cannot open '" + eval_c.out + "' for writing");
      os << "metric,value,examples\n"
         << m.name << ',' << (m.value ? format_double(*m.value) : "") << ','
         << data.size() << '\n';
      if (!os)
        throw std::runtime_error("failed writing '" + eval_c.out + "'");
      status["command"] = "eval";
      status["out"] = eval_c.out;
      status["metric"] = m.name;
      status["value"] = m.value ? nlohmann::json(*m.value) : nlohmann::json();
      return finish();
    }

    if (*gen) {
      const ExperimentConfig cfg = cli::resolve(gen_c);
      const std::uint64_t seed = cfg.seeds.front();
      ExperimentConfig gcfg = cfg;
      if (split == "aux")
        gcfg.init = InitMode::Pretrained;
      TaskData d = make_task_data(gcfg, seed);
      RecordSet rs;
      rs.kind = split;
      rs.meta = {{"task", to_string(cfg.task)}, {"seed", seed}};
      if (split == "labeled") rs.examples = std::move(d.labeled);
      else if (split == "pool") rs.examples = std::move(d.pool);
      else if (split == "validation") rs.examples = std::move(d.validation);
      else if (split == "test") rs.examples = std::move(d.test);
      else rs.examples = std::move(d.aux);
      save_records(gen_c.out, rs);
      status["command"] = "gen";
      status["out"] = gen_c.out;
      status["examples"] = rs.examples.size();
      return finish();
    }
  } catch (const std::invalid_argument &e) {
    return fail("invalid-argument", e.what(), 2);
  } catch (const std::exception &e) {
    return fail("runtime", e.what(), 1);
  }
  return fail("usage", "no command given", 2);
}

} // namespace selftrain
