// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <future>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "selftrain/experiment.hpp"
#include "selftrain/report.hpp"

namespace selftrain {

enum class SweepAxis { Alpha, Fraction, Preset, Combine };

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "alpha") return SweepAxis::Alpha;
  if (s == "fraction") return SweepAxis::Fraction;
  if (s == "preset") return SweepAxis::Preset;
  if (s == "combine") return SweepAxis::Combine;
  throw std::invalid_argument("unknown sweep axis '" + std::string(s) +
                              "' (expected alpha|fraction|preset|combine)");
}

/// Axis values; only axes listed in `axes` are swept, the others stay at
/// the base config's value.
struct SweepSpec {
  std::vector<SweepAxis> axes;
  std::vector<double> alphas{0.25, 0.5, 1.0, 2.0, 3.0};
  std::vector<double> fractions{0.2, 0.5, 1.0};
  std::vector<AugmentLevel> presets{AugmentLevel::S1, AugmentLevel::S2,
                                    AugmentLevel::S3, AugmentLevel::S4};
  std::vector<CombineKind> combines{CombineKind::Standard,
                                    CombineKind::Normalized};
  /// Concurrent cells; results do not depend on it.
  std::size_t jobs = 1;

  bool has(SweepAxis a) const {
    return std::find(axes.begin(), axes.end(), a) != axes.end();
  }
};

/// Cartesian product of the requested axes, outermost combine, then preset,
/// fraction, alpha.
inline std::vector<ExperimentConfig> sweep_cells(const ExperimentConfig &base,
                                                 const SweepSpec &spec) {
  if (spec.axes.empty())
    throw std::invalid_argument("sweep needs at least one axis");
  auto pick = [&](SweepAxis a, const auto &values, auto current) {
    using V = std::decay_t<decltype(current)>;
    if (!spec.has(a))
      return std::vector<V>{current};
    if (values.empty())
      throw std::invalid_argument("sweep axis has no values");
    return std::vector<V>(values.begin(), values.end());
  };
  std::vector<ExperimentConfig> cells;
  for (CombineKind c : pick(SweepAxis::Combine, spec.combines, base.combine))
    for (AugmentLevel p : pick(SweepAxis::Preset, spec.presets, base.preset))
      for (double f : pick(SweepAxis::Fraction, spec.fractions, base.labeled_fraction))
        for (double a : pick(SweepAxis::Alpha, spec.alphas, base.alpha)) {
          ExperimentConfig cell = base;
          cell.combine = c;
          cell.preset = p;
          cell.labeled_fraction = f;
          cell.alpha = a;
          cells.push_back(cell);
        }
  return cells;
}

struct BestAlpha {
  std::string combine, preset;
  double fraction = 1.0;
  std::optional<double> alpha;
  std::optional<double> mean_value;
  std::size_t diverged = 0;
};

struct SweepResult {
  std::vector<MetricsRow> rows;
  /// For every (combine, preset, fraction) cell: the alpha with the best
  /// mean metric over non-diverged seeds, plus the divergence count.
  std::vector<BestAlpha> best_alpha;

  nlohmann::json summary() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto &b : best_alpha) {
      nlohmann::json j;
      j["combine"] = b.combine;
      j["preset"] = b.preset;
      j["fraction"] = b.fraction;
      j["best_alpha"] = b.alpha ? nlohmann::json(*b.alpha) : nlohmann::json();
      j["best_mean_value"] =
          b.mean_value ? nlohmann::json(*b.mean_value) : nlohmann::json();
      j["diverged_runs"] = b.diverged;
      list.push_back(std::move(j));
    }
    return nlohmann::json{{"best_alpha", std::move(list)}};
  }
};

inline std::vector<BestAlpha> best_alpha_per_cell(const std::vector<MetricsRow> &rows) {
  struct Acc {
    std::map<double, std::pair<double, std::size_t>> by_alpha;
    std::size_t diverged = 0;
    BestAlpha meta;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> cells;
  for (const auto &r : rows) {
    const std::string key =
        r.combine + '|' + r.preset + '|' + format_double(r.fraction);
    auto [it, fresh] = cells.try_emplace(key);
    if (fresh) {
      order.push_back(key);
      it->second.meta = {r.combine, r.preset, r.fraction, {}, {}, 0};
    }
    if (r.diverged || !r.value) {
      ++it->second.diverged;
      continue;
    }
    auto &slot = it->second.by_alpha[r.alpha.value_or(0.0)];
    slot.first += *r.value;
    ++slot.second;
  }
  std::vector<BestAlpha> out;
  for (const auto &key : order) {
    Acc &acc = cells.at(key);
    BestAlpha b = acc.meta;
    b.diverged = acc.diverged;
    for (const auto &[alpha, s] : acc.by_alpha) {
      const double mean = s.first / static_cast<double>(s.second);
      if (!b.mean_value || mean > *b.mean_value) {
        b.mean_value = mean;
        b.alpha = alpha;
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

/// Runs every cell (optionally concurrently) and concatenates rows in cell
/// order, so the output never depends on scheduling.
inline SweepResult sweep(const ExperimentConfig &base, const SweepSpec &spec) {
  const auto cells = sweep_cells(base, spec);
  for (const auto &c : cells)
    c.validate();
  std::vector<std::vector<MetricsRow>> results(cells.size());
  const std::size_t jobs = std::max<std::size_t>(1, spec.jobs);
  for (std::size_t start = 0; start < cells.size(); start += jobs) {
    const std::size_t end = std::min(cells.size(), start + jobs);
    std::vector<std::future<std::vector<MetricsRow>>> running;
    for (std::size_t i = start; i < end; ++i)
      running.push_back(std::async(jobs > 1 ? std::launch::async
                                            : std::launch::deferred,
                                   [&cells, i] { return run_experiment(cells[i]); }));
    for (std::size_t i = start; i < end; ++i)
      results[i] = running[i - start].get();
  }
  SweepResult out;
  for (auto &r : results)
    out.rows.insert(out.rows.end(), r.begin(), r.end());
  out.best_alpha = best_alpha_per_cell(out.rows);
  return out;
}

} // namespace selftrain
