// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "selftrain/experiment.hpp"

namespace selftrain {

// Results CSV. Columns, in order:
//   task,mode,init,student_init,combine,alpha,weight,preset,fraction,seed,
//   metric,value,teacher_value,delta,steps_to_target,diverged
// Numbers use the shortest round-trip decimal form. Empty cells mean "not
// applicable". A diverged run has the literal `diverged` in `value` and 1
// in `diverged`.

inline constexpr std::string_view kResultsHeader =
    "task,mode,init,student_init,combine,alpha,weight,preset,fraction,seed,"
    "metric,value,teacher_value,delta,steps_to_target,diverged";
inline constexpr std::string_view kDivergedMarker = "diverged";

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("bad number '" + std::string(s) + "' in results");
  return v;
}

inline std::uint64_t parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("bad integer '" + std::string(s) + "' in results");
  return v;
}

namespace detail {

inline std::string opt_cell(const std::optional<double> &v) {
  return v ? format_double(*v) : std::string{};
}

inline std::optional<double> opt_parse(std::string_view s) {
  if (s.empty())
    return std::nullopt;
  return parse_double(s);
}

inline std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += ch;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

} // namespace detail

inline std::string results_csv(const std::vector<MetricsRow> &rows) {
  std::ostringstream os;
  os << kResultsHeader << '\n';
  for (const MetricsRow &r : rows) {
    os << r.task << ',' << r.mode << ',' << r.init << ',' << r.student_init
       << ',' << r.combine << ',' << detail::opt_cell(r.alpha) << ','
       << detail::opt_cell(r.weight) << ',' << r.preset << ','
       << format_double(r.fraction) << ',' << r.seed << ',' << r.metric << ','
       << (r.diverged ? std::string(kDivergedMarker) : detail::opt_cell(r.value))
       << ',' << detail::opt_cell(r.teacher_value) << ','
       << detail::opt_cell(r.delta) << ','
       << (r.steps_to_target ? std::to_string(*r.steps_to_target) : "") << ','
       << (r.diverged ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::vector<MetricsRow> parse_results_csv(std::istream &is) {
  std::string line;
  if (!std::getline(is, line) || line != kResultsHeader)
    throw std::runtime_error("results file has an unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    const auto c = detail::split_csv(line);
    if (c.size() != 16)
      throw std::runtime_error("results row has " + std::to_string(c.size()) +
                               " columns, expected 16");
    MetricsRow r;
    r.task = c[0];
    r.mode = c[1];
    r.init = c[2];
    r.student_init = c[3];
    r.combine = c[4];
    r.alpha = detail::opt_parse(c[5]);
    r.weight = detail::opt_parse(c[6]);
    r.preset = c[7];
    r.fraction = parse_double(c[8]);
    r.seed = parse_uint(c[9]);
    r.metric = c[10];
    r.diverged = c[15] == "1";
    if (c[11] != kDivergedMarker)
      r.value = detail::opt_parse(c[11]);
    r.teacher_value = detail::opt_parse(c[12]);
    r.delta = detail::opt_parse(c[13]);
    if (!c[14].empty())
      r.steps_to_target = static_cast<std::size_t>(parse_uint(c[14]));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Per-configuration aggregates over seeds, in first-appearance order.
inline nlohmann::json results_summary(const std::vector<MetricsRow> &rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string,
                         std::string, std::string, std::string, std::string,
                         std::string, std::string>;
  struct Agg {
    std::size_t n = 0, diverged = 0, with_teacher = 0, with_steps = 0;
    double value = 0.0, teacher = 0.0, delta = 0.0, steps = 0.0;
  };
  std::vector<Key> order;
  std::map<Key, Agg> groups;
  for (const auto &r : rows) {
    Key k{r.task,  r.mode,   r.init,
          r.student_init, r.combine, detail::opt_cell(r.alpha),
          detail::opt_cell(r.weight), r.preset, format_double(r.fraction),
          r.metric};
    auto [it, fresh] = groups.try_emplace(k);
    if (fresh)
      order.push_back(k);
    Agg &a = it->second;
    if (r.diverged || !r.value) {
      ++a.diverged;
      continue;
    }
    ++a.n;
    a.value += *r.value;
    if (r.teacher_value && r.delta) {
      ++a.with_teacher;
      a.teacher += *r.teacher_value;
      a.delta += *r.delta;
    }
    if (r.steps_to_target) {
      ++a.with_steps;
      a.steps += static_cast<double>(*r.steps_to_target);
    }
  }
  nlohmann::json out;
  out["format"] = "selftrain-summary";
  out["version"] = 1;
  out["rows"] = rows.size();
  nlohmann::json list = nlohmann::json::array();
  for (const Key &k : order) {
    const Agg &a = groups.at(k);
    nlohmann::json g;
    g["task"] = std::get<0>(k);
    g["mode"] = std::get<1>(k);
    g["init"] = std::get<2>(k);
    g["student_init"] = std::get<3>(k);
    g["combine"] = std::get<4>(k);
    g["alpha"] = std::get<5>(k);
    g["weight"] = std::get<6>(k);
    g["preset"] = std::get<7>(k);
    g["fraction"] = std::get<8>(k);
    g["metric"] = std::get<9>(k);
    g["runs"] = a.n;
    g["diverged"] = a.diverged;
    auto mean = [](double s, std::size_t n) -> nlohmann::json {
      return n ? nlohmann::json(s / static_cast<double>(n)) : nlohmann::json();
    };
    g["mean_value"] = mean(a.value, a.n);
    g["mean_teacher_value"] = mean(a.teacher, a.with_teacher);
    g["mean_delta"] = mean(a.delta, a.with_teacher);
    g["mean_steps_to_target"] = mean(a.steps, a.with_steps);
    list.push_back(std::move(g));
  }
  out["groups"] = std::move(list);
  return out;
}

/// Summary path next to a CSV: "x.csv" -> "x.summary.json".
inline std::string summary_path(const std::string &csv_path) {
  const std::string ext = ".csv";
  if (csv_path.size() > ext.size() &&
      csv_path.compare(csv_path.size() - ext.size(), ext.size(), ext) == 0)
    return csv_path.substr(0, csv_path.size() - ext.size()) + ".summary.json";
  return csv_path + ".summary.json";
}

/// Writes the CSV and its JSON summary. `extra` is merged into the summary.
inline void write_results(const std::vector<MetricsRow> &rows,
                          const std::string &path,
                          const nlohmann::json &extra = nullptr) {
  if (rows.empty())
    throw std::invalid_argument("no result rows to write");
  {
    std::ofstream os(path, std::ios::binary);
    if (!os)
      throw std::runtime_error("cannot open '" + path + "' for writing");
    os << results_csv(rows);
    if (!os)
      throw std::runtime_error("failed writing '" + path + "'");
  }
  nlohmann::json summary = results_summary(rows);
  if (extra.is_object())
    for (const auto &[k, v] : extra.items())
      summary[k] = v;
  const std::string spath = summary_path(path);
  std::ofstream js(spath, std::ios::binary);
  if (!js)
    throw std::runtime_error("cannot open '" + spath + "' for writing");
  js << summary.dump(2) << '\n';
}

inline std::vector<MetricsRow> read_results(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open '" + path + "'");
  return parse_results_csv(is);
}

} // namespace selftrain
