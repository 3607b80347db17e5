// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selftrain/example.hpp"

namespace selftrain {

// Line-oriented dataset records (JSON Lines). Line 1 is a header:
//
//   {"format":"selftrain-records","version":1,"kind":"dataset"|"pseudo",
//    "count":N,"meta":{...generator or labeling parameters...}}
//
// Each following line is one example:
//
//   {"shape":[D] | [H,W,C], "features":[...], "source":"human"|"pseudo",
//    "target":[...]        (omitted when unlabeled),
//    "ignore":[0|1,...]    (grid examples with a target),
//    "score":s             (pseudo examples)}

inline constexpr const char *kRecordFormat = "selftrain-records";
inline constexpr int kRecordVersion = 1;

struct RecordSet {
  std::string kind = "dataset";
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Example> examples;
};

inline nlohmann::json example_to_json(const Example &e) {
  nlohmann::json out;
  out["shape"] = e.feature_shape;
  out["features"] = e.features;
  out["source"] = source_name(e.source);
  if (e.labeled()) {
    out["target"] = e.target;
    if (e.is_grid())
      out["ignore"] = e.ignore;
  }
  if (e.score)
    out["score"] = *e.score;
  return out;
}

inline Example example_from_json(const nlohmann::json &j) {
  Example e;
  e.feature_shape = j.at("shape").get<Shape>();
  e.features = j.at("features").get<std::vector<double>>();
  const auto src = j.at("source").get<std::string>();
  if (src == "human")
    e.source = Source::Human;
  else if (src == "pseudo")
    e.source = Source::Pseudo;
  else
    throw std::runtime_error("unknown record source '" + src + "'");
  if (j.contains("target"))
    e.target = j.at("target").get<std::vector<int>>();
  if (j.contains("ignore"))
    e.ignore = j.at("ignore").get<std::vector<std::uint8_t>>();
  if (j.contains("score"))
    e.score = j.at("score").get<double>();
  if (e.feature_shape.empty() || shape_size(e.feature_shape) != e.features.size())
    throw std::runtime_error("record features do not match shape");
  if (e.labeled() && e.target.size() != e.cells())
    throw std::runtime_error("record target does not match shape");
  if (e.labeled() && e.is_grid() && e.ignore.size() != e.target.size())
    throw std::runtime_error("grid record target needs an ignore mask");
  return e;
}

inline void write_records(std::ostream &os, const RecordSet &rs) {
  nlohmann::json header;
  header["format"] = kRecordFormat;
  header["version"] = kRecordVersion;
  header["kind"] = rs.kind;
  header["count"] = rs.examples.size();
  header["meta"] = rs.meta;
  os << header.dump() << '\n';
  for (const auto &e : rs.examples)
    os << example_to_json(e).dump() << '\n';
  if (!os)
    throw std::runtime_error("failed writing records");
}

inline RecordSet read_records(std::istream &is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("record file is empty");
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != kRecordFormat)
    throw std::runtime_error("not a selftrain record file");
  if (header.value("version", 0) != kRecordVersion)
    throw std::runtime_error("unsupported record version " +
                             header.at("version").dump());
  RecordSet rs;
  rs.kind = header.value("kind", "dataset");
  rs.meta = header.value("meta", nlohmann::json::object());
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty())
      continue;
    try {
      rs.examples.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception &ex) {
      throw std::runtime_error("record line " + std::to_string(lineno) + ": " +
                               ex.what());
    }
  }
  if (header.contains("count") &&
      header.at("count").get<std::size_t>() != rs.examples.size())
    throw std::runtime_error("record count does not match header");
  return rs;
}

inline void save_records(const std::string &path, const RecordSet &rs) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  write_records(os, rs);
}

inline RecordSet load_records(const std::string &path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open '" + path + "'");
  return read_records(is);
}

} // namespace selftrain
