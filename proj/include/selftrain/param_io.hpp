// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "selftrain/model.hpp"

namespace selftrain {

// Binary parameter container, all integers little-endian u64 unless noted:
//
//   "STPARAM1"                      8-byte magic
//   u32 version (=1), u32 kind      kind: 0 classifier, 1 dense-grid
//   input_width classes grid_h grid_w aux_classes
//   hidden_count, hidden[hidden_count]
//   seed
//   tensor_count, then per tensor:
//     name_len, name bytes, rank, dims[rank], f64 payload[prod(dims)]
//
// f64 values are IEEE-754 binary64, little-endian.

inline constexpr char kParamMagic[8] = {'S', 'T', 'P', 'A', 'R', 'A', 'M', '1'};
inline constexpr std::uint32_t kParamVersion = 1;

namespace detail {

template <typename U> void put_le(std::ostream &os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i)
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char *>(buf), sizeof(U));
}

template <typename U> U get_le(std::istream &is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char *>(buf), sizeof(U)))
    throw std::runtime_error("parameter file truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_count(std::istream &is, std::uint64_t limit,
                               const char *what) {
  const auto v = get_le<std::uint64_t>(is);
  if (v > limit)
    throw std::runtime_error(std::string("implausible ") + what +
                             " in parameter file");
  return v;
}

} // namespace detail

inline void write_params(std::ostream &os, const ParamSet &ps) {
  using detail::put_le;
  os.write(kParamMagic, sizeof kParamMagic);
  put_le<std::uint32_t>(os, kParamVersion);
  put_le<std::uint32_t>(os, ps.spec.kind == ModelKind::DenseGrid ? 1 : 0);
  put_le<std::uint64_t>(os, ps.spec.input_width);
  put_le<std::uint64_t>(os, ps.spec.classes);
  put_le<std::uint64_t>(os, ps.spec.grid_h);
  put_le<std::uint64_t>(os, ps.spec.grid_w);
  put_le<std::uint64_t>(os, ps.spec.aux_classes);
  put_le<std::uint64_t>(os, ps.spec.hidden.size());
  for (auto h : ps.spec.hidden)
    put_le<std::uint64_t>(os, h);
  put_le<std::uint64_t>(os, ps.seed);
  put_le<std::uint64_t>(os, ps.tensors.size());
  for (const auto &[name, t] : ps.tensors) {
    put_le<std::uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint64_t>(os, t.rank());
    for (auto d : t.shape())
      put_le<std::uint64_t>(os, d);
    for (double v : t.data())
      put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os)
    throw std::runtime_error("failed writing parameters");
}

inline ParamSet read_params(std::istream &is) {
  using detail::get_count;
  using detail::get_le;
  char magic[sizeof kParamMagic];
  if (!is.read(magic, sizeof magic) ||
      std::memcmp(magic, kParamMagic, sizeof magic) != 0)
    throw std::runtime_error("not a parameter file (bad magic)");
  if (const auto version = get_le<std::uint32_t>(is); version != kParamVersion)
    throw std::runtime_error("unsupported parameter file version " +
                             std::to_string(version));
  ParamSet ps;
  const auto kind = get_le<std::uint32_t>(is);
  if (kind > 1)
    throw std::runtime_error("unknown model kind in parameter file");
  ps.spec.kind = kind ? ModelKind::DenseGrid : ModelKind::Classifier;
  constexpr std::uint64_t kMaxDim = 1u << 24;
  ps.spec.input_width = get_count(is, kMaxDim, "input width");
  ps.spec.classes = get_count(is, kMaxDim, "class count");
  ps.spec.grid_h = get_count(is, kMaxDim, "grid height");
  ps.spec.grid_w = get_count(is, kMaxDim, "grid width");
  ps.spec.aux_classes = get_count(is, kMaxDim, "aux class count");
  ps.spec.hidden.resize(get_count(is, 1024, "layer count"));
  for (auto &h : ps.spec.hidden)
    h = get_count(is, kMaxDim, "hidden width");
  ps.spec.validate();
  ps.seed = get_le<std::uint64_t>(is);
  const auto count = get_count(is, 4096, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get_count(is, 4096, "name length"), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size())))
      throw std::runtime_error("parameter file truncated");
    Shape shape(get_count(is, 8, "rank"));
    for (auto &d : shape)
      d = get_count(is, kMaxDim, "dimension");
    std::vector<double> data(shape_size(shape));
    for (double &v : data)
      v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    ps.tensors.emplace_back(std::move(name),
                            Tensor(std::move(shape), std::move(data)));
  }
  // The model must accept what was loaded.
  const ParamSet expected = init_params(ps.spec, 0);
  if (expected.tensors.size() != ps.tensors.size())
    throw std::runtime_error("parameter file tensor set does not match spec");
  for (std::size_t i = 0; i < ps.tensors.size(); ++i)
    if (expected.tensors[i].first != ps.tensors[i].first ||
        expected.tensors[i].second.shape() != ps.tensors[i].second.shape())
      throw std::runtime_error("parameter '" + ps.tensors[i].first +
                               "' does not match spec");
  return ps;
}

inline void save_params(const std::string &path, const ParamSet &ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  write_params(os, ps);
}

inline ParamSet load_params(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open '" + path + "'");
  return read_params(is);
}

} // namespace selftrain
