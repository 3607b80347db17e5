// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace selftrain {

/// Corner-aligned source coordinate of output index `i`: output corners
/// land exactly on input corners.
inline double aligned_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out <= 1 || in <= 1)
    return 0.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) /
         static_cast<double>(out - 1);
}

/// Bilinear resampling of an [H, W, C] grid to [out_h, out_w, C].
inline std::vector<double> resample_bilinear(const std::vector<double> &src,
                                             std::size_t h, std::size_t w,
                                             std::size_t c, std::size_t out_h,
                                             std::size_t out_w) {
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("cannot resample to an empty grid");
  if (src.size() != h * w * c)
    throw std::invalid_argument("grid payload does not match its shape");
  if (out_h == h && out_w == w)
    return src;
  std::vector<double> out(out_h * out_w * c);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double y = aligned_coord(i, h, out_h);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double x = aligned_coord(j, w, out_w);
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double v00 = src[(y0 * w + x0) * c + k];
        const double v01 = src[(y0 * w + x1) * c + k];
        const double v10 = src[(y1 * w + x0) * c + k];
        const double v11 = src[(y1 * w + x1) * c + k];
        const double top = v00 + (v01 - v00) * fx;
        const double bottom = v10 + (v11 - v10) * fx;
        out[(i * out_w + j) * c + k] = top + (bottom - top) * fy;
      }
    }
  }
  return out;
}

/// Nearest-neighbour resampling (labels, masks) with the same alignment.
template <typename T>
std::vector<T> resample_nearest(const std::vector<T> &src, std::size_t h,
                                std::size_t w, std::size_t out_h,
                                std::size_t out_w) {
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("cannot resample to an empty grid");
  std::vector<T> out(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto y = static_cast<std::size_t>(std::lround(aligned_coord(i, h, out_h)));
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto x =
          static_cast<std::size_t>(std::lround(aligned_coord(j, w, out_w)));
      out[i * out_w + j] = src[y * w + x];
    }
  }
  return out;
}

/// Scaled extent, rounded; 0 signals the grid would vanish.
inline std::size_t scaled_extent(std::size_t n, double scale) {
  const double v = std::round(static_cast<double>(n) * scale);
  return v < 1.0 ? 0 : static_cast<std::size_t>(v);
}

} // namespace selftrain
