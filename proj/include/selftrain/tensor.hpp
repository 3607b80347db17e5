// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace selftrain {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float64 array. A scalar is a tensor of shape [1].
class Tensor {
public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    validate();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate();
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector{v}); }

  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  const Shape &shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  std::vector<double> &data() noexcept { return data_; }
  const std::vector<double> &data() const noexcept { return data_; }

  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (!is_scalar())
      throw std::logic_error("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  /// Same payload, new shape; sizes must agree.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw std::invalid_argument("cannot reshape " + shape_str(shape_) +
                                  " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v))
        return false;
    return true;
  }

  friend bool operator==(const Tensor &, const Tensor &) = default;

private:
  void validate() const {
    if (shape_.empty())
      throw std::invalid_argument("tensor shape must have at least one dim");
    for (std::size_t d : shape_)
      if (d == 0)
        throw std::invalid_argument("tensor dims must be positive, got " +
                                    shape_str(shape_));
    if (shape_size(shape_) != data_.size())
      throw std::invalid_argument("shape " + shape_str(shape_) +
                                  " does not match payload of " +
                                  std::to_string(data_.size()));
  }

  Shape shape_;
  std::vector<double> data_;
};

} // namespace selftrain
