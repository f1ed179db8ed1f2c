#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dbridge/core/error.hpp"

namespace dbridge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

// Dense row-major array of rank 0 (scalar), 1 or 2.
class Array {
 public:
  Array() : data_(1, 0.0) {}

  explicit Array(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_size(shape_), fill);
  }

  Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_size(shape_))
      throw ConfigError("array data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_string(shape_));
  }

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array vector(std::vector<double> v) {
    auto n = v.size();
    return Array(Shape{n}, std::move(v));
  }
  static Array vector(std::initializer_list<double> v) { return vector(std::vector<double>(v)); }
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Array(Shape{rows, cols}, std::move(v));
  }
  static Array matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size(), c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (auto& row : rows) {
      if (row.size() != c) throw ConfigError("ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return matrix(r, c, std::move(v));
  }
  static Array zeros_like(const Array& a) { return Array(a.shape_, 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return shape_.empty(); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : shape_.back(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    if (data_.size() != 1) throw UsageError("item() on array of shape " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  void check_rank() const {
    if (shape_.size() > 2) throw ConfigError("arrays of rank > 2 are not supported");
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace dbridge
