#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vaetk {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Plain value type; graph membership is
/// tracked separately by ad::Var.
class Array {
 public:
  Array() : shape_{}, data_(1, 0.0) {}
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array vector(std::initializer_list<double> values);
  static Array matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values);
  static Array identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2D accessor; only meaningful for rank-2 arrays.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const;

  // Same data, different extents. Element count must match.
  Array reshaped(Shape shape) const;

  bool all_finite() const;

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace vaetk
