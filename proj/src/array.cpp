#include "vaetk/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "vaetk/errors.hpp"

namespace vaetk {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

static void check_extents(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("zero extent in shape " + to_string(shape));
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(numel(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != numel(shape_))
    throw DimensionError("shape " + to_string(shape_) + " needs " +
                         std::to_string(numel(shape_)) + " values, got " +
                         std::to_string(data_.size()));
}

Array Array::vector(std::initializer_list<double> values) {
  return Array(Shape{values.size()}, std::vector<double>(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols,
                    std::initializer_list<double> values) {
  return Array(Shape{rows, cols}, std::vector<double>(values));
}

Array Array::identity(std::size_t n) {
  Array out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
  return out;
}

double Array::item() const {
  if (data_.size() != 1)
    throw DimensionError("item() on non-scalar array of shape " + to_string(shape_));
  return data_[0];
}

Array Array::reshaped(Shape shape) const {
  if (numel(shape) != data_.size())
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " +
                         to_string(shape));
  return Array(std::move(shape), data_);
}

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace vaetk
