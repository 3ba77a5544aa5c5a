#include "avgn/numeric/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "avgn/numeric/errors.hpp"

namespace avgn {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_extents(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
  }
}
}  // namespace

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

NdArray NdArray::matrix(std::size_t rows, std::size_t cols,
                        std::initializer_list<double> values) {
  return NdArray({rows, cols}, std::vector<double>(values));
}

NdArray NdArray::vector(std::initializer_list<double> values) {
  return NdArray({values.size()}, std::vector<double>(values));
}

NdArray NdArray::vector(std::vector<double> values) {
  const auto n = values.size();
  return NdArray({n}, std::move(values));
}

NdArray NdArray::scalar(double value) { return NdArray({1}, {value}); }

std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

NdArray NdArray::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return NdArray(std::move(shape), data_);
}

bool NdArray::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double NdArray::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on array of shape " + shape_str(shape_));
  }
  return data_[0];
}

void NdArray::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

NdArray& NdArray::operator+=(const NdArray& other) {
  if (other.size() != data_.size()) {
    throw DimensionError("accumulate " + shape_str(other.shape_) + " into " +
                         shape_str(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

}  // namespace avgn
