#include "mstl/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mstl/errors.hpp"

namespace mstl {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (numel(shape_) != data_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

}  // namespace mstl
