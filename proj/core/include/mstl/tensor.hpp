#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mstl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of 64-bit reals. Value semantics; copying copies data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a one-element tensor; throws ContractError otherwise.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// A trainable weight with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

}  // namespace mstl
