#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mstl/tensor.hpp"

namespace mstl {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  // Gradient of the last backward() root with respect to this value. Empty
  // tensor when the value does not require a gradient.
  const Tensor& grad() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Inputs handed to a backward closure. input_grads[i] is null when parent i
// needs no gradient; closures accumulate (+=) into the non-null ones.
struct GradContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const GradContext&)>;

enum class GradMode { kEnabled, kDisabled };

// Define-by-run operation record. Nodes are appended as they are created, so
// parents always precede children and reverse creation order is a valid
// topological order for backpropagation.
class Tape {
 public:
  explicit Tape(GradMode mode = GradMode::kEnabled) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  GradMode mode() const { return mode_; }

  Var constant(Tensor value);
  // Leaf whose gradient is readable through Var::grad after backward().
  Var variable(Tensor value);
  // Leaf bound to a Parameter; backward() accumulates into param.grad.
  // Under GradMode::kDisabled this records a constant.
  Var parameter(Parameter& param);

  // Records an operation result. The closure is dropped when no parent
  // requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  // Reverse sweep from a one-element root, seeded with 1.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::span<const std::size_t> parents(std::size_t id) const { return nodes_[id].parents; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  GradMode mode_;
  std::vector<Node> nodes_;
};

}  // namespace mstl
