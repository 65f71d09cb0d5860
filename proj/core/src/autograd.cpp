#include "mstl/autograd.hpp"

#include "mstl/errors.hpp"

namespace mstl {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, mode_ == GradMode::kEnabled});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param) {
  if (mode_ == GradMode::kDisabled) return constant(param.value);
  nodes_.push_back(Node{param.value, {}, {}, {}, &param, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  bool needs = false;
  if (mode_ == GradMode::kEnabled) {
    for (std::size_t p : parents) {
      if (p >= nodes_.size()) throw ContractError("tape parent recorded after child");
      needs = needs || nodes_[p].requires_grad;
    }
  }
  Node node{std::move(value), {}, std::move(parents), {}, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward() root belongs to another tape");
  const std::size_t r = root.id();
  if (nodes_[r].value.size() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        to_string(nodes_[r].value.shape()));
  }
  for (std::size_t i = 0; i <= r; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
    } else {
      n.grad = Tensor();
    }
  }
  if (!nodes_[r].requires_grad) return;
  nodes_[r].grad[0] = 1.0;

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
  for (std::size_t i = r + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      continue;
    }
    if (!n.backward) continue;
    inputs.clear();
    input_grads.clear();
    for (std::size_t p : n.parents) {
      inputs.push_back(&nodes_[p].value);
      input_grads.push_back(nodes_[p].requires_grad ? &nodes_[p].grad : nullptr);
    }
    n.backward(GradContext{n.value, n.grad, inputs, input_grads});
  }
}

}  // namespace mstl
