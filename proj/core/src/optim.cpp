#include "mstl/optim.hpp"

#include "mstl/errors.hpp"

namespace mstl {

void sgd_step(std::span<Parameter* const> params, SgdState& state, const SgdOptions& options) {
  if (options.lr < 0.0) throw ContractError("sgd_step: lr must be >= 0");
  if (options.momentum < 0.0 || options.momentum >= 1.0) {
    throw ContractError("sgd_step: momentum must lie in [0, 1)");
  }
  if (options.weight_decay < 0.0) throw ContractError("sgd_step: weight_decay must be >= 0");

  for (Parameter* p : params) {
    auto [it, inserted] = state.velocity.try_emplace(p->name, p->value.shape(), 0.0);
    Tensor& v = it->second;
    if (v.shape() != p->value.shape()) {
      throw DimensionError("sgd_step: velocity for " + p->name + " has stale shape");
    }
    auto val = p->value.data();
    auto g = p->grad.data();
    auto vel = v.data();
    for (std::size_t i = 0; i < val.size(); ++i) {
      vel[i] = options.momentum * vel[i] + (g[i] + options.weight_decay * val[i]);
      val[i] -= options.lr * vel[i];
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

double step_decay_lr(double initial, double factor, std::span<const int> milestones, int epoch) {
  double lr = initial;
  for (int m : milestones) {
    if (epoch >= m) lr *= factor;
  }
  return lr;
}

}  // namespace mstl
