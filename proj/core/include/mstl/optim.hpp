#pragma once

#include <map>
#include <span>
#include <string>

#include "mstl/tensor.hpp"

namespace mstl {

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Velocity buffers keyed by parameter name.
struct SgdState {
  std::map<std::string, Tensor> velocity;
};

// v <- momentum * v + (grad + weight_decay * value); value <- value - lr * v.
// Throws ContractError on out-of-range hyperparameters.
void sgd_step(std::span<Parameter* const> params, SgdState& state, const SgdOptions& options);

void zero_grads(std::span<Parameter* const> params);

// Step decay: lr * factor^(number of milestones <= epoch).
double step_decay_lr(double initial, double factor, std::span<const int> milestones, int epoch);

}  // namespace mstl
