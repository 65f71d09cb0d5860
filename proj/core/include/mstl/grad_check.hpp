#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "mstl/autograd.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

// Per-coordinate error is |a - n| / max(|a|, |n|, floor). The floor keeps
// coordinates whose true derivative is zero from dividing round-off by ~0.
struct GradCheckOptions {
  double step = 1e-4;
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

using ScalarFn = std::function<Var(Tape&, Var)>;
using ParamScalarFn = std::function<Var(Tape&)>;

// Compares the reverse-mode gradient of f at `point` against central
// differences (f(x+h) - f(x-h)) / 2h. Throws ContractError when f is not
// scalar-valued.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, const GradCheckOptions& options = {});
GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double step);

// Same comparison with respect to parameter values. f must bind the parameters
// through Tape::parameter on every call. Parameter values are restored.
GradCheckResult grad_check_params(const ParamScalarFn& f, std::span<Parameter* const> params,
                                  const GradCheckOptions& options = {});

}  // namespace mstl
