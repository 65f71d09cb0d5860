#include "mstl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mstl/errors.hpp"
#include "mstl/rng.hpp"

namespace mstl {

namespace {

double scalar_of(Var v) {
  if (v.value().size() != 1) {
    throw ContractError("grad_check: function must be scalar-valued, got shape " + to_string(v.shape()));
  }
  return v.value()[0];
}

std::vector<std::size_t> pick_coordinates(std::size_t total, const GradCheckOptions& o) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (o.max_coordinates == 0 || o.max_coordinates >= total) return idx;
  Rng rng(o.seed);
  for (std::size_t i = 0; i < o.max_coordinates; ++i) {
    std::swap(idx[i], idx[i + rng.uniform_int(total - i)]);
  }
  idx.resize(o.max_coordinates);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void record(GradCheckResult& r, std::size_t index, double a, double n, double floor) {
  const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
  ++r.coordinates_checked;
  if (err > r.max_rel_error || r.coordinates_checked == 1) {
    r.max_rel_error = err;
    r.worst_index = index;
    r.analytic = a;
    r.numeric = n;
  }
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("grad_check: step must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var y = f(tape, x);
    scalar_of(y);
    tape.backward(y);
    analytic = x.grad();
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(GradMode::kDisabled);
    return scalar_of(f(tape, tape.constant(at)));
  };
  GradCheckResult result;
  Tensor probe = point;
  for (std::size_t i : pick_coordinates(point.size(), options)) {
    const double orig = probe[i];
    probe[i] = orig + options.step;
    const double up = eval(probe);
    probe[i] = orig - options.step;
    const double down = eval(probe);
    probe[i] = orig;
    record(result, i, analytic[i], (up - down) / (2.0 * options.step), options.floor);
  }
  return result;
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double step) {
  GradCheckOptions o;
  o.step = step;
  return grad_check(f, point, o);
}

GradCheckResult grad_check_params(const ParamScalarFn& f, std::span<Parameter* const> params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("grad_check: step must be positive");
  std::vector<Tensor> saved_grads;
  for (Parameter* p : params) {
    saved_grads.push_back(p->grad);
    p->zero_grad();
  }
  {
    Tape tape;
    Var y = f(tape);
    scalar_of(y);
    tape.backward(y);
  }
  std::vector<Tensor> analytic;
  std::size_t total = 0;
  for (Parameter* p : params) {
    analytic.push_back(p->grad);
    total += p->value.size();
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved_grads[i];

  auto eval = [&] {
    Tape tape(GradMode::kDisabled);
    return scalar_of(f(tape));
  };
  GradCheckResult result;
  for (std::size_t flat : pick_coordinates(total, options)) {
    std::size_t pi = 0, off = flat;
    while (off >= params[pi]->value.size()) off -= params[pi++]->value.size();
    double& slot = params[pi]->value[off];
    const double orig = slot;
    slot = orig + options.step;
    const double up = eval();
    slot = orig - options.step;
    const double down = eval();
    slot = orig;
    record(result, flat, analytic[pi][off], (up - down) / (2.0 * options.step), options.floor);
  }
  return result;
}

}  // namespace mstl
