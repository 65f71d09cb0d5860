#include "mstl/layers.hpp"

#include <cmath>

#include "mstl/ops.hpp"

namespace mstl {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

Conv2d::Conv2d(const std::string& name, std::size_t kernel, std::size_t in, std::size_t out,
               std::size_t s, std::size_t p, Rng& rng)
    : weight(name + ".weight",
             normal_tensor({kernel, kernel, in, out},
                           std::sqrt(2.0 / static_cast<double>(kernel * kernel * in)), rng)),
      stride(s),
      padding(p) {}

Var Conv2d::forward(Tape& tape, Var x) { return conv2d(x, tape.parameter(weight), stride, padding); }

BatchNorm::BatchNorm(const std::string& n, std::size_t channels)
    : gamma(n + ".gamma", Tensor({channels}, 1.0)),
      beta(n + ".beta", Tensor({channels}, 0.0)),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0),
      name(n) {}

Var BatchNorm::forward(Tape& tape, Var x, Mode mode) {
  return batch_norm(x, tape.parameter(gamma), tape.parameter(beta),
                    BatchNormState{running_mean, running_var, kMomentum, kEps}, mode == Mode::kTrain);
}

void BatchNorm::collect_buffers(std::vector<NamedBuffer>& out) {
  out.push_back({name + ".running_mean", &running_mean});
  out.push_back({name + ".running_var", &running_var});
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(name + ".weight", normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias(name + ".bias", Tensor({out}, 0.0)) {}

Var Linear::forward(Tape& tape, Var x) {
  return linear(x, tape.parameter(weight), tape.parameter(bias));
}

}  // namespace mstl
