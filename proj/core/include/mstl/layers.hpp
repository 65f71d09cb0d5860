#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mstl/autograd.hpp"
#include "mstl/rng.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

enum class Mode { kTrain, kEval };

// A named non-trainable tensor (batch-norm running statistics).
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

class Conv2d {
 public:
  Conv2d() = default;
  // He-normal initialized k x k x in x out kernel, no bias.
  Conv2d(const std::string& name, std::size_t kernel, std::size_t in, std::size_t out,
         std::size_t stride, std::size_t padding, Rng& rng);

  Var forward(Tape& tape, Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight); }

  Parameter weight;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels);

  Var forward(Tape& tape, Var x, Mode mode);
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(std::vector<NamedBuffer>& out);

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  std::string name;

  static constexpr double kMomentum = 0.9;
  static constexpr double kEps = 1e-5;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Var forward(Tape& tape, Var x);
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }

  Parameter weight;
  Parameter bias;
};

}  // namespace mstl
