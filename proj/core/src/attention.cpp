#include "mstl/attention.hpp"

#include <cmath>

#include "mstl/errors.hpp"
#include "mstl/ops.hpp"

namespace mstl {

namespace {

Parameter projection(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Tensor w({1, 1, in, out}, 0.0);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.data()) v = rng.normal(0.0, stddev);
  return Parameter(name, std::move(w));
}

}  // namespace

AttentionBlock::AttentionBlock(const std::string& prefix, std::size_t channels, std::size_t key_dim,
                               std::size_t value_dim, Rng& rng) {
  if (channels == 0 || key_dim == 0 || value_dim == 0) {
    throw DimensionError("attention: channel and projection dims must be >= 1");
  }
  w_q = projection(prefix + ".w_q", channels, key_dim, rng);
  w_k = projection(prefix + ".w_k", channels, key_dim, rng);
  w_v = projection(prefix + ".w_v", channels, value_dim, rng);
  // Zero output projection: a fresh block is the identity, so inserting it
  // does not disturb the surrounding network at initialization.
  w_out = Parameter(prefix + ".w_out", Tensor({1, 1, value_dim, channels}, 0.0));
}

std::size_t AttentionBlock::parameter_count() const {
  return w_q.value.size() + w_k.value.size() + w_v.value.size() + w_out.value.size();
}

Var AttentionBlock::forward_core(Tape& tape, Var x, AttentionMap* map) {
  const Shape in_shape = x.shape();
  if (in_shape.size() != 3 && in_shape.size() != 4) {
    throw DimensionError("attention: expected H x W x C or N x H x W x C, got " + to_string(in_shape));
  }
  const bool batched = in_shape.size() == 4;
  const std::size_t n = batched ? in_shape[0] : 1;
  const std::size_t h = in_shape[batched ? 1 : 0], w = in_shape[batched ? 2 : 1];
  const std::size_t c = in_shape.back();
  if (c != channels()) {
    throw DimensionError("attention: input has " + std::to_string(c) + " channels, block expects " +
                         std::to_string(channels()));
  }
  const std::size_t positions = h * w;
  Var xb = batched ? x : reshape(x, {1, h, w, c});

  // Position-major unfolds: row j of Qt is the query vector at position j.
  Var qt = reshape(conv2d(xb, tape.parameter(w_q), 1, 0), {n, positions, key_dim()});
  Var kt = reshape(conv2d(xb, tape.parameter(w_k), 1, 0), {n, positions, key_dim()});
  Var vt = reshape(conv2d(xb, tape.parameter(w_v), 1, 0), {n, positions, value_dim()});

  Var affinity = matmul(kt, transpose(qt));  // (K^T Q)[i][j] = k_i . q_j
  Var weights = softmax_columns(affinity);
  if (map) map->weights = batched ? weights.value() : weights.value().reshaped({positions, positions});

  Var ot = matmul(transpose(weights), vt);  // (V A)^T
  Var o = reshape(ot, {n, h, w, value_dim()});
  Var out = conv2d(o, tape.parameter(w_out), 1, 0);
  return batched ? out : reshape(out, in_shape);
}

Var AttentionBlock::forward(Tape& tape, Var x, AttentionMap* map) {
  return add(x, forward_core(tape, x, map));
}

}  // namespace mstl
