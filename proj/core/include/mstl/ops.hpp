#pragma once

#include <cstddef>
#include <span>

#include "mstl/autograd.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

// ---------------------------------------------------------------------------
// Plain tensor kernels (no tape). Image tensors are channel-last: H x W x C,
// or N x H x W x C with a leading batch extent.
// ---------------------------------------------------------------------------

// Kernel layout is k x k x C_in x C_out with k odd. Output spatial extents are
// floor((dim + 2 * padding - k) / stride) + 1. Zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

// Column softmax of an a x b matrix (or a batch B x a x b). Max-subtracted.
Tensor softmax_columns(const Tensor& m);

// -log softmax(logits)[true_class] for a one-dimensional logit vector.
double cross_entropy(const Tensor& logits, std::size_t true_class);

// Per-channel spatial mean: H x W x C -> C, or N x H x W x C -> N x C.
Tensor global_avg_pool(const Tensor& input);

// H x W x d tensor -> d x (H*W) matrix; column j is the channel vector of the
// j-th position in row-major order.
Tensor unfold_mode3(const Tensor& x);
Tensor fold_mode3(const Tensor& m, std::size_t height, std::size_t width);

// Rank-2 product, or batched rank-3 product with matching batch extents.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Differentiable operations on tape values.
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// Elementwise product with a constant tensor of the same shape.
Var mul_const(Var a, const Tensor& c);
// Adds a length-C bias along the last axis.
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var reshape(Var x, Shape shape);
// Swaps the last two axes of a rank-2 or rank-3 value.
Var transpose(Var x);
Var matmul(Var a, Var b);
Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);
Var global_avg_pool(Var input);
Var softmax_columns(Var m);

struct BatchNormState {
  Tensor& running_mean;
  Tensor& running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

// Per-channel normalization over every axis but the last. In training mode
// batch statistics are used and the running statistics are updated as
// running = momentum * running + (1 - momentum) * batch.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState state, bool training);

// x: N x in, weight: in x out, bias: out.
Var linear(Var x, Var weight, Var bias);

// Row-wise cross-entropy: logits N x C, labels[i] in [0, C). Returns shape {N}.
Var cross_entropy_rows(Var logits, std::span<const std::size_t> labels);
// Scalar cross-entropy on a logit vector of shape {C}.
Var cross_entropy(Var logits, std::size_t true_class);

// Row-wise L2 normalization of an N x d value; throws DegenerateEmbeddingError
// on a zero row.
Var l2_normalize_rows(Var x);
// N x d -> {N}
Var sum_rows(Var x);
// N x p, N x q -> N x (p + q)
Var concat_cols(Var a, Var b);
Var sum(Var x);
Var mean(Var x);
// sum_i w[i] * x[i] over a flat view; w must match x's element count.
Var weighted_sum(Var x, const Tensor& weights);

}  // namespace mstl
