#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mstl/autograd.hpp"
#include "mstl/rng.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

// Post-softmax affinity matrix, hw x hw per image (N x hw x hw for a batch).
// Entry (i, j) is the weight of position i in the output at position j, so
// every column sums to one.
struct AttentionMap {
  Tensor weights;
};

// Non-local self-attention over all spatial positions:
//   Q, K, V = 1x1 projections of X;  O = V * softmax_columns(K^T Q)
// folded back to H x W x d_v, projected to C channels and added to X.
// No positional encoding and a single head; K^T Q is not rescaled.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const std::string& prefix, std::size_t channels, std::size_t key_dim,
                 std::size_t value_dim, Rng& rng);
  AttentionBlock(const std::string& prefix, std::size_t channels, Rng& rng)
      : AttentionBlock(prefix, channels, default_dim(channels), default_dim(channels), rng) {}

  // floor(c / 2), at least 1.
  static std::size_t default_dim(std::size_t channels) { return channels / 2 > 0 ? channels / 2 : 1; }

  // X + project_out(attention(X)). Accepts H x W x C or N x H x W x C.
  Var forward(Tape& tape, Var x, AttentionMap* map = nullptr);
  // project_out(attention(X)) without the residual add.
  Var forward_core(Tape& tape, Var x, AttentionMap* map = nullptr);

  std::size_t channels() const { return w_q.value.dim(2); }
  std::size_t key_dim() const { return w_q.value.dim(3); }
  std::size_t value_dim() const { return w_v.value.dim(3); }
  std::size_t parameter_count() const;

  void collect(std::vector<Parameter*>& out) {
    out.insert(out.end(), {&w_q, &w_k, &w_v, &w_out});
  }

  // 1x1 kernels stored as 1 x 1 x in x out.
  Parameter w_q;
  Parameter w_k;
  Parameter w_v;
  Parameter w_out;
};

}  // namespace mstl
