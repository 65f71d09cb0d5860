#include <gtest/gtest.h>

#include <numeric>

#include "mstl/attention.hpp"
#include "mstl/errors.hpp"
#include "mstl/grad_check.hpp"
#include "mstl/ops.hpp"
#include "oracles.hpp"

namespace mstl {
namespace {

using oracle::random_tensor;

// Fresh blocks start with a zero output projection; tests that exercise the
// full map randomize it.
AttentionBlock random_block(std::size_t c, std::size_t dk, std::size_t dv, Rng& rng) {
  AttentionBlock b("attn", c, dk, dv, rng);
  b.w_out.value = random_tensor(b.w_out.value.shape(), rng);
  return b;
}

Tensor run_core(AttentionBlock& b, const Tensor& x, AttentionMap* map = nullptr) {
  Tape tape(GradMode::kDisabled);
  return b.forward_core(tape, tape.constant(x), map).value();
}

TEST(Attention, DefaultDims) {
  EXPECT_EQ(AttentionBlock::default_dim(8), 4u);
  EXPECT_EQ(AttentionBlock::default_dim(3), 1u);
  EXPECT_EQ(AttentionBlock::default_dim(1), 1u);
  Rng rng(0);
  AttentionBlock b("a", 6, rng);
  EXPECT_EQ(b.key_dim(), 3u);
  EXPECT_EQ(b.value_dim(), 3u);
  EXPECT_EQ(b.parameter_count(), 4u * 6u * 3u);
}

TEST(Attention, FreshBlockIsIdentity) {
  Rng rng(1);
  AttentionBlock b("a", 4, rng);
  const Tensor x = random_tensor({3, 3, 4}, rng);
  Tape tape(GradMode::kDisabled);
  EXPECT_EQ(b.forward(tape, tape.constant(x)).value(), x);
}

TEST(Attention, SinglePositionReturnsProjectedValue) {
  Rng rng(2);
  AttentionBlock b = random_block(3, 2, 2, rng);
  const Tensor x = random_tensor({1, 1, 3}, rng);
  const Tensor got = run_core(b, x);
  // softmax over one element is 1, so the output is w_out^T w_v^T x.
  for (std::size_t oc = 0; oc < 3; ++oc) {
    double want = 0;
    for (std::size_t v = 0; v < 2; ++v) {
      double proj = 0;
      for (std::size_t i = 0; i < 3; ++i) proj += x[i] * b.w_v.value[i * 2 + v];
      want += proj * b.w_out.value[v * 3 + oc];
    }
    EXPECT_NEAR(got[oc], want, 1e-14);
  }
}

TEST(Attention, IdenticalKeysGiveMeanOfValues) {
  Rng rng(3);
  AttentionBlock b = random_block(2, 2, 2, rng);
  b.w_k.value.fill(0.0);  // every key column is zero
  const Tensor x = random_tensor({2, 3, 2}, rng);
  AttentionMap map;
  const Tensor got = run_core(b, x, &map);
  for (double a : map.weights.data()) EXPECT_NEAR(a, 1.0 / 6.0, 1e-15);
  for (std::size_t oc = 0; oc < 2; ++oc) {
    double mean = 0;
    for (std::size_t p = 0; p < 6; ++p) {
      for (std::size_t v = 0; v < 2; ++v) {
        double proj = 0;
        for (std::size_t i = 0; i < 2; ++i) proj += x[p * 2 + i] * b.w_v.value[i * 2 + v];
        mean += proj * b.w_out.value[v * 2 + oc] / 6.0;
      }
    }
    for (std::size_t p = 0; p < 6; ++p) EXPECT_NEAR(got[p * 2 + oc], mean, 1e-14);
  }
}

TEST(Attention, MatchesExplicitMatrixOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    AttentionBlock b = random_block(2, 2, 2, rng);
    const Tensor x = random_tensor({2, 2, 2}, rng);
    std::vector<double> want_map;
    const auto want = oracle::attention_core(x, b.w_q.value, b.w_k.value, b.w_v.value, b.w_out.value, &want_map);
    AttentionMap map;
    const Tensor got = run_core(b, x, &map);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_LT(oracle::rel_err(got[i], want[i]), 1e-12);
    for (std::size_t i = 0; i < want_map.size(); ++i) EXPECT_NEAR(map.weights[i], want_map[i], 1e-15);
  }
}

TEST(Attention, ResidualAddsInput) {
  Rng rng(5);
  AttentionBlock b = random_block(3, 1, 2, rng);
  const Tensor x = random_tensor({3, 2, 3}, rng);
  const Tensor core = run_core(b, x);
  Tape tape(GradMode::kDisabled);
  const Tensor full = b.forward(tape, tape.constant(x)).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(full[i], x[i] + core[i]);
}

TEST(Attention, ColumnsAreStochastic) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    AttentionBlock b = random_block(3, 2, 2, rng);
    const Tensor x = random_tensor({1 + rng.uniform_int(4), 1 + rng.uniform_int(4), 3}, rng, -3, 3);
    AttentionMap map;
    run_core(b, x, &map);
    const std::size_t p = map.weights.dim(0);
    for (std::size_t col = 0; col < p; ++col) {
      double total = 0;
      for (std::size_t row = 0; row < p; ++row) {
        const double a = map.weights[row * p + col];
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
        total += a;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Attention, PermutationEquivariance) {
  Rng rng(7);
  AttentionBlock b = random_block(2, 2, 3, rng);
  const Tensor x = random_tensor({3, 3, 2}, rng);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 8; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  Tensor xp(x.shape());
  for (std::size_t p = 0; p < 9; ++p)
    for (std::size_t c = 0; c < 2; ++c) xp[p * 2 + c] = x[perm[p] * 2 + c];
  const Tensor y = run_core(b, x);
  const Tensor yp = run_core(b, xp);
  for (std::size_t p = 0; p < 9; ++p)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(yp[p * 2 + c], y[perm[p] * 2 + c], 1e-13);
}

TEST(Attention, OutputKeepsSpatialExtents) {
  Rng rng(8);
  AttentionBlock b = random_block(4, 2, 2, rng);
  Tape tape(GradMode::kDisabled);
  EXPECT_EQ(b.forward(tape, tape.constant(Tensor({2, 5, 3, 4}, 0.1))).shape(), (Shape{2, 5, 3, 4}));
  EXPECT_THROW(b.forward(tape, tape.constant(Tensor({5, 3, 2}, 0.1))), DimensionError);
}

TEST(Attention, BatchedMatchesPerImage) {
  Rng rng(9);
  AttentionBlock b = random_block(2, 1, 2, rng);
  const Tensor batch = random_tensor({2, 2, 3, 2}, rng);
  Tape tape(GradMode::kDisabled);
  const Tensor both = b.forward_core(tape, tape.constant(batch)).value();
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor single({2, 3, 2});
    std::copy(batch.raw() + n * 12, batch.raw() + (n + 1) * 12, single.raw());
    const Tensor one = run_core(b, single);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(both[n * 12 + i], one[i]);
  }
}

TEST(Attention, GradientCheckWholeBlock) {
  Rng rng(10);
  AttentionBlock b = random_block(2, 2, 2, rng);
  const Tensor x = random_tensor({4, 4, 2}, rng);
  const Tensor w = random_tensor({32}, rng);
  const auto wrt_input = [&](Tape& t, Var v) { return weighted_sum(b.forward(t, v), w); };
  EXPECT_LT(grad_check(wrt_input, x, 1e-4).max_rel_error, 1e-4);

  std::vector<Parameter*> params;
  b.collect(params);
  const auto wrt_params = [&](Tape& t) { return weighted_sum(b.forward(t, t.constant(x)), w); };
  EXPECT_LT(grad_check_params(wrt_params, params).max_rel_error, 1e-4);
}

}  // namespace
}  // namespace mstl
