#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "mstl/autograd.hpp"
#include "mstl/errors.hpp"
#include "mstl/grad_check.hpp"
#include "mstl/ops.hpp"
#include "mstl/optim.hpp"
#include "oracles.hpp"

namespace mstl {
namespace {

using oracle::random_tensor;
using oracle::rel_err;

TEST(Tensor, RejectsEmptyAndZeroExtents) {
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), numel(t.shape()));
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_THROW(t.item(), ContractError);
}

TEST(Tensor, ParameterGradientMatchesValueShape) {
  Parameter p("w", Tensor({3, 4}, 2.0));
  EXPECT_EQ(p.grad.shape(), p.value.shape());
}

TEST(Conv2d, OneByOneIdentityKernelIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({4, 5, 3}, rng);
  Tensor k({1, 1, 3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) k[i * 3 + i] = 1.0;
  EXPECT_EQ(conv2d(x, k, 1, 0), x);
}

TEST(Conv2d, ConstantFieldWithOnesKernel) {
  const double v = 0.37;
  const Tensor x({6, 6, 1}, v);
  const Tensor k({3, 3, 1, 1}, 1.0);
  const Tensor y = conv2d(x, k, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{4, 4, 1}));
  for (double o : y.data()) EXPECT_NEAR(o, 9 * v, 1e-15);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(2);
  const Tensor x = random_tensor({4, 4, 2}, rng);
  const Tensor k = random_tensor({3, 3, 2, 3}, rng);
  const Tensor got = conv2d(x, k, 1, 0);
  const Tensor want = oracle::conv2d(x, k, 1, 0);
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_LT(rel_err(got[i], want[i]), 1e-12);
}

TEST(Conv2d, RandomShapesAgainstOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ks = rng.bernoulli(0.5) ? 3 : 1;
    const std::size_t pad = ks == 3 ? rng.uniform_int(2) : 0;
    const std::size_t stride = 1 + rng.uniform_int(2);
    const std::size_t h = ks + rng.uniform_int(7 - ks), w = ks + rng.uniform_int(7 - ks);
    const std::size_t c = 1 + rng.uniform_int(3), d = 1 + rng.uniform_int(3);
    const Tensor x = random_tensor({h, w, c}, rng);
    const Tensor k = random_tensor({ks, ks, c, d}, rng);
    const Tensor got = conv2d(x, k, stride, pad);
    const Tensor want = oracle::conv2d(x, k, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_LE(std::abs(got[i] - want[i]), 1e-12 * std::max(1.0, std::abs(want[i])));
    }
  }
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(Tensor({4, 4, 2}), Tensor({3, 3, 3, 1}), 1, 0), DimensionError);
}

TEST(SoftmaxColumns, ClosedForms) {
  auto col = [](double a, double b) { return softmax_columns(Tensor({2, 1}, {a, b})); };
  Tensor s = col(1, 1);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  s = col(0, std::log(3.0));
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
  s = col(1000, 1000);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(SoftmaxColumns, ColumnsSumToOneAndIgnoreShifts) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t a = 1 + rng.uniform_int(6), b = 1 + rng.uniform_int(6);
    Tensor m = random_tensor({a, b}, rng, -20, 20);
    const Tensor s = softmax_columns(m);
    Tensor shifted = m;
    std::vector<double> shift(b);
    for (double& v : shift) v = rng.uniform(-50, 50);
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) shifted[i * b + j] += shift[j];
    const Tensor s2 = softmax_columns(shifted);
    for (std::size_t j = 0; j < b; ++j) {
      double total = 0;
      for (std::size_t i = 0; i < a; ++i) {
        EXPECT_GE(s[i * b + j], 0.0);
        total += s[i * b + j];
        EXPECT_NEAR(s[i * b + j], s2[i * b + j], 1e-9);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(CrossEntropy, ClosedForms) {
  EXPECT_LT(cross_entropy(Tensor::from({50, 0, 0}), 0), 1e-20);
  EXPECT_NEAR(cross_entropy(Tensor({5}, 0.7), 2), std::log(5.0), 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor::from({std::log(3.0), 0.0}), 1), std::log(4.0), 1e-15);
  EXPECT_THROW(cross_entropy(Tensor::from({1, 2}), 2), IndexError);
}

TEST(CrossEntropy, MatchesOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor l = random_tensor({5}, rng, -4, 4);
    const std::size_t y = rng.uniform_int(5);
    EXPECT_LT(rel_err(cross_entropy(l, y), oracle::cross_entropy({l.data().begin(), l.data().end()}, y)), 1e-12);
  }
}

TEST(GlobalAvgPool, ClosedFormsAndOracle) {
  const Tensor c = global_avg_pool(Tensor({3, 3, 2}, 1.25));
  EXPECT_DOUBLE_EQ(c[0], 1.25);
  EXPECT_DOUBLE_EQ(c[1], 1.25);
  EXPECT_DOUBLE_EQ(global_avg_pool(Tensor({2, 2, 1}, {1, 2, 3, 4}))[0], 2.5);

  Rng rng(6);
  const Tensor x = random_tensor({5, 5, 3}, rng);
  const Tensor g = global_avg_pool(x);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    long double s = 0;
    for (std::size_t p = 0; p < 25; ++p) s += x[p * 3 + ch];
    EXPECT_LT(rel_err(g[ch], static_cast<double>(s / 25)), 1e-12);
  }
}

TEST(Unfold, LayoutAndRoundTrip) {
  const Tensor x({2, 2, 1}, {1, 2, 3, 4});
  EXPECT_EQ(unfold_mode3(x), Tensor({1, 4}, {1, 2, 3, 4}));
  const Tensor single({1, 1, 3}, {7, 8, 9});
  EXPECT_EQ(unfold_mode3(single), Tensor({3, 1}, {7, 8, 9}));
  Rng rng(7);
  const Tensor r = random_tensor({3, 3, 4}, rng);
  EXPECT_EQ(fold_mode3(unfold_mode3(r), 3, 3), r);
}

TEST(GradCheck, LinearFunction) {
  const auto f = [](Tape&, Var x) { return sum(scale(x, 3.0)); };
  const GradCheckResult r = grad_check(f, Tensor::from({0.4}), 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-10);
  EXPECT_NEAR(r.analytic, 3.0, 1e-15);
}

TEST(GradCheck, SoftmaxCrossEntropyComposite) {
  Rng rng(8);
  const Tensor logits = random_tensor({5}, rng, -2, 2);
  const auto f = [](Tape&, Var x) { return cross_entropy(x, 3); };
  EXPECT_LT(grad_check(f, logits, 1e-4).max_rel_error, 1e-6);
}

TEST(GradCheck, NonScalarFunctionIsContractError) {
  const auto f = [](Tape&, Var x) { return scale(x, 2.0); };
  EXPECT_THROW(grad_check(f, Tensor::from({1, 2})), ContractError);
}

// Reduces an op's output to a scalar with fixed random weights, so every
// output coordinate contributes a distinct gradient.
struct OpCase {
  const char* name;
  Shape input;
  std::function<Var(Tape&, Var)> op;
  double lo = -1.0, hi = 1.0;
};

TEST(GradCheck, EveryDifferentiableOp) {
  Rng rng(9);
  const Tensor other23 = random_tensor({2, 3}, rng);
  const Tensor other34 = random_tensor({3, 4}, rng);
  const Tensor batch_other = random_tensor({2, 3, 2}, rng);
  const Tensor kernel = random_tensor({3, 3, 2, 3}, rng);
  const Tensor image = random_tensor({1, 5, 5, 2}, rng);
  const Tensor bias = random_tensor({3}, rng);
  Tensor running_mean({3}, 0.0), running_var({3}, 1.0);
  const std::size_t labels[] = {2, 0};

  const std::vector<OpCase> cases = {
      {"add", {2, 3}, [&](Tape& t, Var x) { return add(x, t.constant(other23)); }},
      {"sub", {2, 3}, [&](Tape& t, Var x) { return sub(t.constant(other23), x); }},
      {"mul", {2, 3}, [&](Tape&, Var x) { return mul(x, x); }},
      {"scale", {2, 3}, [&](Tape&, Var x) { return scale(x, -1.7); }},
      {"mul_const", {2, 3}, [&](Tape&, Var x) { return mul_const(x, other23); }},
      {"add_bias", {2, 3}, [&](Tape&, Var x) { return add_bias(x, x.tape().constant(bias)); }},
      {"add_bias_wrt_bias", {3}, [&](Tape& t, Var b) { return add_bias(t.constant(other23), b); }},
      {"relu", {2, 3}, [&](Tape&, Var x) { return relu(x); }, 0.1, 1.0},
      {"reshape", {2, 3}, [&](Tape&, Var x) { return reshape(x, {3, 2}); }},
      {"transpose", {2, 3}, [&](Tape&, Var x) { return transpose(x); }},
      {"matmul_lhs", {2, 3}, [&](Tape& t, Var x) { return matmul(x, t.constant(other34)); }},
      {"matmul_rhs", {3, 4}, [&](Tape& t, Var x) { return matmul(t.constant(other23), x); }},
      {"matmul_batched", {2, 2, 3}, [&](Tape& t, Var x) { return matmul(x, t.constant(batch_other.reshaped({2, 3, 2}))); }},
      {"conv2d_input", {1, 5, 5, 2}, [&](Tape& t, Var x) { return conv2d(x, t.constant(kernel), 2, 1); }},
      {"conv2d_kernel", {3, 3, 2, 3}, [&](Tape& t, Var k) { return conv2d(t.constant(image), k, 1, 1); }},
      {"global_avg_pool", {2, 3, 3, 2}, [&](Tape&, Var x) { return global_avg_pool(x); }},
      {"softmax_columns", {3, 4}, [&](Tape&, Var x) { return softmax_columns(x); }},
      {"softmax_columns_batched", {2, 3, 3}, [&](Tape&, Var x) { return softmax_columns(x); }},
      {"batch_norm_train", {4, 2, 2, 3},
       [&](Tape& t, Var x) {
         return batch_norm(x, t.constant(Tensor({3}, {1.0, 0.5, 2.0})), t.constant(bias),
                           {running_mean, running_var, 0.9, 1e-5}, true);
       }},
      {"batch_norm_eval", {4, 2, 2, 3},
       [&](Tape& t, Var x) {
         return batch_norm(x, t.constant(Tensor({3}, {1.0, 0.5, 2.0})), t.constant(bias),
                           {running_mean, running_var, 0.9, 1e-5}, false);
       }},
      {"linear", {2, 3}, [&](Tape& t, Var x) { return linear(x, t.constant(other34), t.constant(Tensor({4}, 0.1))); }},
      {"cross_entropy_rows", {2, 3}, [&](Tape&, Var x) { return cross_entropy_rows(x, labels); }},
      {"l2_normalize_rows", {2, 3}, [&](Tape&, Var x) { return l2_normalize_rows(x); }},
      {"sum_rows", {2, 3}, [&](Tape&, Var x) { return sum_rows(x); }},
      {"concat_cols", {2, 3}, [&](Tape& t, Var x) { return concat_cols(x, t.constant(other23)); }},
      {"mean", {2, 3}, [&](Tape&, Var x) { return mean(x); }},
  };
  for (const OpCase& c : cases) {
    const Tensor point = random_tensor(c.input, rng, c.lo, c.hi);
    Tensor weights;
    const auto f = [&](Tape& t, Var x) {
      Var y = c.op(t, x);
      if (weights.empty()) weights = random_tensor({y.value().size()}, rng);
      return weighted_sum(y, weights);
    };
    const GradCheckResult r = grad_check(f, point, 1e-4);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name;
  }
}

TEST(GradCheck, BatchNormParameters) {
  Rng rng(10);
  Parameter gamma("g", random_tensor({2}, rng, 0.5, 1.5));
  Parameter beta("b", random_tensor({2}, rng));
  Tensor rm({2}, 0.0), rv({2}, 1.0);
  const Tensor x = random_tensor({3, 2, 2, 2}, rng);
  const Tensor w = random_tensor({24}, rng);
  Parameter* params[] = {&gamma, &beta};
  const auto f = [&](Tape& t) {
    return weighted_sum(batch_norm(t.constant(x), t.parameter(gamma), t.parameter(beta), {rm, rv, 0.9, 1e-5}, true), w);
  };
  EXPECT_LT(grad_check_params(f, params).max_rel_error, 1e-4);
}

TEST(Tape, ParentsPrecedeChildren) {
  Tape tape;
  Var a = tape.variable(Tensor::from({1, 2}));
  Var b = tape.variable(Tensor::from({3, 4}));
  Var c = mul(add(a, b), a);
  sum(relu(sub(c, b)));
  for (std::size_t id = 0; id < tape.size(); ++id) {
    for (std::size_t p : tape.parents(id)) EXPECT_LT(p, id);
  }
}

TEST(Tape, BackwardAccumulatesIntoParameters) {
  Parameter p("p", Tensor::from({2.0, -1.0}));
  Tape tape;
  Var x = tape.parameter(p);
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(p.grad, Tensor::from({4.0, -2.0}));
  Tape tape2;
  tape2.backward(sum(tape2.parameter(p)));
  EXPECT_EQ(p.grad, Tensor::from({5.0, -1.0}));
}

TEST(Tape, DisabledModeRecordsConstants) {
  Parameter p("p", Tensor::from({1.0}));
  Tape tape(GradMode::kDisabled);
  Var x = tape.parameter(p);
  EXPECT_FALSE(x.requires_grad());
  EXPECT_FALSE(scale(x, 2.0).requires_grad());
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape tape;
  Var x = tape.variable(Tensor::from({1, 2}));
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
}

TEST(Tape, ForwardValuesStayFinite) {
  Rng rng(11);
  Tape tape;
  Var x = tape.variable(random_tensor({4, 6}, rng, -300, 300));
  Var s = softmax_columns(x);
  Var n = l2_normalize_rows(x);
  for (double v : s.value().data()) EXPECT_TRUE(std::isfinite(v));
  for (double v : n.value().data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  Rng rng(12);
  Parameter p("p", random_tensor({3, 3}, rng));
  p.grad = random_tensor({3, 3}, rng);
  const Tensor before = p.value;
  SgdState state;
  Parameter* params[] = {&p};
  for (int i = 0; i < 3; ++i) sgd_step(params, state, {0.0, 0.9, 1e-4});
  EXPECT_EQ(p.value, before);
}

TEST(Sgd, PlainGradientStep) {
  Parameter p("p", Tensor::from({1.0, 2.0}));
  p.grad = Tensor::from({0.5, -0.25});
  SgdState state;
  Parameter* params[] = {&p};
  sgd_step(params, state, {0.1, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(p.value[0], 1.0 - 0.1 * 0.5);
  EXPECT_DOUBLE_EQ(p.value[1], 2.0 + 0.1 * 0.25);
}

TEST(Sgd, MomentumMatchesUnrolledRecurrence) {
  const double lr = 0.3, mu = 0.9, wd = 1e-4;
  Parameter p("p", Tensor::from({1.0}));
  SgdState state;
  Parameter* params[] = {&p};
  const double g1 = 0.2, g2 = -0.7;
  p.grad = Tensor::from({g1});
  sgd_step(params, state, {lr, mu, wd});
  p.grad = Tensor::from({g2});
  sgd_step(params, state, {lr, mu, wd});

  double v = 0.0, x = 1.0;
  v = mu * v + (g1 + wd * x);
  x = x - lr * v;
  v = mu * v + (g2 + wd * x);
  x = x - lr * v;
  EXPECT_DOUBLE_EQ(p.value[0], x);
}

TEST(Sgd, RejectsInvalidHyperparameters) {
  Parameter p("p", Tensor::from({1.0}));
  SgdState state;
  Parameter* params[] = {&p};
  EXPECT_THROW(sgd_step(params, state, {-0.1, 0.9, 0.0}), ContractError);
  EXPECT_THROW(sgd_step(params, state, {0.1, 1.0, 0.0}), ContractError);
  EXPECT_THROW(sgd_step(params, state, {0.1, 0.9, -1.0}), ContractError);
}

TEST(StepDecay, PublishedScheduleBoundaries) {
  const int milestones[] = {120, 160};
  EXPECT_DOUBLE_EQ(step_decay_lr(0.3, 0.1, milestones, 0), 0.3);
  EXPECT_DOUBLE_EQ(step_decay_lr(0.3, 0.1, milestones, 119), 0.3);
  EXPECT_DOUBLE_EQ(step_decay_lr(0.3, 0.1, milestones, 120), 0.3 * 0.1);
  EXPECT_DOUBLE_EQ(step_decay_lr(0.3, 0.1, milestones, 159), 0.3 * 0.1);
  EXPECT_DOUBLE_EQ(step_decay_lr(0.3, 0.1, milestones, 160), 0.3 * 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(step_decay_lr(0.3, 0.1, milestones, 199), 0.3 * 0.1 * 0.1);
}

}  // namespace
}  // namespace mstl
