#include <benchmark/benchmark.h>

#include "mstl/attention.hpp"
#include "mstl/autograd.hpp"
#include "mstl/backbone.hpp"
#include "mstl/leep.hpp"
#include "mstl/metrics.hpp"
#include "mstl/ops.hpp"
#include "mstl/phantom.hpp"
#include "mstl/regions.hpp"
#include "mstl/rng.hpp"

namespace {

using namespace mstl;

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const Tensor x = random_tensor({s, s, c}, rng);
  const Tensor k = random_tensor({3, 3, c, c}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 1, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s * s * c * c * 9));
}
BENCHMARK(BM_Conv2d)->Args({32, 8})->Args({16, 32})->Args({8, 64});

void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  AttentionBlock block("attn", c, rng);
  const Tensor x = random_tensor({s, s, c}, rng);
  for (auto _ : state) {
    Tape tape;
    Var out = block.forward(tape, tape.variable(x));
    tape.backward(sum(out));
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Args({8, 16})->Args({16, 16})->Args({8, 64});

void BM_ModelForward(benchmark::State& state) {
  BackboneConfig cfg = BackboneConfig::preset(static_cast<Variant>(state.range(0)));
  cfg.input_size = 32;
  cfg.stage_channels = {8, 16, 32, 64};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  Model model(cfg, 3);
  Rng rng(3);
  const Tensor batch = random_tensor({8, 32, 32, 1}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.logits(batch));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ModelForward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_ModelTrainStep(benchmark::State& state) {
  BackboneConfig cfg = BackboneConfig::preset(Variant::kFiveAttns);
  cfg.input_size = 32;
  cfg.stage_channels = {8, 16, 32, 64};
  cfg.blocks_per_stage = {1, 1, 1, 1};
  Model model(cfg, 4);
  Rng rng(4);
  const Tensor batch = random_tensor({8, 32, 32, 1}, rng);
  const std::vector<std::size_t> labels{0, 1, 0, 1, 0, 1, 0, 1};
  for (auto _ : state) {
    Tape tape;
    tape.backward(mean(cross_entropy_rows(model.classify(tape, tape.constant(batch), Mode::kTrain), labels)));
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);

void BM_LocateRegions(benchmark::State& state) {
  PhantomSpec spec = PhantomSpec::defaults(PhantomKind::kTarget);
  spec.image_size = static_cast<std::size_t>(state.range(0));
  const LabeledDataset data = generate_phantom(spec, 8);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(locate(data.images[i++ % data.size()]));
}
BENCHMARK(BM_LocateRegions)->Arg(64)->Arg(128);

void BM_Leep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  LeepInput in;
  in.dummy_dist = Tensor({n, 10});
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t z = 0; z < 10; ++z) total += in.dummy_dist[i * 10 + z] = rng.uniform() + 1e-3;
    for (std::size_t z = 0; z < 10; ++z) in.dummy_dist[i * 10 + z] /= total;
    in.target_labels.push_back(rng.uniform_int(2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(leep_score(in));
}
BENCHMARK(BM_Leep)->Arg(1000)->Arg(10000);

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    labels[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(scores, labels));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
