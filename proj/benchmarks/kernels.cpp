#include <benchmark/benchmark.h>

#include "flowvip/config.hpp"
#include "flowvip/data.hpp"
#include "flowvip/focal.hpp"
#include "flowvip/geom.hpp"
#include "flowvip/model.hpp"
#include "flowvip/ops.hpp"

using namespace flowvip;

namespace {

Tensor leaf(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

void BM_Conv2d(benchmark::State& state) {
  const int64_t c = state.range(0);
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::uniform({5, 32, 32, c}, rng, -1, 1);
  const Tensor w = Tensor::uniform({3, 3, c, c}, rng, -0.1, 0.1);
  const Tensor b = Tensor::zeros({c});
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_BilinearWarp(benchmark::State& state) {
  const int64_t s = state.range(0);
  std::mt19937_64 rng(2);
  const Tensor src = Tensor::uniform({s, s, 16}, rng, 0, 1);
  const Tensor flow = Tensor::uniform({s, s, 2}, rng, -3, 3);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(geom::bilinear_warp(src, flow));
}
BENCHMARK(BM_BilinearWarp)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_DeformConv(benchmark::State& state) {
  const int64_t c = 16, k = 3, g = 2, s = state.range(0);
  std::mt19937_64 rng(3);
  const Tensor x = Tensor::uniform({s, s, c}, rng, -1, 1);
  const Tensor w = Tensor::uniform({k, k, c, c}, rng, -0.1, 0.1);
  const Tensor b = Tensor::zeros({c});
  const Tensor flow = Tensor::uniform({s, s, 2}, rng, -2, 2);
  const Tensor off = Tensor::uniform({s, s, k * k * g * 2}, rng, -0.5, 0.5);
  const Tensor m = Tensor::uniform({s, s, k * k * g}, rng, -1, 1);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(geom::mod_deform_conv(x, w, b, flow, off, m, g));
}
BENCHMARK(BM_DeformConv)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_DeformConvBackward(benchmark::State& state) {
  const int64_t c = 16, k = 3, g = 2, s = 16;
  std::mt19937_64 rng(4);
  const Tensor x = leaf(Tensor::uniform({s, s, c}, rng, -1, 1));
  const Tensor w = leaf(Tensor::uniform({k, k, c, c}, rng, -0.1, 0.1));
  const Tensor b = leaf(Tensor::zeros({c}));
  const Tensor flow = leaf(Tensor::uniform({s, s, 2}, rng, -2, 2));
  const Tensor off = leaf(Tensor::uniform({s, s, k * k * g * 2}, rng, -0.5, 0.5));
  const Tensor m = leaf(Tensor::uniform({s, s, k * k * g}, rng, -1, 1));
  for (auto _ : state) {
    Tensor loss = sum(geom::mod_deform_conv(x, w, b, flow, off, m, g));
    loss.backward();
  }
}
BENCHMARK(BM_DeformConvBackward)->Unit(benchmark::kMicrosecond);

void BM_Attention(benchmark::State& state) {
  const auto mode = static_cast<focal::AttentionMode>(state.range(0));
  std::mt19937_64 rng(5);
  focal::FocalBlock block(32, 2, 16, {0, 3, 3}, {}, rng);
  const Tensor tokens = Tensor::uniform({5, 6, 6, 32}, rng, -1, 1);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(block.attention(tokens, mode));
  state.SetLabel(focal::to_string(mode));
}
BENCHMARK(BM_Attention)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_GeneratorForward(benchmark::State& state) {
  std::mt19937_64 rng(6);
  const model::Generator g(ModelConfig::desk(), rng);
  const Tensor frames = Tensor::uniform({5, 64, 64, 3}, rng, 0, 1);
  const Tensor masks = Tensor::zeros({5, 64, 64, 1});
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(g.forward(frames, masks, 3));
}
BENCHMARK(BM_GeneratorForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  data::DatasetSpec spec;
  spec.train_scenes = 1;
  spec.eval_scenes = 0;
  const auto scenes = data::generate_dataset(spec);
  model::Trainer trainer(ModelConfig::desk(), 7);
  std::mt19937_64 rng(8);
  for (auto _ : state) {
    state.PauseTiming();
    const auto batch = data::sample_clip(scenes[0], 3, 2, rng);
    state.ResumeTiming();
    benchmark::DoNotOptimize(trainer.train_step(batch));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
