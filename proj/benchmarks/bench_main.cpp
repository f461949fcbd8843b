#include <benchmark/benchmark.h>

#include "fundus/autograd.hpp"
#include "fundus/metrics.hpp"
#include "fundus/networks.hpp"
#include "fundus/random.hpp"
#include "fundus/segnet.hpp"

using namespace fundus;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Args: channels, spatial extent.
void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  const Var x(random_tensor({1, c, n, n}, 1));
  const Var w(random_tensor({c, c, 3, 3}, 2));
  for (auto _ : state) {
    benchmark::DoNotOptimize(ag::conv2d(x, w, std::nullopt, {1, 1}).value().data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(
      static_cast<double>(state.iterations()) * 2.0 * c * c * 9 * n * n,
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 64})->Args({64, 64})->Args({256, 16})
    ->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  const Tensor xv = random_tensor({1, c, n, n}, 1);
  const Tensor wv = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) {
    const Var x(xv, true);
    const Var w(wv, true);
    ag::sum(ag::conv2d(x, w, std::nullopt, {1, 1})).backward();
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 64})->Args({64, 64})->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
  GeneratorSpec spec;
  if (state.range(1) == 0) {  // reduced width
    spec.stem_filters = {16, 32, 32};
    spec.res_filters = 32;
    spec.up_filters = {32, 16, 3};
    spec.n_res_blocks = 2;
    spec.cbam.reduction_ratio = 4;
  }
  const int n = static_cast<int>(state.range(0));
  const NetParams p = init_params(generator_layout(spec), 1);
  const Tensor x = random_tensor({1, 3, n, n}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generator_forward(x, spec, p).data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_GeneratorForward)->Args({64, 0})->Args({64, 1})->Args({256, 0})
    ->Unit(benchmark::kMillisecond);

void BM_UNetForward(benchmark::State& state) {
  UNetSpec spec;
  spec.base_filters = static_cast<int>(state.range(1));
  const int n = static_cast<int>(state.range(0));
  const NetParams p = init_params(unet_layout(spec), 1);
  const Tensor x = random_tensor({1, 3, n, n}, 2, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(unet_forward(x, spec, p).data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_UNetForward)->Args({64, 16})->Args({64, 64})->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random_tensor({1, 3, n, n}, 1, 0.0, 255.0);
  const Tensor b = random_tensor({1, 3, n, n}, 2, 0.0, 255.0);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Psnr(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random_tensor({1, 3, n, n}, 1, 0.0, 255.0);
  const Tensor b = random_tensor({1, 3, n, n}, 2, 0.0, 255.0);
  for (auto _ : state) benchmark::DoNotOptimize(psnr(a, b));
}
BENCHMARK(BM_Psnr)->Arg(256)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
