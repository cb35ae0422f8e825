// Parallel kernels against their serial reference implementations.

#include <benchmark/benchmark.h>

#include <random>

#include "unifss/kernels.hpp"
#include "unifss/reference.hpp"

using namespace unifss;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Correlation of a 16x16 query grid against a 16x16 support grid.
template <bool Fast>
void BM_CosineRelu(benchmark::State& state) {
  const Tensor a = random_tensor({32, 256}, 1), b = random_tensor({32, 256}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fast ? kernels::cosine_relu(a, b) : reference::cosine_relu(a, b));
  }
}

template <bool Fast>
void BM_Conv2d(benchmark::State& state) {
  const Tensor x = random_tensor({1, 64, 16, 16}, 3), w = random_tensor({64, 64, 3, 3}, 4), b = random_tensor({64}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fast ? kernels::conv2d(x, w, b, 1, 1) : reference::conv2d(x, w, b, 1, 1));
  }
}

template <bool Fast>
void BM_DepthwiseConv2d(benchmark::State& state) {
  const Tensor x = random_tensor({6, 16, 4, 4}, 6), w = random_tensor({16, 3, 3}, 7), b = random_tensor({16}, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fast ? kernels::depthwise_conv2d(x, w, b) : reference::depthwise_conv2d(x, w, b));
  }
}

// The reference route expands the sparse 4D kernel and runs a dense 4D convolution.
template <bool Fast>
void BM_CenterPivot(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  const Tensor x = random_tensor({4, n, n, n, n}, 9);
  const Tensor qk = random_tensor({16, 4, 3, 3}, 10), sk = random_tensor({16, 4, 3, 3}, 11);
  const Tensor qb = random_tensor({16}, 12), sb = random_tensor({16}, 13);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fast ? kernels::center_pivot_conv4d(x, qk, qb, sk, sb, {1, 2})
                                  : reference::center_pivot_conv4d(x, qk, qb, sk, sb, {1, 2}));
  }
}

template <bool Fast>
void BM_Upsample(benchmark::State& state) {
  const Tensor x = random_tensor({128, 8, 8, 4}, 14);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fast ? kernels::upsample_bilinear(x, 16, 16) : reference::upsample_bilinear(x, 16, 16));
  }
}

}  // namespace

BENCHMARK(BM_CosineRelu<true>)->Name("cosine_relu/parallel");
BENCHMARK(BM_CosineRelu<false>)->Name("cosine_relu/reference");
BENCHMARK(BM_Conv2d<true>)->Name("conv2d/parallel");
BENCHMARK(BM_Conv2d<false>)->Name("conv2d/reference");
BENCHMARK(BM_DepthwiseConv2d<true>)->Name("depthwise_conv2d/parallel");
BENCHMARK(BM_DepthwiseConv2d<false>)->Name("depthwise_conv2d/reference");
BENCHMARK(BM_CenterPivot<true>)->Name("center_pivot_conv4d/parallel")->Arg(4)->Arg(8);
BENCHMARK(BM_CenterPivot<false>)->Name("center_pivot_conv4d/reference")->Arg(4)->Arg(8);
BENCHMARK(BM_Upsample<true>)->Name("upsample_bilinear/parallel");
BENCHMARK(BM_Upsample<false>)->Name("upsample_bilinear/reference");

BENCHMARK_MAIN();
