// Serial reference kernels vs their OpenMP versions on codec-sized layers.

#include <benchmark/benchmark.h>

#include <vector>

#include "arc/kernels/conv.hpp"
#include "arc/kernels/gdn.hpp"
#include "arc/random.hpp"

using namespace arc;
using namespace arc::kernels;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// args: channels, spatial size of the wide side
void BM_Conv(benchmark::State& state, Exec exec) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  const auto g = ConvGeometry::downsample(ch, ch, size, size);
  const auto wide = noise(g.wide_size(), 1), weight = noise(g.weight_size(), 2), bias = noise(ch, 3);
  std::vector<float> out(g.narrow_size());
  for (auto _ : state) {
    conv2d_forward<float>(g, wide, weight, bias, out, exec);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ConvTranspose(benchmark::State& state, Exec exec) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  const auto g = ConvGeometry::downsample(ch, ch, size, size);
  const auto narrow = noise(g.narrow_size(), 1), weight = noise(g.weight_size(), 2), bias = noise(ch, 3);
  std::vector<float> out(g.wide_size());
  for (auto _ : state) {
    conv_transpose2d_forward<float>(g, narrow, weight, bias, out, exec);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_Gdn(benchmark::State& state, Exec exec) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  const auto x = noise(ch * plane, 1);
  std::vector<float> beta(ch, 1.0f), gamma = noise(static_cast<std::size_t>(ch) * ch, 2), y(x.size());
  for (auto& v : gamma) v = 0.1f * std::abs(v);
  for (auto _ : state) {
    gdn1_forward<float>(ch, plane, x, beta, gamma, y, exec);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_Conv, reference, Exec::kReference)->Args({32, 64})->Args({128, 128})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Conv, parallel, Exec::kParallel)->Args({32, 64})->Args({128, 128})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ConvTranspose, reference, Exec::kReference)->Args({32, 64})->Args({128, 128})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_ConvTranspose, parallel, Exec::kParallel)->Args({32, 64})->Args({128, 128})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Gdn, reference, Exec::kReference)->Args({32, 64})->Args({128, 64})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Gdn, parallel, Exec::kParallel)->Args({32, 64})->Args({128, 64})->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
