// Parallel kernels against their serial references. Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "cinegen/kernels.hpp"

using namespace cinegen;

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    else
      kernels::reference::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

kernels::ConvGeometry geometry(int size) {
  kernels::ConvGeometry g;
  g.in_channels = 16;
  g.out_channels = 16;
  g.in_x = g.in_y = size;
  g.in_z = size / 2;
  return g;
}

template <bool Parallel>
void BM_conv3d(benchmark::State& state) {
  const auto g = geometry(static_cast<int>(state.range(0)));
  const auto in = random_vec(g.in_voxels() * static_cast<std::size_t>(g.in_channels), 3);
  const auto w = random_vec(g.patch_size() * static_cast<std::size_t>(g.out_channels), 4);
  const auto bias = random_vec(static_cast<std::size_t>(g.out_channels), 5);
  std::vector<float> out(g.out_voxels() * static_cast<std::size_t>(g.out_channels)), scratch;
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::conv3d_forward(g, in.data(), w.data(), bias.data(), out.data(), scratch);
    else
      kernels::reference::conv3d_forward(g, in.data(), w.data(), bias.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto src = random_vec(n * n, 6);
  std::vector<unsigned char> allowed(n * n);
  for (std::size_t i = 0; i < allowed.size(); ++i) allowed[i] = (i / n) / 4 == (i % n) / 4;
  std::vector<float> s(src.size());
  for (auto _ : state) {
    s = src;
    if constexpr (Parallel)
      kernels::masked_softmax_rows<float>(n, n, s.data(), allowed);
    else
      kernels::reference::masked_softmax_rows<float>(n, n, s.data(), allowed);
    benchmark::DoNotOptimize(s.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_conv3d<true>)->Name("conv3d/parallel")->Arg(16)->Arg(32);
BENCHMARK(BM_conv3d<false>)->Name("conv3d/reference")->Arg(16)->Arg(32);
BENCHMARK(BM_softmax<true>)->Name("softmax/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_softmax<false>)->Name("softmax/reference")->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
