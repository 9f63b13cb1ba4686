#include <benchmark/benchmark.h>

#include <array>
#include <random>

#include "stagehand/tensor.hpp"

namespace {

using stagehand::Tensor;

Tensor random_tensor(Tensor::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

void BM_ElementwiseSameShape(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, 3}, 1), b = random_tensor({n, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(stagehand::elementwise(stagehand::BinaryOp::sub, a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(3 * n));
}
BENCHMARK(BM_ElementwiseSameShape)->Arg(2)->Arg(24)->Arg(1024);

void BM_ElementwiseBroadcast(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, 3}, 1), b = random_tensor({3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(stagehand::elementwise(stagehand::BinaryOp::mul, a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(3 * n));
}
BENCHMARK(BM_ElementwiseBroadcast)->Arg(2)->Arg(24)->Arg(1024);

void BM_IndexSlice(benchmark::State& state) {
  const Tensor a = random_tensor({2, 3}, 3);
  const std::array<stagehand::IndexItem, 2> items = {stagehand::Slice{}, stagehand::Slice{0, 2}};
  for (auto _ : state) benchmark::DoNotOptimize(stagehand::index(a, items));
}
BENCHMARK(BM_IndexSlice);

void BM_ReduceL2LastAxis(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(stagehand::reduce(a, stagehand::Reduction::l2_last_axis));
}
BENCHMARK(BM_ReduceL2LastAxis)->Arg(2)->Arg(1024);

}  // namespace
