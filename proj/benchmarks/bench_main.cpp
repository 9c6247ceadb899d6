#include <benchmark/benchmark.h>

#include <random>

#include "mfcn/dynamics.hpp"
#include "mfcn/measures.hpp"
#include "mfcn/optimizer.hpp"

namespace {

using namespace mfcn;

ParticleCloud normal_cloud(std::size_t n, std::size_t dim, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  std::vector<double> pts(n * dim);
  for (double& v : pts) v = z(gen);
  return ParticleCloud(dim, std::move(pts));
}

Problem lq() {
  IntensitySpec in;
  in.total_rate = 1.0;
  return make_lq_problem(LqParams{}, in, 1.0, 0.5, 1.0);
}

void BM_W2_1d(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = normal_cloud(n, 1, 1), b = normal_cloud(n, 1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein2(a, b).value);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_W2_1d)->RangeMultiplier(4)->Range(1 << 8, 1 << 14)->Complexity();

void BM_W2_2d_simplex(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = normal_cloud(n, 2, 3), b = normal_cloud(n, 2, 4);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein2(a, b).value);
}
BENCHMARK(BM_W2_2d_simplex)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_PropagateFp(benchmark::State& state) {
  const Problem p = lq();
  const PointPath path = make_point_path(1.0, {{0.3, {1.0}}, {0.7, {1.0}}}, p.intensity);
  const auto k = ControlKernel::midpoint(make_time_edges(1.0, 8, path.times()),
                                         SpacePartition::around(p.initial_law, 16),
                                         linear_control_grid(-6.0, 6.0, 49));
  const auto grid = SimGrid::build(path, 1.0 / 256.0);
  const auto n = static_cast<std::size_t>(state.range(0));
  PropagateOptions opts;
  opts.record_paths = false;
  for (auto _ : state) {
    benchmark::DoNotOptimize(propagate_fp(p, path, k, grid, n, 7, opts).cost);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * static_cast<long>(grid.steps()));
}
BENCHMARK(BM_PropagateFp)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_OptimizePathwise(benchmark::State& state) {
  const Problem p = lq();
  const PointPath path = make_point_path(1.0, {{0.3, {1.0}}, {0.7, {1.0}}}, p.intensity);
  OptConfig cfg;
  cfg.max_sweeps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(optimize_pathwise(p, path, cfg).value);
}
BENCHMARK(BM_OptimizePathwise)->Arg(2)->Arg(6)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace
BENCHMARK_MAIN();
