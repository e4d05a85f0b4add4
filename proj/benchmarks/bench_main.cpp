#include <benchmark/benchmark.h>

#include "gmflow/dae.hpp"
#include "gmflow/exact_flow.hpp"
#include "gmflow/quadrature.hpp"
#include "gmflow/rng.hpp"
#include "gmflow/theory.hpp"

using namespace gmflow;

static void BM_FillNormal(benchmark::State& state) {
  std::vector<double> buf(static_cast<std::size_t>(state.range(0)));
  std::uint64_t stream = 0;
  for (auto _ : state) {
    CounterRng rng(7, stream++);
    fill_normal(rng, buf);
    benchmark::DoNotOptimize(buf.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FillNormal)->Arg(1000)->Arg(100000);

static void BM_LossAndGradient(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  const auto params = make_mixture(d, 0.8, 1.0);
  const auto data = sample_dataset(params, n, 1);
  const auto schedule = TimeSchedule::two_mode(4.0, d);
  TrainConfig cfg;
  const auto batch = make_batch(data, coeffs_at(schedule, 1.5), cfg, 0);
  const auto theta = initial_slice(d, 3, 1.5);
  SliceGradient g;
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(theta, batch, 0.1, 0.1, &g));
}
BENCHMARK(BM_LossAndGradient)->Args({1000, 128})->Args({2000, 8});

static void BM_MakeBatch(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const auto params = make_mixture(d, 0.8, 1.0);
  const auto data = sample_dataset(params, 128, 1);
  const auto schedule = TimeSchedule::two_mode(4.0, d);
  TrainConfig cfg;
  int epoch = 0;
  for (auto _ : state) benchmark::DoNotOptimize(make_batch(data, coeffs_at(schedule, 1.5), cfg, epoch++).xt.data());
}
BENCHMARK(BM_MakeBatch)->Arg(1000);

static void BM_TrainSlice(benchmark::State& state) {
  const auto params = make_mixture(1000, 0.8, 1.0);
  const auto data = sample_dataset(params, 128, 1);
  const auto schedule = TimeSchedule::two_mode(4.0, 1000);
  TrainConfig cfg;
  cfg.epochs = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_slice(data, schedule, 1.5, cfg).c);
}
BENCHMARK(BM_TrainSlice)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_ExactEnsemble(benchmark::State& state) {
  const int d = 1000;
  const auto params = make_mixture(d, 0.8, 1.0);
  const auto schedule = TimeSchedule::two_mode(4.0, d);
  const auto grid = schedule.uniform_grid(100);
  for (auto _ : state)
    benchmark::DoNotOptimize(integrate_ensemble(exact_field(params, schedule), d, 100, grid, 5).terminal().data());
}
BENCHMARK(BM_ExactEnsemble)->Unit(benchmark::kMillisecond);

static void BM_PhiMoments(benchmark::State& state) {
  const int order = static_cast<int>(state.range(0));
  gauss_hermite(order);
  for (auto _ : state) benchmark::DoNotOptimize(phi_moments(0.8, 1.2, 0.5, 2.0, order).A);
}
BENCHMARK(BM_PhiMoments)->Arg(64)->Arg(256);

static void BM_SolveFirstPhase(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(solve_first_phase(128, 0.8, 1.0, 0.05, 0.05, 2.0).omega);
}
BENCHMARK(BM_SolveFirstPhase)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
