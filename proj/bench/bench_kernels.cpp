// Serial reference vs OpenMP kernels on the hot paths.
#include <benchmark/benchmark.h>

#include "cdlab/diffusion.hpp"
#include "cdlab/divergence.hpp"
#include "cdlab/mcmc.hpp"
#include "cdlab/score_model.hpp"

using namespace cdlab;

namespace {

const Schedule& sched() {
  static const Schedule s = Schedule::geometric(100);
  return s;
}

const ScoreField& mixture_field() {
  static const ScoreField f = ScoreField::analytic(
      GaussianMixture({0.5, 0.5}, {Gaussian({-2, 0}, Sym2::identity(0.5)), Gaussian({2, 1}, Sym2{1.0, 0.3, 0.6})}),
      sched().noise());
  return f;
}

Exec mode(const benchmark::State& st) { return st.range(1) ? Exec::parallel : Exec::serial; }

void BM_Trajectories(benchmark::State& st) {
  for (auto _ : st) {
    benchmark::DoNotOptimize(sample_trajectories(mixture_field(), st.range(0), sched(), 1, mode(st)));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_TrajectoriesReference(benchmark::State& st) {
  for (auto _ : st) {
    benchmark::DoNotOptimize(sample_trajectories_reference(mixture_field(), st.range(0), sched(), 1));
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_PointwiseKl(benchmark::State& st) {
  const ScoreField q = ScoreField::analytic(GaussianMixture(Gaussian::standard()), sched().noise());
  const auto x0 = GaussianMixture(Gaussian::standard()).sample(st.range(0), 2);
  for (auto _ : st) benchmark::DoNotOptimize(pointwise_kl(mixture_field(), q, x0, sched(), 3, mode(st)));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_AnnealedMcmc(benchmark::State& st) {
  AnnealConfig c;
  c.steps_per_level = 5;
  for (auto _ : st) benchmark::DoNotOptimize(annealed_sample(mixture_field(), sched(), c, st.range(0), 4, mode(st)));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_AnnealedMcmcReference(benchmark::State& st) {
  AnnealConfig c;
  c.steps_per_level = 5;
  for (auto _ : st) benchmark::DoNotOptimize(annealed_sample_reference(mixture_field(), sched(), c, st.range(0), 4));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_NetGradient(benchmark::State& st) {
  const MlpScoreNet net({{64, 64}, 8, false}, 100, 5);
  const auto n = static_cast<std::size_t>(st.range(0));
  std::vector<Vec2> xs(n), up(n);
  std::vector<int> ts(n);
  RngStream r(6, 0);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = r.normal2();
    up[i] = r.normal2();
    ts[i] = r.uniform_int(0, 100);
  }
  for (auto _ : st) benchmark::DoNotOptimize(batch_gradient(net, xs, ts, up, mode(st)));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_Trajectories)->ArgsProduct({{4096}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrajectoriesReference)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PointwiseKl)->ArgsProduct({{16384}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AnnealedMcmc)->ArgsProduct({{2048}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AnnealedMcmcReference)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NetGradient)->ArgsProduct({{1024}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
