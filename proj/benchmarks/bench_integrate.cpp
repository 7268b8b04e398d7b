#include <benchmark/benchmark.h>

#include "scnn/eval/eval.hpp"
#include "scnn/model/model.hpp"

using namespace scnn;

// 100-step batched rollouts of 100 initial states.
static void BM_RolloutTrue(benchmark::State& state) {
  const auto sys = systems::default_spec(systems::SystemKind::TwoBodyGrav);
  std::mt19937_64 rng(2);
  std::vector<systems::PhaseState> init;
  for (int i = 0; i < 100; ++i) init.push_back(systems::sample_initial(sys, rng));
  const Eigen::MatrixXd x0 = integrate::pack(init);
  const auto f = integrate::true_batch_field(sys);
  for (auto _ : state) benchmark::DoNotOptimize(eval::rollout(f, sys, x0, 0.04, 100).states.back()(0, 0));
}
BENCHMARK(BM_RolloutTrue)->Unit(benchmark::kMillisecond);

static void BM_RolloutLearned(benchmark::State& state) {
  const auto sys = systems::default_spec(systems::SystemKind::SphericalPendulum);
  model::ModelSpec spec;
  spec.kind = model::ModelKind::Hnn;
  spec.K = 2;
  const auto m = model::init_model(spec, sys, 0);
  std::mt19937_64 rng(3);
  std::vector<systems::PhaseState> init;
  for (int i = 0; i < 100; ++i) init.push_back(systems::sample_initial(sys, rng));
  const Eigen::MatrixXd x0 = integrate::pack(init);
  const auto f = model::learned_field(m);
  for (auto _ : state) benchmark::DoNotOptimize(eval::rollout(f, sys, x0, 0.04, 100).last_valid[0]);
}
BENCHMARK(BM_RolloutLearned)->Unit(benchmark::kMillisecond);
