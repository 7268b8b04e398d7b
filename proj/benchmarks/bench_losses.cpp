#include <benchmark/benchmark.h>

#include "scnn/losses/losses.hpp"

using namespace scnn;

namespace {

losses::BatchData random_batch(const systems::SystemSpec& sys, int n) {
  std::mt19937_64 rng(1);
  std::vector<systems::Sample> samples;
  for (int i = 0; i < n; ++i) {
    systems::Sample s;
    s.state = systems::sample_initial(sys, rng);
    const auto d = systems::vector_field_true(sys, s.state);
    s.dq_dt = d.q;
    s.dp_dt = d.p;
    samples.push_back(s);
  }
  return losses::make_batch(samples);
}

}  // namespace

// One training step's loss and parameter gradient at the default width,
// batch 200. Arg: model kind index.
static void BM_EvaluateGradient(benchmark::State& state) {
  const auto sys = systems::default_spec(systems::SystemKind::TwoBodyGrav);
  model::ModelSpec spec;
  spec.K = 4;
  spec.kind = state.range(0) == 0 ? model::ModelKind::Hnn : model::ModelKind::Scnn;
  spec.n_cyclic = state.range(0) == 0 ? 0 : 2;
  const auto m = model::init_model(spec, sys, 0);
  const auto batch = random_batch(sys, 200);
  const auto w = losses::default_weights(spec);
  for (auto _ : state) benchmark::DoNotOptimize(losses::evaluate(m, batch, w, true).report.total);
  state.SetLabel(model::to_string(spec.kind));
}
BENCHMARK(BM_EvaluateGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
