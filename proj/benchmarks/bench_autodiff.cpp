#include <benchmark/benchmark.h>

#include <random>

#include "scnn/autodiff/tape.hpp"
#include "scnn/model/model.hpp"

using namespace scnn;

// Second-order gradient of a small scalar expression.
static void BM_TapeNestedGrad(benchmark::State& state) {
  for (auto _ : state) {
    ad::Tape t;
    const auto x = t.var(0.3), y = t.var(-1.2);
    const auto f = sin(x * y) + x * x * exp(tanh(y));
    const auto g = t.grad(f, {x, y});
    const auto h = t.grad(g[0] * g[0] + g[1] * g[1], {x, y});
    benchmark::DoNotOptimize(h[0].value());
  }
}
BENCHMARK(BM_TapeNestedGrad);

// Learned field of one state through the scalar tape, per width.
static void BM_ScalarField(benchmark::State& state) {
  model::ModelSpec spec;
  spec.kind = model::ModelKind::Scnn;
  spec.K = 2;
  spec.n_cyclic = 1;
  spec.hidden_dim = static_cast<int>(state.range(0));
  const auto sys = systems::default_spec(systems::SystemKind::SphericalPendulum);
  const auto m = model::init_model(spec, sys, 0);
  systems::PhaseState s{Eigen::Vector2d(0.2, -0.1), Eigen::Vector2d(0.1, 0.3)};
  for (auto _ : state) benchmark::DoNotOptimize(model::vector_field_scalar(m, s).q[0]);
}
BENCHMARK(BM_ScalarField)->Arg(8)->Arg(32);
