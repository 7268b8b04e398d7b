#include <sstream>

#include "doctest.h"
#include "scnn/error.hpp"
#include "scnn/train/train.hpp"
#include "support.hpp"

using namespace scnn;
using model::ModelKind;
using systems::SystemKind;

namespace {

model::ModelSpec small_spec(ModelKind kind, int K, int n = 0) {
  model::ModelSpec s;
  s.kind = kind;
  s.K = K;
  s.n_cyclic = n;
  s.hidden_dim = 8;
  return s;
}

train::TrainConfig quick_config(const model::ModelSpec& spec, const systems::SystemSpec& sys, int steps) {
  auto c = train::default_config(spec, sys);
  c.steps = steps;
  c.batch_size = 16;
  c.log_every = 5;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("adam") {
  Eigen::VectorXd x(3);
  x << 1.0, -2.0, 0.5;
  train::AdamState st;
  Eigen::VectorXd y = x;
  train::adam_step(y, Eigen::VectorXd::Zero(3), st, 0.1);
  CHECK(y == x);
  CHECK(st.t == 1);

  // First step moves every coordinate by about lr against the gradient sign.
  train::AdamState s2;
  Eigen::VectorXd g(3);
  g << 3.0, -0.01, 200.0;
  y = x;
  train::adam_step(y, g, s2, 0.01);
  for (int i = 0; i < 3; ++i) CHECK(y[i] - x[i] == doctest::Approx(-0.01 * (g[i] > 0 ? 1 : -1)).epsilon(1e-5));

  // Converges on a badly scaled quadratic.
  Eigen::VectorXd d(3);
  d << 1.0, 10.0, 0.1;
  train::AdamState s3;
  Eigen::VectorXd z = x;
  for (int k = 0; k < 5000; ++k) train::adam_step(z, d.cwiseProduct(z), s3, 0.01);
  CHECK(d.cwiseProduct(z).norm() < 1e-6);

  Eigen::VectorXd wrong(2);
  CHECK_THROWS_AS(train::adam_step(z, wrong, s3, 0.01), StructuralError);
}

TEST_CASE("config defaults and validation") {
  const auto two_body = systems::default_spec(SystemKind::TwoBodyGrav);
  const auto spec = small_spec(ModelKind::Scnn, 4, 2);
  const auto c = train::default_config(spec, two_body);
  CHECK(c.first_n == 50);
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.weights.alpha1 == doctest::Approx(0.01));
  CHECK_FALSE(train::default_config(small_spec(ModelKind::Hnn, 2), systems::default_spec(SystemKind::Magnetic)).first_n);
  auto bad = c;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
  bad = c;
  bad.first_n = 0;
  CHECK_THROWS_AS(train::validate(bad), std::invalid_argument);
}

TEST_CASE("batch indices") {
  // One epoch is a permutation; a new epoch reshuffles.
  std::vector<std::size_t> seen;
  for (int step = 0; step < 5; ++step) {
    const auto b = train::batch_indices(20, 4, 9, step);
    CHECK(b.size() == 4);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 20; ++i) CHECK(seen[i] == i);
  CHECK(train::batch_indices(20, 4, 9, 3) == train::batch_indices(20, 4, 9, 3));
  CHECK(train::batch_indices(20, 4, 9, 0) != train::batch_indices(20, 4, 9, 5));
  CHECK(train::batch_indices(3, 10, 1, 7).size() == 3);
  CHECK_THROWS_AS(train::batch_indices(0, 4, 1, 0), std::invalid_argument);
}

TEST_CASE("training is deterministic and logs interval means") {
  const auto sys = systems::default_spec(SystemKind::SphericalPendulum);
  const auto data = testing::small_dataset(sys);
  const auto spec = small_spec(ModelKind::Scnn, 2, 1);
  auto config = quick_config(spec, sys, 12);
  std::vector<int> logged;
  const auto a = train::train(spec, data, config, [&](const train::TrainState&, const train::HistoryRow& r) {
    logged.push_back(r.step);
  });
  const auto b = train::train(spec, data, config);
  CHECK(model::flatten(a.model) == model::flatten(b.model));
  CHECK(logged == std::vector<int>{5, 10, 12});
  REQUIRE(a.history.size() == 3);
  CHECK(a.step == 12);
  CHECK(a.adam.t == 12);
  CHECK(a.best_loss <= a.history.front().loss.total * 10);
  CHECK(model::flatten(a.model) != model::flatten(model::init_model(spec, sys, config.seed)));
  config.seed = 5;
  CHECK(model::flatten(train::train(spec, data, config).model) != model::flatten(a.model));

  const auto one = train::train(spec, data, quick_config(spec, sys, 1));
  CHECK(one.step == 1);
  CHECK(one.history.size() == 1);
  CHECK(one.best_step == 0);
}

TEST_CASE("resuming continues the same run") {
  const auto sys = systems::default_spec(SystemKind::Magnetic);
  const auto data = testing::small_dataset(sys);
  const auto samples = systems::training_samples(data);
  const auto spec = small_spec(ModelKind::Hnn, 2);
  const auto full = train::train(spec, data, quick_config(spec, sys, 10));

  auto half = train::train(spec, data, quick_config(spec, sys, 5));
  const auto dir = testing::scratch_dir("resume");
  train::save_state(half, dir);
  std::stringstream hist;
  train::write_history(half.history, hist);
  auto resumed = train::load_state(dir, train::read_history(hist));
  CHECK(resumed.step == 5);
  train::run(resumed, samples, quick_config(spec, sys, 10));
  CHECK(model::flatten(resumed.model) == model::flatten(full.model));
  CHECK(model::flatten(resumed.best) == model::flatten(full.best));
  CHECK(resumed.best_step == full.best_step);
  REQUIRE(resumed.history.size() == full.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) {
    CHECK(resumed.history[i].step == full.history[i].step);
    CHECK(resumed.history[i].loss.total == full.history[i].loss.total);
  }

  std::vector<train::HistoryRow> wrong{{3, {}}};
  CHECK_THROWS_AS(train::load_state(dir, wrong), StructuralError);
}

TEST_CASE("history text") {
  std::vector<train::HistoryRow> rows{{100, {0.5, 0.25, 0.125, 0.1 + 0.2}}, {200, {1e-300, 0, 0, 1e300}}};
  std::stringstream s;
  train::write_history(rows, s);
  CHECK(s.str().rfind("step,l_hnn,l_poisson,l_hqp,total\n", 0) == 0);
  const auto back = train::read_history(s);
  REQUIRE(back.size() == 2);
  CHECK(back[0].loss.total == 0.1 + 0.2);
  CHECK(back[1].loss.l_hnn == 1e-300);
  std::stringstream bad("step,loss\n1,2\n");
  CHECK_THROWS_AS(train::read_history(bad), ParseError);
  std::stringstream short_row("step,l_hnn,l_poisson,l_hqp,total\n1,2,3\n");
  CHECK_THROWS_AS(train::read_history(short_row), ParseError);
}

TEST_CASE("non-finite losses stop training") {
  const auto sys = systems::default_spec(SystemKind::Magnetic);
  const auto data = testing::small_dataset(sys);
  const auto spec = small_spec(ModelKind::Hnn, 2);
  auto state = train::initial_state(spec, sys, 0);
  state.model.nets[0].layers[0].weight(0, 0) = std::nan("");
  try {
    train::run(state, systems::training_samples(data), quick_config(spec, sys, 3));
    FAIL("expected a training error");
  } catch (const train::TrainingError& e) {
    CHECK(e.step() == 0);
    CHECK(e.last_finite().spec == spec);
  }
  const auto other = systems::default_spec(SystemKind::TwoBodyGrav);
  CHECK_THROWS_AS(train::train(spec, testing::small_dataset(other), quick_config(spec, other, 1)), StructuralError);
}
