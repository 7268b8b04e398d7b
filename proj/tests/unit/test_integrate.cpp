#include "doctest.h"
#include "richardson.hpp"
#include "scnn/error.hpp"
#include "scnn/integrate/rk4.hpp"
#include "support.hpp"

using namespace scnn;
using systems::SystemKind;

TEST_CASE("zero field is a fixed point") {
  const integrate::VectorField zero = [](const systems::PhaseState& s) {
    systems::PhaseState d;
    d.q = Eigen::VectorXd::Zero(s.K());
    d.p = Eigen::VectorXd::Zero(s.K());
    return d;
  };
  const auto s = testing::make_state({0.3, -0.2}, {0.1, 0.4});
  const auto n = integrate::rk4_step(zero, s, 0.1);
  CHECK(n.q == s.q);
  CHECK(n.p == s.p);
}

TEST_CASE("harmonic oscillator step") {
  const auto n = integrate::rk4_step(testing::harmonic_oscillator(), testing::make_state({1}, {0}), 0.1);
  CHECK(std::abs(n.q[0] - 0.99500417) < 1e-7);
  CHECK(std::abs(n.p[0] + 0.09983342) < 1e-7);
  CHECK(std::abs(n.q[0] - std::cos(0.1)) < 1e-7);
}

TEST_CASE("halving dt divides the one-period error by about 16") {
  const auto s0 = testing::make_state({1}, {0});
  auto err = [&](int steps) {
    const auto end = integrate::rollout(testing::harmonic_oscillator(), s0, 2 * M_PI / steps, static_cast<std::size_t>(steps)).back();
    return std::hypot(end.q[0] - 1.0, end.p[0]);
  };
  const double ratio = err(40) / err(80);
  CHECK(ratio > 16 * 0.8);
  CHECK(ratio < 16 * 1.2);
}

TEST_CASE("rollout length and composition") {
  const auto sys = systems::default_spec(SystemKind::Magnetic);
  const auto f = integrate::true_field(sys);
  const auto s0 = testing::random_states(sys, 1, 4)[0];
  CHECK(integrate::rollout(f, s0, 0.04, 0).size() == 1);
  const auto whole = integrate::rollout(f, s0, 0.04, 30);
  CHECK(whole.size() == 31);
  const auto first = integrate::rollout(f, s0, 0.04, 12);
  const auto second = integrate::rollout(f, first.back(), 0.04, 18);
  CHECK(second.back().q == whole.back().q);
  CHECK(second.back().p == whole.back().p);
}

TEST_CASE("ground-truth pendulum conserves energy over 500 steps") {
  const auto sys = systems::default_spec(SystemKind::SphericalPendulum);
  CHECK(testing::energy_drift(sys, testing::make_state({0.5, 0.0}, {0.0, 0.3}), 0.04, 500) < 1e-6);
  // Sampled states may pass near the rim; there the excess drift is RK4 error.
  for (const auto& s0 : testing::random_states(sys, 5, 6)) {
    const double coarse = testing::energy_drift(sys, s0, 0.04, 500);
    if (coarse >= 1e-6) CHECK(testing::energy_drift(sys, s0, 0.02, 1000) < coarse / 10);
  }
}

TEST_CASE("stage failures carry the stage index") {
  const auto sys = systems::default_spec(SystemKind::SphericalPendulum);
  const auto s = testing::make_state({0.999, 0.0}, {5.0, 0.0});
  try {
    (void)integrate::rk4_step(integrate::true_field(sys), s, 0.1);
    FAIL("expected an integration error");
  } catch (const IntegrationError& e) {
    CHECK(std::string(e.what()).find("stage") != std::string::npos);
  }
  CHECK_THROWS_AS(integrate::rk4_step(integrate::true_field(sys), testing::make_state({0, 0}, {0, 0}), 0.0), DomainError);
}

TEST_CASE("angles are wrapped after each step") {
  const auto sys = systems::default_spec(SystemKind::DoublePendulum);
  auto s = testing::make_state({6.2, 0.1}, {3.0, 0.0});
  const auto n = integrate::rk4_step(integrate::true_field(sys), s, 0.1, sys.angular());
  CHECK(n.q.minCoeff() >= 0.0);
  CHECK(n.q.maxCoeff() < systems::kTwoPi);
}

TEST_CASE("batched stepping matches single-state stepping") {
  for (auto kind : testing::all_kinds()) {
    const auto sys = systems::default_spec(kind);
    const auto states = testing::random_states(sys, 6, 12);
    const Eigen::MatrixXd x = integrate::pack(states);
    const Eigen::MatrixXd y = integrate::rk4_step_batch(integrate::true_batch_field(sys), x, 0.04, sys.angular());
    for (std::size_t c = 0; c < states.size(); ++c) {
      const auto s = integrate::rk4_step(integrate::true_field(sys), states[c], 0.04, sys.angular());
      CHECK((integrate::pack(s) - y.col(static_cast<Eigen::Index>(c))).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
}

TEST_CASE("empirical order is four") {
  CHECK(testing::richardson_order(testing::harmonic_oscillator(), testing::make_state({1}, {0}), 2.0, 20) ==
        doctest::Approx(4.0).epsilon(0.05));
  for (auto kind : testing::all_kinds()) {
    const auto sys = systems::default_spec(kind);
    const auto s0 = testing::random_states(sys, 1, 31)[0];
    const double p = testing::richardson_order(integrate::true_field(sys), s0, 1.0, 25);
    CAPTURE(systems::to_string(kind));
    CHECK(p >= 3.8);
    CHECK(p <= 4.2);
  }
}
