#include "scnn/integrate/rk4.hpp"

#include <string>

#include "scnn/error.hpp"

namespace scnn::integrate {

namespace {

template <class Eval>
auto stage(int index, std::size_t step, Eval&& eval) {
  try {
    auto out = eval();
    bool finite = true;
    if constexpr (std::is_same_v<decltype(out), PhaseState>) {
      finite = out.q.allFinite() && out.p.allFinite();
    } else {
      finite = out.allFinite();
    }
    if (!finite) {
      throw IntegrationError("vector field returned non-finite values at stage " +
                                 std::to_string(index) + ", step " + std::to_string(step),
                             index, step);
    }
    return out;
  } catch (const IntegrationError&) {
    throw;
  } catch (const DomainError& e) {
    throw IntegrationError(std::string("vector field failed at stage ") + std::to_string(index) +
                               ", step " + std::to_string(step) + ": " + e.what(),
                           index, step);
  }
}

PhaseState axpy(const PhaseState& s, double h, const PhaseState& k) {
  return PhaseState{s.q + h * k.q, s.p + h * k.p};
}

void wrap_rows(Eigen::MatrixXd& x, const std::vector<bool>& angular) {
  for (std::size_t i = 0; i < angular.size(); ++i) {
    if (!angular[i]) continue;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      x(static_cast<Eigen::Index>(i), j) = systems::wrap_angle(x(static_cast<Eigen::Index>(i), j));
    }
  }
}

PhaseState step_impl(const VectorField& f, const PhaseState& s, double dt,
                     const std::vector<bool>& angular, std::size_t step) {
  if (!(dt > 0.0)) throw DomainError("rk4_step: dt must be positive");
  const PhaseState k1 = stage(1, step, [&] { return f(s); });
  const PhaseState k2 = stage(2, step, [&] { return f(axpy(s, 0.5 * dt, k1)); });
  const PhaseState k3 = stage(3, step, [&] { return f(axpy(s, 0.5 * dt, k2)); });
  const PhaseState k4 = stage(4, step, [&] { return f(axpy(s, dt, k3)); });
  PhaseState out{s.q + dt / 6.0 * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q),
                 s.p + dt / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p)};
  for (std::size_t i = 0; i < angular.size() && i < static_cast<std::size_t>(out.q.size()); ++i) {
    if (angular[i]) out.q[static_cast<Eigen::Index>(i)] = systems::wrap_angle(out.q[static_cast<Eigen::Index>(i)]);
  }
  return out;
}

Eigen::MatrixXd batch_step_impl(const BatchField& f, const Eigen::MatrixXd& x, double dt,
                                const std::vector<bool>& angular, std::size_t step) {
  if (!(dt > 0.0)) throw DomainError("rk4_step: dt must be positive");
  const Eigen::MatrixXd k1 = stage(1, step, [&] { return Eigen::MatrixXd(f(x)); });
  const Eigen::MatrixXd k2 = stage(2, step, [&] { return Eigen::MatrixXd(f(x + 0.5 * dt * k1)); });
  const Eigen::MatrixXd k3 = stage(3, step, [&] { return Eigen::MatrixXd(f(x + 0.5 * dt * k2)); });
  const Eigen::MatrixXd k4 = stage(4, step, [&] { return Eigen::MatrixXd(f(x + dt * k3)); });
  Eigen::MatrixXd out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  wrap_rows(out, angular);
  return out;
}

}  // namespace

PhaseState rk4_step(const VectorField& f, const PhaseState& s, double dt,
                    const std::vector<bool>& angular) {
  return step_impl(f, s, dt, angular, 0);
}

std::vector<PhaseState> rollout(const VectorField& f, const PhaseState& s0, double dt,
                                std::size_t n_steps, const std::vector<bool>& angular) {
  std::vector<PhaseState> states;
  states.reserve(n_steps + 1);
  states.push_back(s0);
  for (std::size_t i = 0; i < n_steps; ++i) {
    states.push_back(step_impl(f, states.back(), dt, angular, i));
  }
  return states;
}

Eigen::MatrixXd rk4_step_batch(const BatchField& f, const Eigen::MatrixXd& x, double dt,
                               const std::vector<bool>& angular) {
  return batch_step_impl(f, x, dt, angular, 0);
}

std::vector<Eigen::MatrixXd> rollout_batch(const BatchField& f, const Eigen::MatrixXd& x0,
                                           double dt, std::size_t n_steps,
                                           const std::vector<bool>& angular) {
  std::vector<Eigen::MatrixXd> states;
  states.reserve(n_steps + 1);
  states.push_back(x0);
  for (std::size_t i = 0; i < n_steps; ++i) {
    states.push_back(batch_step_impl(f, states.back(), dt, angular, i));
  }
  return states;
}

VectorField true_field(const systems::SystemSpec& sys) {
  return [sys](const PhaseState& s) { return systems::vector_field_true(sys, s); };
}

BatchField true_batch_field(const systems::SystemSpec& sys) {
  return [sys](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out.col(j) = pack(systems::vector_field_true(sys, unpack(x.col(j))));
    }
    return out;
  };
}

Eigen::VectorXd pack(const PhaseState& s) {
  Eigen::VectorXd x(s.q.size() + s.p.size());
  x << s.q, s.p;
  return x;
}

PhaseState unpack(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index k = x.size() / 2;
  return PhaseState{x.head(k), x.tail(k)};
}

Eigen::MatrixXd pack(const std::vector<PhaseState>& states) {
  if (states.empty()) return {};
  Eigen::MatrixXd x(2 * states.front().q.size(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = pack(states[j]);
  return x;
}

}  // namespace scnn::integrate
