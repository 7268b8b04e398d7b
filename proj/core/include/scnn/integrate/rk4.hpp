#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "scnn/systems/systems.hpp"

namespace scnn::integrate {

using systems::PhaseState;

// Returns (dq/dt, dp/dt) packed as a PhaseState.
using VectorField = std::function<PhaseState(const PhaseState&)>;

// Batched field over columns of a (2K x B) matrix whose rows are [q; p].
using BatchField = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

// Classical RK4. Coordinates flagged in `angular` are wrapped to [0, 2*pi)
// after the step. Failures of `f` surface as IntegrationError with the stage.
PhaseState rk4_step(const VectorField& f, const PhaseState& s, double dt,
                    const std::vector<bool>& angular = {});

// n_steps + 1 states starting with s0.
std::vector<PhaseState> rollout(const VectorField& f, const PhaseState& s0, double dt,
                                std::size_t n_steps, const std::vector<bool>& angular = {});

Eigen::MatrixXd rk4_step_batch(const BatchField& f, const Eigen::MatrixXd& x, double dt,
                               const std::vector<bool>& angular = {});
std::vector<Eigen::MatrixXd> rollout_batch(const BatchField& f, const Eigen::MatrixXd& x0,
                                           double dt, std::size_t n_steps,
                                           const std::vector<bool>& angular = {});

// Ground-truth field of a system, with the system's angle mask.
VectorField true_field(const systems::SystemSpec& sys);
BatchField true_batch_field(const systems::SystemSpec& sys);

Eigen::VectorXd pack(const PhaseState& s);
PhaseState unpack(const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::MatrixXd pack(const std::vector<PhaseState>& states);

}  // namespace scnn::integrate
