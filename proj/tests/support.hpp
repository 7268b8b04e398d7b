#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "scnn/integrate/rk4.hpp"
#include "scnn/systems/dataset.hpp"
#include "scnn/systems/systems.hpp"

namespace scnn::testing {

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline const std::vector<systems::SystemKind>& all_kinds() {
  static const std::vector<systems::SystemKind> k{systems::SystemKind::TwoBodyGrav, systems::SystemKind::SpringNBody,
                                                   systems::SystemKind::Magnetic, systems::SystemKind::SphericalPendulum,
                                                   systems::SystemKind::DoublePendulum};
  return k;
}

inline std::vector<systems::PhaseState> random_states(const systems::SystemSpec& sys, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<systems::PhaseState> out;
  for (int i = 0; i < n; ++i) out.push_back(systems::sample_initial(sys, rng));
  return out;
}

inline systems::PhaseState make_state(std::vector<double> q, std::vector<double> p) {
  systems::PhaseState s;
  s.q = Eigen::Map<Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  s.p = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  return s;
}

// Max relative energy change along an RK4 rollout of the true field.
inline double energy_drift(const systems::SystemSpec& sys, const systems::PhaseState& s0, double dt, int n) {
  const auto traj = integrate::rollout(integrate::true_field(sys), s0, dt, static_cast<std::size_t>(n));
  const double e0 = systems::hamiltonian_true(sys, s0);
  double drift = 0.0;
  for (const auto& s : traj) drift = std::max(drift, std::abs(systems::hamiltonian_true(sys, s) - e0) / std::abs(e0));
  return drift;
}

// Small dataset for fast tests.
inline systems::Dataset small_dataset(const systems::SystemSpec& sys, int n_traj = 4, int n_points = 20,
                                      std::uint64_t seed = 3) {
  systems::DatasetOptions o;
  o.n_traj = n_traj;
  o.n_points = n_points;
  o.t_span = 0.04 * n_points;
  o.split = 0.5;
  o.seed = seed;
  return systems::generate_dataset(sys, o);
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("scnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace scnn::testing
