#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "scnn/systems/systems.hpp"

namespace scnn::systems {

struct Sample {
  double t = 0.0;
  PhaseState state;
  Eigen::VectorXd dq_dt;
  Eigen::VectorXd dp_dt;
};

struct DatasetOptions {
  int n_traj = 100;
  int n_points = 500;
  double t_span = 20.0;
  double split = 0.8;
  std::uint64_t seed = 0;

  double dt() const { return t_span / n_points; }
};

// Trajectories are split whole: a trajectory is either train or test.
struct Dataset {
  SystemSpec system;
  DatasetOptions options;
  std::vector<std::vector<Sample>> trajectories;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  // Initial conditions replaced after an integration failure.
  std::size_t resampled = 0;

  double dt() const { return options.dt(); }
  bool is_test(std::size_t traj) const;
};

void validate(const DatasetOptions& options);

// RK4 at dt = t_span / n_points from one sampled initial condition per
// trajectory. Trajectory i draws from its own stream seeded with seed ^ i.
Dataset generate_dataset(const SystemSpec& sys, const DatasetOptions& options);

// Delimited text: one '#' line of key=value pairs (system spec and options),
// a header row, then one row per sample.
void write_dataset(const Dataset& data, std::ostream& out);
Dataset read_dataset(std::istream& in);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Training samples, optionally restricted to the first `first_n` samples of
// each training trajectory.
std::vector<Sample> training_samples(const Dataset& data, std::optional<int> first_n = {});

// Initial states of the held-out trajectories.
std::vector<PhaseState> test_initial_states(const Dataset& data);

}  // namespace scnn::systems
