#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "scnn/losses/losses.hpp"
#include "scnn/model/model.hpp"
#include "scnn/systems/dataset.hpp"

namespace scnn::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 200;
  int steps = 20000;
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  int log_every = 100;
  // Use only the first n samples of each training trajectory.
  std::optional<int> first_n;
  int workers = 1;
};

void validate(const TrainConfig& c);

// Defaults for a model/system pair: loss weights from the model, and the
// 50-sample restriction for the gravitational and spring systems.
TrainConfig default_config(const model::ModelSpec& spec, const systems::SystemSpec& sys);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One bias-corrected Adam update in place. State vectors are sized on first use.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr);

struct HistoryRow {
  int step = 0;  // steps completed at the end of the interval
  losses::LossReport loss;  // interval mean
};

struct TrainState {
  model::Model model;
  AdamState adam;
  int step = 0;
  std::vector<HistoryRow> history;
  model::Model best;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_step = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int step, model::Model last_finite)
      : std::runtime_error(what), step_(step), last_finite_(std::move(last_finite)) {}
  int step() const noexcept { return step_; }
  const model::Model& last_finite() const noexcept { return last_finite_; }

 private:
  int step_;
  model::Model last_finite_;
};

TrainState initial_state(const model::ModelSpec& spec, const systems::SystemSpec& sys, std::uint64_t seed);

// Indices into the training samples for step `step`: epoch-wise permutations
// drawn from (seed, epoch), so a resumed run sees the same batches.
std::vector<std::size_t> batch_indices(std::size_t n_samples, int batch_size, std::uint64_t seed, int step);

using Progress = std::function<void(const TrainState&, const HistoryRow&)>;

// Runs from state.step up to config.steps. Throws TrainingError on a
// non-finite loss or gradient.
void run(TrainState& state, std::span<const systems::Sample> samples, const TrainConfig& config,
         const Progress& progress = {});

TrainState train(const model::ModelSpec& spec, const systems::Dataset& data, const TrainConfig& config,
                 const Progress& progress = {});

// Loss history: delimited text, columns step,l_hnn,l_poisson,l_hqp,total.
void write_history(const std::vector<HistoryRow>& rows, std::ostream& out);
std::vector<HistoryRow> read_history(std::istream& in);

// Checkpoint directory: model bundle files, best/ bundle, optimizer.json.
void save_state(const TrainState& state, const std::filesystem::path& dir);
TrainState load_state(const std::filesystem::path& dir, std::vector<HistoryRow> history);

}  // namespace scnn::train
