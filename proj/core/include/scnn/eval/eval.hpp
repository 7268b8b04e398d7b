#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "scnn/integrate/rk4.hpp"
#include "scnn/systems/systems.hpp"

namespace scnn::eval {

inline constexpr int kDefaultSteps = 100;

// Batched RK4 rollout that stops advancing a column once it leaves the
// system's domain (or turns non-finite).
struct Rollout {
  std::vector<Eigen::MatrixXd> states;  // n_steps + 1 matrices, 2K x B
  // Last step whose state is valid, per column; n_steps when it never left.
  std::vector<int> last_valid;

  int flagged() const;
};

Rollout rollout(const integrate::BatchField& f, const systems::SystemSpec& sys, const Eigen::MatrixXd& x0,
                double dt, int n_steps);

struct MseResult {
  double mse = 0.0;              // mean over the scored initializations
  std::vector<double> per_init;  // NaN when an initialization has no valid step
  int flagged = 0;               // initializations that left the domain
};

// Squared deviation from the true rollout on the same grid, averaged over
// steps 1..n and all coordinates per initialization, then over
// initializations. Angle differences are wrapped into (-pi, pi].
MseResult trajectory_mse(const integrate::BatchField& f, const systems::SystemSpec& sys,
                         const std::vector<systems::PhaseState>& initial, double dt, int n_steps = kDefaultSteps);

struct DriftResult {
  double drift = 0.0;  // mean over initializations of max_t |f_t - f_0|
  std::vector<double> per_init;
  int flagged = 0;
};

DriftResult conservation_drift(const integrate::BatchField& f, const systems::SystemSpec& sys,
                               const std::vector<systems::PhaseState>& initial,
                               const systems::ConservedQuantity& quantity, double dt,
                               int n_steps = kDefaultSteps);

// A model under comparison: one field per training seed.
struct Candidate {
  std::string name;
  std::vector<integrate::BatchField> seeds;
};

struct MetricRow {
  std::string model;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over seeds, 0 for one seed
  int n_seeds = 0;
  int n_init = 0;
  int n_steps = 0;
};

struct SeedMetrics {
  MseResult mse;
  std::vector<std::pair<std::string, DriftResult>> drifts;  // energy_drift, <name>_drift
};

SeedMetrics evaluate_seed(const integrate::BatchField& f, const systems::SystemSpec& sys,
                          const std::vector<systems::PhaseState>& initial, double dt, int n_steps);

// Rows per model: trajectory_mse, energy_drift, one drift row per momentum
// invariant of the system, and domain_exits.
std::vector<MetricRow> compare(const std::vector<Candidate>& models, const systems::SystemSpec& sys,
                               const std::vector<systems::PhaseState>& initial, double dt,
                               int n_steps = kDefaultSteps);

double mean(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

void write_report(const std::vector<MetricRow>& rows, std::ostream& out);

// Rollout dump in the dataset row layout (traj_id,split,t,q..,p..,dq..,dp..),
// derivative columns from `f`. Rows stop at each column's last valid step.
void write_rollout(const systems::SystemSpec& sys, const Rollout& r, const integrate::BatchField& f, double dt,
                   std::ostream& out);

}  // namespace scnn::eval
