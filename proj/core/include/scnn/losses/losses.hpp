#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scnn/autodiff/matrix_tape.hpp"
#include "scnn/autodiff/tape.hpp"
#include "scnn/model/model.hpp"
#include "scnn/systems/dataset.hpp"

namespace scnn::losses {

enum class PoissonScope { Full, CyclicOnly };
enum class HqpMode { ChainRuleData, BracketWithH };

std::string to_string(PoissonScope s);
std::string to_string(HqpMode m);
PoissonScope parse_poisson_scope(std::string_view name);
HqpMode parse_hqp_mode(std::string_view name);

struct LossWeights {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double beta = 0.0;
  int n_cyclic = 0;
  PoissonScope poisson_scope = PoissonScope::Full;
  HqpMode hqp_mode = HqpMode::ChainRuleData;

  bool operator==(const LossWeights&) const = default;
};

// alpha1 = alpha2 = 10^-n, beta = 0, full scope up to K = 4.
LossWeights default_weights(const model::ModelSpec& spec);

// Rejects negative weights and an n_cyclic that disagrees with a transform
// model. Returns human-readable warnings (e.g. weights a model ignores).
std::vector<std::string> validate(const LossWeights& w, const model::ModelSpec& spec);

struct LossReport {
  double l_hnn = 0.0;  // baseline: derivative MSE
  double l_poisson = 0.0;
  double l_hqp = 0.0;
  double total = 0.0;
};

// --- scalar reference path ---------------------------------------------------
//
// Straightforward per-sample formulas on the scalar tape. Quadratic in the
// network width, so meant for checking the batched path on small nets.

ad::DiffScalar loss_hnn(const model::ScalarModel& m, std::span<const systems::Sample> batch);
// Same residual for any Hamiltonian expressed on the tape.
using ScalarHamiltonian =
    std::function<ad::DiffScalar(std::span<const ad::DiffScalar>, std::span<const ad::DiffScalar>)>;
ad::DiffScalar loss_hnn(ad::Tape& tape, const ScalarHamiltonian& H, std::span<const systems::Sample> batch);
ad::DiffScalar loss_baseline(const model::ScalarModel& m, std::span<const systems::Sample> batch);
ad::DiffScalar loss_poisson(const model::ScalarModel& m, std::span<const systems::Sample> batch,
                            const LossWeights& w);
// Batch means of the L_HQP pieces before weighting: sum_{i<n} dP_i^2,
// sum_{i<n} (dQ_i - dH/dP_i)^2, and the i >= n residuals that beta scales.
struct HqpTerms {
  ad::DiffScalar momentum;
  ad::DiffScalar angle;
  ad::DiffScalar non_cyclic;
};
HqpTerms hqp_terms(const model::ScalarModel& m, std::span<const systems::Sample> batch, const LossWeights& w);
ad::DiffScalar loss_hqp(const model::ScalarModel& m, std::span<const systems::Sample> batch,
                        const LossWeights& w);

struct ScalarLoss {
  ad::DiffScalar total;
  LossReport report;
};
ScalarLoss total_loss(const model::ScalarModel& m, std::span<const systems::Sample> batch,
                      const LossWeights& w);

// --- batched path ------------------------------------------------------------

// Columns are samples; x rows [q; p], xdot rows [dq/dt; dp/dt].
struct BatchData {
  Eigen::MatrixXd x;
  Eigen::MatrixXd xdot;

  Eigen::Index size() const { return x.cols(); }
};

BatchData make_batch(std::span<const systems::Sample> samples);
BatchData make_batch(std::span<const systems::Sample> samples, std::span<const std::size_t> index);

ad::MatNode loss_hnn(const model::BatchGraph& g, const BatchData& data);
ad::MatNode loss_baseline(const model::BatchGraph& g, const BatchData& data);
ad::MatNode loss_poisson(const model::BatchGraph& g, const model::ModelSpec& spec, const LossWeights& w);
ad::MatNode loss_hqp(const model::BatchGraph& g, const BatchData& data, const model::ModelSpec& spec,
                     const LossWeights& w);

struct MatrixLoss {
  ad::MatNode total;
  LossReport report;
};
MatrixLoss total_loss(const model::MatrixModel& mm, const BatchData& data, const LossWeights& w);

struct Evaluation {
  LossReport report;
  Eigen::VectorXd gradient;  // model::flatten order; empty without gradient
};

// Batched loss and its parameter gradient. The batch is split into `workers`
// contiguous shards whose results are combined in shard order.
Evaluation evaluate(const model::Model& m, const BatchData& data, const LossWeights& w,
                    bool with_gradient = true, int workers = 1);

// Same quantities through the scalar tape.
Evaluation evaluate_reference(const model::Model& m, std::span<const systems::Sample> batch,
                              const LossWeights& w, bool with_gradient = true);

}  // namespace scnn::losses
