#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scnn/autodiff/matrix_tape.hpp"
#include "scnn/autodiff/tape.hpp"
#include "scnn/integrate/rk4.hpp"
#include "scnn/nets/mlp.hpp"
#include "scnn/systems/systems.hpp"

namespace scnn::model {

enum class ModelKind { Baseline, Hnn, HnnLarge, Scnn, ScnnConstraint };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
bool is_hamiltonian(ModelKind kind);
bool has_transform(ModelKind kind);

struct ModelSpec {
  ModelKind kind = ModelKind::Hnn;
  int K = 1;          // N * d
  int n_cyclic = 0;   // leading (Q_i, P_i) pairs forced cyclic
  int hidden_dim = 200;
  int hidden_layers = 2;  // hnn_large always uses 5
  // Names of analytic conserved quantities (systems::conserved_true) that
  // replace P_1, P_2, ... for scnn_constraint. At most n_cyclic.
  std::vector<std::string> constraints;

  bool operator==(const ModelSpec&) const = default;

  // T_psi: 2K -> 2K, outputs laid out (Q_1..Q_K, P_1..P_K).
  nets::MLPSpec transform_spec() const;
  // H_phi: for transform kinds its input is (P_1..P_K, Q_{n+1}..Q_K).
  nets::MLPSpec hamiltonian_spec() const;
  // Baseline: 2K -> 2K (dq/dt, dp/dt).
  nets::MLPSpec derivative_spec() const;
};

void validate(const ModelSpec& spec);

struct Model {
  ModelSpec spec;
  systems::SystemSpec system;
  // baseline: {derivative}; hnn, hnn_large: {hamiltonian}; scnn kinds: {transform, hamiltonian}.
  std::vector<nets::MLPParams> nets;

  const nets::MLPParams& transform() const;
  const nets::MLPParams& hamiltonian_net() const;
  // Analytic momenta for scnn_constraint, in order.
  std::vector<systems::ConservedQuantity> constraint_functions() const;
};

Model init_model(const ModelSpec& spec, const systems::SystemSpec& system, std::uint64_t seed);

std::size_t parameter_count(const Model& m);
// Nets concatenated in Model::nets order, each in nets::flatten layout.
Eigen::VectorXd flatten(const Model& m);
void unflatten(std::span<const double> flat, Model& m);

// --- scalar tape path --------------------------------------------------------

struct CanonicalCoords {
  std::vector<ad::DiffScalar> Q;
  std::vector<ad::DiffScalar> P;
};

// A model placed on a scalar tape. Parameters are tracked leaves when
// `track_params` is set, constants otherwise.
class ScalarModel {
 public:
  ScalarModel(ad::Tape& tape, const Model& model, bool track_params);

  ad::Tape& tape() const { return *tape_; }
  const Model& model() const { return *model_; }
  // Tracked parameter leaves, flatten() order.
  std::vector<ad::DiffScalar> leaves() const;

  // Requires a transform kind.
  CanonicalCoords transform(std::span<const ad::DiffScalar> q, std::span<const ad::DiffScalar> p) const;
  // H_phi on latent inputs (P_1..P_K, Q_{n+1}..Q_K).
  ad::DiffScalar latent_hamiltonian(const CanonicalCoords& c) const;
  // Requires a Hamiltonian kind.
  ad::DiffScalar hamiltonian(std::span<const ad::DiffScalar> q, std::span<const ad::DiffScalar> p) const;
  // Raw baseline output (dq/dt, dp/dt).
  std::vector<ad::DiffScalar> derivative(std::span<const ad::DiffScalar> q,
                                         std::span<const ad::DiffScalar> p) const;

 private:
  ad::Tape* tape_;
  const Model* model_;
  std::vector<nets::ScalarNet> nets_;
  std::vector<systems::ConservedQuantity> constraints_;
};

// {f, g} = sum_i df/dq_i dg/dp_i - df/dp_i dg/dq_i, differentiable.
ad::DiffScalar poisson_bracket(ad::DiffScalar f, ad::DiffScalar g,
                               std::span<const ad::DiffScalar> q, std::span<const ad::DiffScalar> p);

// Learned field through the scalar tape (reference path; slow for wide nets).
systems::PhaseState vector_field_scalar(const Model& m, const systems::PhaseState& s);

// --- matrix tape path --------------------------------------------------------

struct MatrixModel {
  const Model* model = nullptr;
  std::vector<nets::MatrixNet> nets;
};

MatrixModel bind(ad::MatrixTape& tape, const Model& m, bool track_params);

// All per-sample quantities the losses need, for a batch in the columns of x.
struct BatchGraph {
  Eigen::Index batch = 0;
  ad::MatNode derivative;  // baseline: 2K x B
  ad::MatNode H;           // 1 x B
  ad::MatNode dH;          // 2K x B, gradient w.r.t. (q, p)
  // Transform kinds: coordinate k in (Q_1..Q_K, P_1..P_K) order.
  std::vector<ad::MatNode> coord_value;  // 1 x B each
  std::vector<ad::MatNode> coord_grad;   // 2K x B each, gradient w.r.t. (q, p)
  ad::MatNode latent_grad;  // (2K - n) x B, dH_phi / d(P_1..P_K, Q_{n+1}..Q_K)
};

// x is (2K x B) with rows [q; p].
BatchGraph build_graph(const MatrixModel& mm, ad::MatNode x);

// Learned (dq/dt, dp/dt) for every column of x, rows [dq; dp].
Eigen::MatrixXd vector_field_batch(const Model& m, const Eigen::MatrixXd& x);
systems::PhaseState vector_field_learned(const Model& m, const systems::PhaseState& s);
integrate::BatchField learned_field(const Model& m);
integrate::VectorField learned_single_field(const Model& m);

// Latent coordinates (Q_1..Q_K, P_1..P_K) for every column of x (2K x B rows).
Eigen::MatrixXd latent_coordinates(const Model& m, const Eigen::MatrixXd& x);
// Learned Hamiltonian for every column (1 x B).
Eigen::MatrixXd hamiltonian_batch(const Model& m, const Eigen::MatrixXd& x);

// --- bundle files ------------------------------------------------------------
//
// <dir>/manifest.json  {format_version, model: ModelSpec, system: SystemSpec,
//                       nets: [{role, file}]}
// <dir>/<role>.json    one nets checkpoint per constituent net

void save_bundle(const Model& m, const std::filesystem::path& dir);
Model load_bundle(const std::filesystem::path& dir);

}  // namespace scnn::model
