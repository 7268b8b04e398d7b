#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scnn/autodiff/matrix_tape.hpp"
#include "scnn/autodiff/tape.hpp"

namespace scnn::nets {

enum class Activation { Tanh };

struct MLPSpec {
  int input_dim = 1;
  int output_dim = 1;
  int hidden_dim = 200;
  int hidden_layers = 2;
  Activation activation = Activation::Tanh;

  bool operator==(const MLPSpec&) const = default;
  // "in=4 out=1 hidden=200x2 tanh"
  std::string describe() const;
};

void validate(const MLPSpec& spec);
std::size_t parameter_count(const MLPSpec& spec);

// Weight is (out x in); tanh on every layer except the last.
struct Layer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct MLPParams {
  MLPSpec spec;
  std::vector<Layer> layers;

  std::size_t parameter_count() const { return nets::parameter_count(spec); }
  bool operator==(const MLPParams& other) const;
};

// Orthonormal rows (rows <= cols) or columns (rows > cols) per weight matrix,
// zero biases. Deterministic in `seed`.
MLPParams init_orthogonal(const MLPSpec& spec, std::uint64_t seed);

// All-zero parameters of the right shape.
MLPParams zeros(const MLPSpec& spec);

// Flat layout: for each layer, weights row-major, then bias.
Eigen::VectorXd flatten(const MLPParams& params);
void unflatten(std::span<const double> flat, MLPParams& params);

// Plain evaluation; x is (input_dim x batch).
Eigen::MatrixXd forward(const MLPParams& params, const Eigen::MatrixXd& x);

// --- scalar tape path ------------------------------------------------------

// Parameters placed on a scalar tape, either as tracked leaves or constants.
class ScalarNet {
 public:
  ScalarNet(ad::Tape& tape, const MLPParams& params, bool track);

  std::vector<ad::DiffScalar> forward(std::span<const ad::DiffScalar> x) const;
  // Tracked leaves in flatten() order (empty when bound as constants).
  const std::vector<ad::DiffScalar>& leaves() const { return leaves_; }
  const MLPSpec& spec() const { return spec_; }

 private:
  struct BoundLayer {
    int rows;
    int cols;
    std::vector<ad::DiffScalar> weight;  // row-major
    std::vector<ad::DiffScalar> bias;
  };
  MLPSpec spec_;
  std::vector<BoundLayer> layers_;
  std::vector<ad::DiffScalar> leaves_;
};

// Convenience: evaluate with parameters as constants.
std::vector<ad::DiffScalar> forward(ad::Tape& tape, const MLPParams& params,
                                    std::span<const ad::DiffScalar> x);

// --- matrix tape path ------------------------------------------------------

struct MatrixNet {
  MLPSpec spec;
  std::vector<ad::MatNode> weights;
  std::vector<ad::MatNode> biases;
};

MatrixNet bind(ad::MatrixTape& tape, const MLPParams& params, bool track);

// Gradients returned by MatrixTape::backward for bind(..., true) leaves, in
// flatten() order.
Eigen::VectorXd flatten_gradient(const MatrixNet& net, ad::MatrixTape& tape, ad::MatNode loss);

struct TangentOutput {
  ad::MatNode value;    // output_dim x batch
  ad::MatNode tangent;  // output_dim x (batch * directions), block k = d out / d direction k
};

ad::MatNode forward(const MatrixNet& net, ad::MatNode x);

// Pushes `directions` input tangents alongside the batch. dx has the layout of
// TangentOutput::tangent with input_dim rows.
TangentOutput forward_tangent(const MatrixNet& net, ad::MatNode x, ad::MatNode dx,
                              Eigen::Index directions);

// Unit seeds for all input coordinates: dim x (batch * dim), block k holds
// ones in row k.
Eigen::MatrixXd unit_seeds(Eigen::Index dim, Eigen::Index batch);

// Per-sample gradient of output row `row`: (directions x batch).
ad::MatNode per_sample_gradient(const TangentOutput& out, Eigen::Index row, Eigen::Index batch,
                                Eigen::Index directions);

// --- checkpoints -----------------------------------------------------------

std::string to_json_string(const MLPParams& params);
MLPParams from_json_string(const std::string& text);

void save_checkpoint(const MLPParams& params, const std::filesystem::path& path);
// Throws ParseError on malformed content, StructuralError on inconsistent shapes.
MLPParams load_checkpoint(const std::filesystem::path& path);
// As above, and StructuralError if the embedded spec differs from `expected`.
MLPParams load_checkpoint(const std::filesystem::path& path, const MLPSpec& expected);

}  // namespace scnn::nets
