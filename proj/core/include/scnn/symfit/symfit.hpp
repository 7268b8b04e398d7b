#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "scnn/systems/systems.hpp"

namespace scnn::symfit {

// Monomials in (q_1..q_K, p_1..p_K) up to a total degree, constant first,
// graded lexicographic within each degree.
class MonomialBasis {
 public:
  MonomialBasis(int K, int max_degree = 2);

  int K() const { return K_; }
  int max_degree() const { return max_degree_; }
  std::size_t size() const { return exponents_.size(); }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }
  const std::vector<std::string>& variables() const { return variables_; }
  // "1", "q_1", "q_1^2", "q_1*p_2"
  std::string term_name(std::size_t i) const;

  // One row of features per state.
  Eigen::MatrixXd features(const std::vector<systems::PhaseState>& states) const;

  // Closed-form size: binomial(2K + degree, degree).
  static std::size_t expected_size(int K, int max_degree);

 private:
  int K_;
  int max_degree_;
  std::vector<std::string> variables_;
  std::vector<std::vector<int>> exponents_;
};

using ScalarFunction = std::function<double(const systems::PhaseState&)>;
// Values for many states at once (a network evaluated as one batch).
using BatchFunction = std::function<Eigen::VectorXd(const std::vector<systems::PhaseState>&)>;

BatchFunction batched(ScalarFunction f);

inline constexpr double kSparsifyFraction = 0.05;
inline constexpr int kDefaultFitPoints = 2000;

struct FitResult {
  std::string name;
  MonomialBasis basis{1, 0};
  Eigen::VectorXd coefficients;  // aligned with basis
  double r2 = 0.0;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  double threshold = 0.0;  // sparsification cut, kSparsifyFraction * max |c|
  std::vector<std::size_t> kept;  // terms with |c| >= threshold
  // The fit sample, kept for span diagnostics.
  std::vector<systems::PhaseState> points;
  Eigen::VectorXd values;  // f at points

  Eigen::VectorXd fitted() const;
  // Kept terms with coefficients rounded to one decimal, e.g. "-4.2*p_1 + 1.0*q_1*p_2".
  std::string display() const;
};

// Points drawn from the system's initial-condition distribution.
std::vector<systems::PhaseState> sample_points(const systems::SystemSpec& sys, int n_points, std::uint64_t seed);

// Least-squares fit of f on the sample. Rank-deficient designs take the
// minimum-norm solution and set rank_deficient.
FitResult fit_polynomial(const BatchFunction& f, const std::vector<systems::PhaseState>& points,
                         const MonomialBasis& basis, std::string name = "f");
FitResult fit_polynomial(const BatchFunction& f, const systems::SystemSpec& sys, const MonomialBasis& basis,
                         int n_points = kDefaultFitPoints, std::uint64_t seed = 0, std::string name = "f");
FitResult fit_polynomial(const ScalarFunction& f, const systems::SystemSpec& sys, const MonomialBasis& basis,
                         int n_points = kDefaultFitPoints, std::uint64_t seed = 0, std::string name = "f");

// Fraction of the fitted function's variance over the fit sample explained by
// its projection on span{1, known...}. 1 when the fitted values are constant.
double match_span(const FitResult& fit, const std::vector<systems::ConservedQuantity>& known);

// Max over ground-truth trajectories of max_t |f_t - f_0| / max(|f_0|, 1e-8).
double check_conservation(const BatchFunction& f, const systems::SystemSpec& sys, int n_traj = 20,
                          std::uint64_t seed = 0, int n_points = 500, double t_span = 20.0);
double check_conservation(const ScalarFunction& f, const systems::SystemSpec& sys, int n_traj = 20,
                          std::uint64_t seed = 0, int n_points = 500, double t_span = 20.0);

// Delimited text: a '#' summary line, then term,coefficient,display,kept rows.
void write_fit(const FitResult& fit, double span, std::ostream& out);

}  // namespace scnn::symfit
