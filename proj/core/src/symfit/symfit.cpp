#include "scnn/symfit/symfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <iostream>
#include <random>
#include <sstream>

#include "scnn/error.hpp"
#include "scnn/io/text.hpp"
#include "scnn/systems/dataset.hpp"

namespace scnn::symfit {

namespace {

// Exponent tuples over `vars` variables summing to `degree`, largest leading
// exponent first.
void tuples(int vars, int degree, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  const auto at = cur.size();
  if (static_cast<int>(at) == vars - 1) {
    cur.push_back(degree);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int e = degree; e >= 0; --e) {
    cur.push_back(e);
    tuples(vars, degree - e, cur, out);
    cur.pop_back();
  }
}

double variance(const Eigen::VectorXd& v) {
  return (v.array() - v.mean()).square().sum();
}

}  // namespace

MonomialBasis::MonomialBasis(int K, int max_degree) : K_(K), max_degree_(max_degree) {
  if (K < 1) throw std::invalid_argument("MonomialBasis: K must be positive");
  if (max_degree < 0) throw std::invalid_argument("MonomialBasis: degree must be >= 0");
  for (int i = 1; i <= K; ++i) variables_.push_back("q_" + std::to_string(i));
  for (int i = 1; i <= K; ++i) variables_.push_back("p_" + std::to_string(i));
  std::vector<int> cur;
  for (int d = 0; d <= max_degree; ++d) tuples(2 * K, d, cur, exponents_);
}

std::size_t MonomialBasis::expected_size(int K, int max_degree) {
  // binomial(2K + d, d)
  std::size_t num = 1;
  std::size_t den = 1;
  for (int i = 1; i <= max_degree; ++i) {
    num *= static_cast<std::size_t>(2 * K + i);
    den *= static_cast<std::size_t>(i);
  }
  return num / den;
}

std::string MonomialBasis::term_name(std::size_t i) const {
  const auto& e = exponents_.at(i);
  std::string out;
  for (std::size_t v = 0; v < e.size(); ++v) {
    if (e[v] == 0) continue;
    if (!out.empty()) out += "*";
    out += variables_[v];
    if (e[v] > 1) out += "^" + std::to_string(e[v]);
  }
  return out.empty() ? "1" : out;
}

Eigen::MatrixXd MonomialBasis::features(const std::vector<systems::PhaseState>& states) const {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(size()));
  std::vector<double> x(static_cast<std::size_t>(2 * K_));
  for (std::size_t r = 0; r < states.size(); ++r) {
    const auto& s = states[r];
    if (s.K() != K_) throw StructuralError("MonomialBasis: state dimension does not match the basis");
    for (int i = 0; i < K_; ++i) {
      x[static_cast<std::size_t>(i)] = s.q[i];
      x[static_cast<std::size_t>(K_ + i)] = s.p[i];
    }
    for (std::size_t c = 0; c < exponents_.size(); ++c) {
      double v = 1.0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        for (int e = 0; e < exponents_[c][k]; ++e) v *= x[k];
      }
      X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return X;
}

Eigen::VectorXd FitResult::fitted() const { return basis.features(points) * coefficients; }

std::string FitResult::display() const {
  std::string out;
  for (std::size_t i : kept) {
    const double c = std::round(coefficients[static_cast<Eigen::Index>(i)] * 10.0) / 10.0;
    const std::string mag = io::format_fixed(std::abs(c), 1);
    if (out.empty()) {
      out += c < 0.0 ? "-" : "";
    } else {
      out += c < 0.0 ? " - " : " + ";
    }
    out += mag;
    if (basis.term_name(i) != "1") out += "*" + basis.term_name(i);
  }
  return out.empty() ? "0" : out;
}

std::vector<systems::PhaseState> sample_points(const systems::SystemSpec& sys, int n_points, std::uint64_t seed) {
  if (n_points < 1) throw std::invalid_argument("sample_points: n_points must be positive");
  std::mt19937_64 rng(seed);
  std::vector<systems::PhaseState> out;
  out.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) out.push_back(systems::sample_initial(sys, rng));
  return out;
}

BatchFunction batched(ScalarFunction f) {
  return [f = std::move(f)](const std::vector<systems::PhaseState>& states) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(states.size()));
    for (std::size_t i = 0; i < states.size(); ++i) v[static_cast<Eigen::Index>(i)] = f(states[i]);
    return v;
  };
}

FitResult fit_polynomial(const BatchFunction& f, const std::vector<systems::PhaseState>& points,
                         const MonomialBasis& basis, std::string name) {
  if (points.empty()) throw std::invalid_argument("fit_polynomial: no sample points");
  FitResult fit;
  fit.name = std::move(name);
  fit.basis = basis;
  fit.points = points;
  fit.values = f(points);
  if (fit.values.size() != static_cast<Eigen::Index>(points.size())) {
    throw StructuralError("fit_polynomial: function returned the wrong number of values");
  }
  if (!fit.values.allFinite()) throw DomainError("fit_polynomial: " + fit.name + " is not finite on the sample");

  const Eigen::MatrixXd X = basis.features(points);
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  fit.coefficients = cod.solve(fit.values);
  fit.rank = cod.rank();
  fit.rank_deficient = fit.rank < X.cols();
  if (fit.rank_deficient) {
    std::clog << "fit_polynomial: " << fit.name << ": design matrix has rank " << fit.rank << " < " << X.cols()
              << ", using the minimum-norm solution\n";
  }
  const double ss_res = (X * fit.coefficients - fit.values).squaredNorm();
  const double ss_tot = variance(fit.values);
  if (ss_tot > 0.0) {
    fit.r2 = 1.0 - ss_res / ss_tot;
  } else {
    fit.r2 = ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  }
  const double cmax = fit.coefficients.cwiseAbs().maxCoeff();
  fit.threshold = kSparsifyFraction * cmax;
  for (Eigen::Index i = 0; i < fit.coefficients.size(); ++i) {
    if (cmax > 0.0 && std::abs(fit.coefficients[i]) >= fit.threshold) fit.kept.push_back(static_cast<std::size_t>(i));
  }
  return fit;
}

FitResult fit_polynomial(const BatchFunction& f, const systems::SystemSpec& sys, const MonomialBasis& basis,
                         int n_points, std::uint64_t seed, std::string name) {
  if (basis.K() != sys.K()) throw StructuralError("fit_polynomial: basis K does not match the system");
  return fit_polynomial(f, sample_points(sys, n_points, seed), basis, std::move(name));
}

FitResult fit_polynomial(const ScalarFunction& f, const systems::SystemSpec& sys, const MonomialBasis& basis,
                         int n_points, std::uint64_t seed, std::string name) {
  return fit_polynomial(batched(f), sys, basis, n_points, seed, std::move(name));
}

double match_span(const FitResult& fit, const std::vector<systems::ConservedQuantity>& known) {
  if (known.empty()) throw std::invalid_argument("match_span: no known quantities");
  const Eigen::VectorXd y = fit.fitted();
  const double total = variance(y);
  // Rounding noise on a constant fit is not a signal.
  if (!(total > 1e-20 * y.squaredNorm())) return 1.0;
  const auto n = static_cast<Eigen::Index>(fit.points.size());
  Eigen::MatrixXd A(n, static_cast<Eigen::Index>(known.size()) + 1);
  A.col(0).setOnes();
  for (std::size_t k = 0; k < known.size(); ++k) {
    for (Eigen::Index r = 0; r < n; ++r) {
      A(r, static_cast<Eigen::Index>(k) + 1) = known[k](fit.points[static_cast<std::size_t>(r)]);
    }
  }
  const Eigen::VectorXd c = A.completeOrthogonalDecomposition().solve(y);
  const double residual = (A * c - y).squaredNorm();
  return std::clamp(1.0 - residual / total, 0.0, 1.0);
}

double check_conservation(const ScalarFunction& f, const systems::SystemSpec& sys, int n_traj, std::uint64_t seed,
                          int n_points, double t_span) {
  return check_conservation(batched(f), sys, n_traj, seed, n_points, t_span);
}

double check_conservation(const BatchFunction& f, const systems::SystemSpec& sys, int n_traj, std::uint64_t seed,
                          int n_points, double t_span) {
  systems::DatasetOptions opt;
  opt.n_traj = n_traj;
  opt.n_points = n_points;
  opt.t_span = t_span;
  opt.split = 1.0;
  opt.seed = seed;
  const auto data = systems::generate_dataset(sys, opt);
  double worst = 0.0;
  for (const auto& traj : data.trajectories) {
    std::vector<systems::PhaseState> states;
    for (const auto& s : traj) states.push_back(s.state);
    const Eigen::VectorXd v = f(states);
    const double f0 = v[0];
    const double drift = (v.array() - f0).abs().maxCoeff();
    worst = std::max(worst, drift / std::max(std::abs(f0), 1e-8));
  }
  return worst;
}

void write_fit(const FitResult& fit, double span, std::ostream& out) {
  out << "# name=" << fit.name << " r2=" << io::format_double(fit.r2) << " span=" << io::format_double(span)
      << " rank=" << fit.rank << " basis_size=" << fit.basis.size() << " n_points=" << fit.points.size()
      << " threshold=" << io::format_double(fit.threshold) << "\n";
  out << "# display: " << fit.display() << "\n";
  out << "term,coefficient,display,kept\n";
  for (std::size_t i = 0; i < fit.basis.size(); ++i) {
    const double c = fit.coefficients[static_cast<Eigen::Index>(i)];
    const bool kept = std::find(fit.kept.begin(), fit.kept.end(), i) != fit.kept.end();
    out << fit.basis.term_name(i) << "," << io::format_double(c) << "," << io::format_fixed(c, 1) << ","
        << (kept ? 1 : 0) << "\n";
  }
}

}  // namespace scnn::symfit
