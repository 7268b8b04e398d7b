#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scnn/autodiff/tape.hpp"

namespace scnn::systems {

enum class SystemKind { TwoBodyGrav, SpringNBody, Magnetic, SphericalPendulum, DoublePendulum };

std::string to_string(SystemKind kind);
SystemKind parse_system_kind(std::string_view name);

// Physical parameters. Only the fields relevant to `kind` are used.
struct SystemSpec {
  SystemKind kind = SystemKind::SphericalPendulum;
  int n_particles = 1;
  int dim = 2;
  double k = 1.0;       // coupling: gravity, spring, electric field
  double m = 1.0;       // particle mass
  double g = 1.0;       // gravitational acceleration (pendulums)
  double l = 1.0;       // spherical pendulum length
  double charge = 1.0;  // magnetic system
  double field = 1.0;   // B
  double l1 = 1.0, l2 = 1.0, m1 = 1.0, m2 = 1.0;  // double pendulum

  // Number of position coordinates, N * d.
  int K() const { return n_particles * dim; }
  // Position coordinates stored as angles in [0, 2*pi).
  std::vector<bool> angular() const;
  bool operator==(const SystemSpec&) const = default;
};

// Defaults: spherical pendulum m = g = 1/2, l = 1; magnetic m = 1/2, k = q = B = 1;
// double pendulum all unity; gravity and springs unit mass and coupling.
// `n_particles` only matters for the spring system (3..5, default 3).
SystemSpec default_spec(SystemKind kind, int n_particles = 0);
void validate(const SystemSpec& spec);

// q and p are N*d vectors, particle-major: (x_1, y_1, x_2, y_2, ...).
struct PhaseState {
  Eigen::VectorXd q;
  Eigen::VectorXd p;

  int K() const { return static_cast<int>(q.size()); }
};

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Maps an angle into [0, 2*pi).
double wrap_angle(double theta);
// Wraps the angular coordinates of `s` in place.
void wrap(const SystemSpec& sys, PhaseState& s);

// Hamiltonian in any scalar type supporting + - * / sqrt sin cos (double or
// ad::DiffScalar). Performs no domain checking.
template <class T>
T hamiltonian(const SystemSpec& sys, std::span<const T> q, std::span<const T> p) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const int K = sys.K();
  switch (sys.kind) {
    case SystemKind::SphericalPendulum: {
      T kinetic = (p[0] * p[0] + p[1] * p[1]) / (2.0 * sys.m);
      T height = sqrt(sys.l * sys.l - q[0] * q[0] - q[1] * q[1]);
      return kinetic - sys.m * sys.g * height;
    }
    case SystemKind::Magnetic: {
      T vx = p[0] + sys.charge * q[1] * sys.field;
      T vy = p[1] - sys.charge * q[0] * sys.field;
      return (vx * vx + vy * vy) / (2.0 * sys.m) + sys.k * (q[0] * q[0] + q[1] * q[1]);
    }
    case SystemKind::DoublePendulum: {
      T delta = q[0] - q[1];
      T c = cos(delta);
      T s = sin(delta);
      T num = sys.l2 * sys.l2 * sys.m2 * p[0] * p[0] +
              sys.l1 * sys.l1 * (sys.m1 + sys.m2) * p[1] * p[1] -
              2.0 * sys.m2 * sys.l1 * sys.l2 * p[0] * p[1] * c;
      T den = 2.0 * sys.l1 * sys.l1 * sys.l2 * sys.l2 * sys.m2 * (sys.m1 + sys.m2 * s * s);
      return num / den - (sys.m1 + sys.m2) * sys.g * sys.l1 * cos(q[0]) -
             sys.m2 * sys.g * sys.l2 * cos(q[1]);
    }
    case SystemKind::TwoBodyGrav:
    case SystemKind::SpringNBody: {
      const int d = sys.dim;
      const int n = sys.n_particles;
      T energy = p[0] * p[0];
      for (int i = 1; i < K; ++i) energy = energy + p[i] * p[i];
      energy = energy / (2.0 * sys.m);
      for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
          T r2 = (q[a * d] - q[b * d]) * (q[a * d] - q[b * d]);
          for (int c = 1; c < d; ++c) {
            r2 = r2 + (q[a * d + c] - q[b * d + c]) * (q[a * d + c] - q[b * d + c]);
          }
          if (sys.kind == SystemKind::SpringNBody) {
            energy = energy + 0.5 * sys.k * r2;
          } else {
            energy = energy - sys.k * sys.m * sys.m / sqrt(r2);
          }
        }
      }
      return energy;
    }
  }
  return p[0];
}

// True when `s` lies in the region where the Hamiltonian is defined.
bool in_domain(const SystemSpec& sys, const PhaseState& s);

// Throw DomainError outside the domain.
double hamiltonian_true(const SystemSpec& sys, const PhaseState& s);
// (dH/dp, -dH/dq), hand-derived per system (independent of the autodiff engine).
PhaseState vector_field_true(const SystemSpec& sys, const PhaseState& s);

// Rejection budget for sample_initial.
inline constexpr int kMaxSamplerTries = 10000;

PhaseState sample_initial(const SystemSpec& sys, std::mt19937_64& rng);

// A named phase-space function available both on doubles and on the tape.
struct ConservedQuantity {
  std::string name;
  std::function<double(std::span<const double>, std::span<const double>)> eval;
  std::function<ad::DiffScalar(std::span<const ad::DiffScalar>, std::span<const ad::DiffScalar>)>
      eval_ad;

  double operator()(const PhaseState& s) const;
};

// Momentum-type invariants (energy is hamiltonian_true):
//   pendulum, magnetic: L; two-body, springs: L, P_x, P_y; double pendulum: none.
std::vector<ConservedQuantity> conserved_true(const SystemSpec& sys);

// Looks up one of the quantities above, or "H" for the true energy.
ConservedQuantity conserved_by_name(const SystemSpec& sys, std::string_view name);

}  // namespace scnn::systems
