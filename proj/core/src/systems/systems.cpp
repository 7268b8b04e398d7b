#include "scnn/systems/systems.hpp"

#include <array>
#include <stdexcept>

#include "scnn/error.hpp"

namespace scnn::systems {

namespace {

constexpr std::array<std::pair<SystemKind, const char*>, 5> kNames{{
    {SystemKind::TwoBodyGrav, "two_body_grav"},
    {SystemKind::SpringNBody, "spring_nbody"},
    {SystemKind::Magnetic, "magnetic"},
    {SystemKind::SphericalPendulum, "spherical_pendulum"},
    {SystemKind::DoublePendulum, "double_pendulum"},
}};

std::span<const double> qspan(const PhaseState& s) { return {s.q.data(), static_cast<std::size_t>(s.q.size())}; }
std::span<const double> pspan(const PhaseState& s) { return {s.p.data(), static_cast<std::size_t>(s.p.size())}; }

void check_shape(const SystemSpec& sys, const PhaseState& s) {
  if (s.q.size() != sys.K() || s.p.size() != sys.K()) {
    throw StructuralError("state has " + std::to_string(s.q.size()) + "+" +
                          std::to_string(s.p.size()) + " coordinates, system " +
                          to_string(sys.kind) + " needs " + std::to_string(sys.K()) + "+" +
                          std::to_string(sys.K()));
  }
}

void require_domain(const SystemSpec& sys, const PhaseState& s) {
  check_shape(sys, s);
  if (!in_domain(sys, s)) {
    throw DomainError("state outside the domain of " + to_string(sys.kind));
  }
}

double separation2(const SystemSpec& sys, const Eigen::VectorXd& q, int a, int b) {
  double r2 = 0.0;
  for (int c = 0; c < sys.dim; ++c) {
    const double d = q[a * sys.dim + c] - q[b * sys.dim + c];
    r2 += d * d;
  }
  return r2;
}

// Planar angular momentum sum_a (x_a p_ya - y_a p_xa), any scalar type.
template <class T>
T angular_momentum(int n, std::span<const T> q, std::span<const T> p) {
  T total = q[0] * p[1] - q[1] * p[0];
  for (int a = 1; a < n; ++a) total = total + (q[2 * a] * p[2 * a + 1] - q[2 * a + 1] * p[2 * a]);
  return total;
}

template <class T>
T total_momentum(int n, int component, std::span<const T> p) {
  T total = p[component];
  for (int a = 1; a < n; ++a) total = total + p[2 * a + component];
  return total;
}

template <class F>
ConservedQuantity make_quantity(std::string name, F f) {
  ConservedQuantity out;
  out.name = std::move(name);
  out.eval = [f](std::span<const double> q, std::span<const double> p) { return f(q, p); };
  out.eval_ad = [f](std::span<const ad::DiffScalar> q, std::span<const ad::DiffScalar> p) {
    return f(q, p);
  };
  return out;
}

}  // namespace

std::string to_string(SystemKind kind) {
  for (auto [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

SystemKind parse_system_kind(std::string_view name) {
  for (auto [k, n] : kNames) {
    if (name == n) return k;
  }
  throw std::invalid_argument("unknown system '" + std::string(name) + "'");
}

std::vector<bool> SystemSpec::angular() const {
  std::vector<bool> mask(static_cast<std::size_t>(K()), kind == SystemKind::DoublePendulum);
  return mask;
}

SystemSpec default_spec(SystemKind kind, int n_particles) {
  SystemSpec s;
  s.kind = kind;
  switch (kind) {
    case SystemKind::SphericalPendulum:
      s.n_particles = 1;
      s.dim = 2;
      s.m = 0.5;
      s.g = 0.5;
      s.l = 1.0;
      break;
    case SystemKind::Magnetic:
      s.n_particles = 1;
      s.dim = 2;
      s.m = 0.5;
      s.k = 1.0;
      s.charge = 1.0;
      s.field = 1.0;
      break;
    case SystemKind::DoublePendulum:
      // Two angles, one "particle" per arm in a 1-D angle space.
      s.n_particles = 2;
      s.dim = 1;
      break;
    case SystemKind::TwoBodyGrav:
      s.n_particles = 2;
      s.dim = 2;
      break;
    case SystemKind::SpringNBody:
      s.n_particles = n_particles > 0 ? n_particles : 3;
      s.dim = 2;
      break;
  }
  validate(s);
  return s;
}

void validate(const SystemSpec& s) {
  auto fail = [&](const std::string& why) {
    throw StructuralError("invalid " + to_string(s.kind) + " spec: " + why);
  };
  switch (s.kind) {
    case SystemKind::SphericalPendulum:
    case SystemKind::Magnetic:
      if (s.n_particles != 1 || s.dim != 2) fail("needs one particle in two dimensions");
      break;
    case SystemKind::DoublePendulum:
      if (s.n_particles != 2 || s.dim != 1) fail("needs two angle coordinates");
      break;
    case SystemKind::TwoBodyGrav:
      if (s.n_particles != 2 || s.dim != 2) fail("needs two particles in two dimensions");
      break;
    case SystemKind::SpringNBody:
      if (s.n_particles < 3 || s.n_particles > 5 || s.dim != 2) {
        fail("needs 3 to 5 particles in two dimensions");
      }
      break;
  }
  if (!(s.m > 0.0) || !(s.l > 0.0) || !(s.m1 > 0.0) || !(s.m2 > 0.0) || !(s.l1 > 0.0) ||
      !(s.l2 > 0.0)) {
    fail("masses and lengths must be positive");
  }
}

double wrap_angle(double theta) {
  double r = std::fmod(theta, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

void wrap(const SystemSpec& sys, PhaseState& s) {
  const auto mask = sys.angular();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) s.q[static_cast<Eigen::Index>(i)] = wrap_angle(s.q[static_cast<Eigen::Index>(i)]);
  }
}

bool in_domain(const SystemSpec& sys, const PhaseState& s) {
  if (s.q.size() != sys.K() || s.p.size() != sys.K()) return false;
  if (!s.q.allFinite() || !s.p.allFinite()) return false;
  switch (sys.kind) {
    case SystemKind::SphericalPendulum:
      return s.q[0] * s.q[0] + s.q[1] * s.q[1] < sys.l * sys.l;
    case SystemKind::TwoBodyGrav:
      return separation2(sys, s.q, 0, 1) > 0.0;
    default:
      return true;
  }
}

double hamiltonian_true(const SystemSpec& sys, const PhaseState& s) {
  require_domain(sys, s);
  return hamiltonian<double>(sys, qspan(s), pspan(s));
}

PhaseState vector_field_true(const SystemSpec& sys, const PhaseState& s) {
  require_domain(sys, s);
  const int K = sys.K();
  // dH/dq and dH/dp, then Hamilton's equations at the end.
  Eigen::VectorXd hq = Eigen::VectorXd::Zero(K);
  Eigen::VectorXd hp = Eigen::VectorXd::Zero(K);
  const auto& q = s.q;
  const auto& p = s.p;
  switch (sys.kind) {
    case SystemKind::SphericalPendulum: {
      const double height = std::sqrt(sys.l * sys.l - q[0] * q[0] - q[1] * q[1]);
      hp = p / sys.m;
      hq = sys.m * sys.g / height * q;
      break;
    }
    case SystemKind::Magnetic: {
      const double cb = sys.charge * sys.field;
      const double vx = p[0] + cb * q[1];
      const double vy = p[1] - cb * q[0];
      hp[0] = vx / sys.m;
      hp[1] = vy / sys.m;
      hq[0] = -cb * vy / sys.m + 2.0 * sys.k * q[0];
      hq[1] = cb * vx / sys.m + 2.0 * sys.k * q[1];
      break;
    }
    case SystemKind::DoublePendulum: {
      const double l1 = sys.l1, l2 = sys.l2, m1 = sys.m1, m2 = sys.m2;
      const double delta = q[0] - q[1];
      const double c = std::cos(delta);
      const double sn = std::sin(delta);
      const double num = l2 * l2 * m2 * p[0] * p[0] + l1 * l1 * (m1 + m2) * p[1] * p[1] -
                         2.0 * m2 * l1 * l2 * p[0] * p[1] * c;
      const double den = 2.0 * l1 * l1 * l2 * l2 * m2 * (m1 + m2 * sn * sn);
      const double dnum = 2.0 * m2 * l1 * l2 * p[0] * p[1] * sn;
      const double dden = 2.0 * l1 * l1 * l2 * l2 * m2 * m2 * 2.0 * sn * c;
      const double dkin = (dnum * den - num * dden) / (den * den);
      hp[0] = (2.0 * l2 * l2 * m2 * p[0] - 2.0 * m2 * l1 * l2 * p[1] * c) / den;
      hp[1] = (2.0 * l1 * l1 * (m1 + m2) * p[1] - 2.0 * m2 * l1 * l2 * p[0] * c) / den;
      hq[0] = dkin + (m1 + m2) * sys.g * l1 * std::sin(q[0]);
      hq[1] = -dkin + m2 * sys.g * l2 * std::sin(q[1]);
      break;
    }
    case SystemKind::TwoBodyGrav:
    case SystemKind::SpringNBody: {
      const int d = sys.dim;
      hp = p / sys.m;
      for (int a = 0; a < sys.n_particles; ++a) {
        for (int b = a + 1; b < sys.n_particles; ++b) {
          double coef = sys.k;
          if (sys.kind == SystemKind::TwoBodyGrav) {
            const double r2 = separation2(sys, q, a, b);
            coef = sys.k * sys.m * sys.m / (r2 * std::sqrt(r2));
          }
          for (int c = 0; c < d; ++c) {
            const double diff = q[a * d + c] - q[b * d + c];
            hq[a * d + c] += coef * diff;
            hq[b * d + c] -= coef * diff;
          }
        }
      }
      break;
    }
  }
  return PhaseState{hp, -hq};
}

PhaseState sample_initial(const SystemSpec& sys, std::mt19937_64& rng) {
  validate(sys);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int K = sys.K();
  for (int attempt = 0; attempt < kMaxSamplerTries; ++attempt) {
    PhaseState s{Eigen::VectorXd::Zero(K), Eigen::VectorXd::Zero(K)};
    switch (sys.kind) {
      case SystemKind::SphericalPendulum: {
        for (int i = 0; i < 2; ++i) s.q[i] = unit(rng);
        for (int i = 0; i < 2; ++i) s.p[i] = unit(rng);
        if (!in_domain(sys, s) || hamiltonian_true(sys, s) >= 0.0) continue;
        return s;
      }
      case SystemKind::Magnetic: {
        Eigen::Vector4d v;
        for (int i = 0; i < 4; ++i) v[i] = unit(rng);
        const double norm = v.norm();
        if (norm == 0.0) continue;
        const double length = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
        v *= length / norm;
        s.q << v[0], v[1];
        s.p << v[2], v[3];
        return s;
      }
      case SystemKind::DoublePendulum: {
        std::uniform_real_distribution<double> angle(0.0, kTwoPi);
        s.q[0] = angle(rng);
        s.q[1] = angle(rng);
        return s;
      }
      case SystemKind::TwoBodyGrav: {
        const double r = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
        const double phi = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);
        const double orbit = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 ? 1.0 : -1.0;
        std::uniform_real_distribution<double> jitter(0.95, 1.05);
        const double s1 = jitter(rng);
        const double s2 = jitter(rng);
        std::normal_distribution<double> boost_dist(0.0, 0.1);
        const double bx = boost_dist(rng);
        const double by = boost_dist(rng);
        if (r < 0.1) continue;
        const double cx = std::cos(phi), sy = std::sin(phi);
        // Circular speed of each body around the common centre at distance r/2.
        const double v = std::sqrt(sys.k * sys.m / (2.0 * r));
        s.q << 0.5 * r * cx, 0.5 * r * sy, -0.5 * r * cx, -0.5 * r * sy;
        const double tx = -sy * orbit, ty = cx * orbit;
        s.p << sys.m * (v * s1 * tx + bx), sys.m * (v * s1 * ty + by),
            sys.m * (-v * s2 * tx + bx), sys.m * (-v * s2 * ty + by);
        return s;
      }
      case SystemKind::SpringNBody: {
        std::uniform_real_distribution<double> box(-1.5, 1.5);
        const int n = sys.n_particles;
        for (int a = 0; a + 1 < n; ++a) {
          s.q[2 * a] = box(rng);
          s.q[2 * a + 1] = box(rng);
          s.p[2 * a] = box(rng);
          s.p[2 * a + 1] = box(rng);
        }
        for (int c = 0; c < 2; ++c) {
          double qs = 0.0, ps = 0.0;
          for (int a = 0; a + 1 < n; ++a) {
            qs += s.q[2 * a + c];
            ps += s.p[2 * a + c];
          }
          s.q[2 * (n - 1) + c] = -qs;
          s.p[2 * (n - 1) + c] = -ps;
        }
        return s;
      }
    }
  }
  throw SamplerError("sample_initial: no admissible state for " + to_string(sys.kind) +
                     " after " + std::to_string(kMaxSamplerTries) + " tries");
}

double ConservedQuantity::operator()(const PhaseState& s) const {
  return eval(qspan(s), pspan(s));
}

std::vector<ConservedQuantity> conserved_true(const SystemSpec& sys) {
  std::vector<ConservedQuantity> out;
  const int n = sys.n_particles;
  auto L = [n](auto q, auto p) { return angular_momentum(n, q, p); };
  auto px = [n](auto, auto p) { return total_momentum(n, 0, p); };
  auto py = [n](auto, auto p) { return total_momentum(n, 1, p); };
  switch (sys.kind) {
    case SystemKind::SphericalPendulum:
    case SystemKind::Magnetic:
      out.push_back(make_quantity("L", L));
      break;
    case SystemKind::TwoBodyGrav:
    case SystemKind::SpringNBody:
      out.push_back(make_quantity("L", L));
      out.push_back(make_quantity("P_x", px));
      out.push_back(make_quantity("P_y", py));
      break;
    case SystemKind::DoublePendulum:
      break;
  }
  return out;
}

ConservedQuantity conserved_by_name(const SystemSpec& sys, std::string_view name) {
  if (name == "H") {
    return make_quantity("H", [sys](auto q, auto p) {
      using T = typename decltype(q)::value_type;
      return hamiltonian<std::remove_const_t<T>>(sys, q, p);
    });
  }
  for (auto& c : conserved_true(sys)) {
    if (c.name == name) return c;
  }
  throw std::invalid_argument("system " + to_string(sys.kind) + " has no conserved quantity '" +
                              std::string(name) + "'");
}

}  // namespace scnn::systems
