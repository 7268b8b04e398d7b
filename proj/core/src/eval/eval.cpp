#include "scnn/eval/eval.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "scnn/error.hpp"
#include "scnn/io/text.hpp"

namespace scnn::eval {

namespace {

double wrapped_difference(double a, double b) {
  double r = std::remainder(a - b, 2.0 * std::numbers::pi);
  if (r == -std::numbers::pi) r = std::numbers::pi;
  return r;
}

bool valid_state(const systems::SystemSpec& sys, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (!x.allFinite()) return false;
  return systems::in_domain(sys, integrate::unpack(x));
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = x.col(cols[c]);
  return out;
}

}  // namespace

int Rollout::flagged() const {
  const int n = static_cast<int>(states.size()) - 1;
  int k = 0;
  for (int v : last_valid) k += v < n ? 1 : 0;
  return k;
}

Rollout rollout(const integrate::BatchField& f, const systems::SystemSpec& sys, const Eigen::MatrixXd& x0,
                double dt, int n_steps) {
  if (n_steps < 0) throw std::invalid_argument("n_steps must be >= 0");
  const auto mask = sys.angular();
  const Eigen::Index B = x0.cols();
  Rollout r;
  r.last_valid.assign(static_cast<std::size_t>(B), n_steps);
  Eigen::MatrixXd x = x0;
  std::vector<Eigen::Index> active;
  for (Eigen::Index c = 0; c < B; ++c) {
    systems::PhaseState s = integrate::unpack(x.col(c));
    if (!valid_state(sys, x.col(c))) throw DomainError("rollout: initial state " + std::to_string(c) + " outside the domain");
    systems::wrap(sys, s);
    x.col(c) = integrate::pack(s);
    active.push_back(c);
  }
  r.states.push_back(x);
  for (int step = 1; step <= n_steps; ++step) {
    if (!active.empty()) {
      const Eigen::MatrixXd xa = gather(x, active);
      Eigen::MatrixXd next;
      std::vector<char> ok(active.size(), 1);
      try {
        next = integrate::rk4_step_batch(f, xa, dt, mask);
      } catch (const std::exception&) {
        // Locate the offending columns one at a time.
        next = xa;
        for (std::size_t c = 0; c < active.size(); ++c) {
          try {
            next.col(static_cast<Eigen::Index>(c)) =
                integrate::rk4_step_batch(f, xa.col(static_cast<Eigen::Index>(c)), dt, mask);
          } catch (const std::exception&) {
            ok[c] = 0;
          }
        }
      }
      std::vector<Eigen::Index> still;
      for (std::size_t c = 0; c < active.size(); ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        if (ok[c] && valid_state(sys, next.col(col))) {
          x.col(active[c]) = next.col(col);
          still.push_back(active[c]);
        } else {
          r.last_valid[static_cast<std::size_t>(active[c])] = step - 1;
        }
      }
      active = std::move(still);
    }
    r.states.push_back(x);
  }
  return r;
}

MseResult trajectory_mse(const integrate::BatchField& f, const systems::SystemSpec& sys,
                         const std::vector<systems::PhaseState>& initial, double dt, int n_steps) {
  if (initial.empty()) throw std::invalid_argument("trajectory_mse: no initial states");
  if (n_steps < 1) throw std::invalid_argument("trajectory_mse: n_steps must be >= 1");
  const Eigen::MatrixXd x0 = integrate::pack(initial);
  const Rollout truth = rollout(integrate::true_batch_field(sys), sys, x0, dt, n_steps);
  if (truth.flagged() > 0) throw DomainError("trajectory_mse: ground-truth rollout left the domain");
  const Rollout learned = rollout(f, sys, x0, dt, n_steps);
  const auto mask = sys.angular();
  const int K = sys.K();

  MseResult out;
  out.flagged = learned.flagged();
  double total = 0.0;
  int scored = 0;
  for (std::size_t b = 0; b < initial.size(); ++b) {
    const int last = learned.last_valid[b];
    if (last < 1) {
      out.per_init.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const auto col = static_cast<Eigen::Index>(b);
    double acc = 0.0;
    for (int t = 1; t <= last; ++t) {
      const auto a = learned.states[static_cast<std::size_t>(t)].col(col);
      const auto e = truth.states[static_cast<std::size_t>(t)].col(col);
      for (Eigen::Index i = 0; i < 2 * K; ++i) {
        const bool angle = i < K && !mask.empty() && mask[static_cast<std::size_t>(i)];
        const double d = angle ? wrapped_difference(a[i], e[i]) : a[i] - e[i];
        acc += d * d;
      }
    }
    const double v = acc / (static_cast<double>(last) * 2.0 * K);
    out.per_init.push_back(v);
    total += v;
    ++scored;
  }
  out.mse = scored > 0 ? total / scored : std::numeric_limits<double>::quiet_NaN();
  return out;
}

DriftResult conservation_drift(const integrate::BatchField& f, const systems::SystemSpec& sys,
                               const std::vector<systems::PhaseState>& initial,
                               const systems::ConservedQuantity& quantity, double dt, int n_steps) {
  if (initial.empty()) throw std::invalid_argument("conservation_drift: no initial states");
  const Rollout learned = rollout(f, sys, integrate::pack(initial), dt, n_steps);
  DriftResult out;
  out.flagged = learned.flagged();
  double total = 0.0;
  for (std::size_t b = 0; b < initial.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    const double f0 = quantity(integrate::unpack(learned.states[0].col(col)));
    double worst = 0.0;
    for (int t = 1; t <= learned.last_valid[b]; ++t) {
      const double ft = quantity(integrate::unpack(learned.states[static_cast<std::size_t>(t)].col(col)));
      worst = std::max(worst, std::abs(ft - f0));
    }
    out.per_init.push_back(worst);
    total += worst;
  }
  out.drift = total / static_cast<double>(initial.size());
  return out;
}

SeedMetrics evaluate_seed(const integrate::BatchField& f, const systems::SystemSpec& sys,
                          const std::vector<systems::PhaseState>& initial, double dt, int n_steps) {
  SeedMetrics m;
  m.mse = trajectory_mse(f, sys, initial, dt, n_steps);
  m.drifts.emplace_back("energy_drift", conservation_drift(f, sys, initial, systems::conserved_by_name(sys, "H"), dt, n_steps));
  for (const auto& q : systems::conserved_true(sys)) {
    m.drifts.emplace_back(q.name + "_drift", conservation_drift(f, sys, initial, q, dt, n_steps));
  }
  return m;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<MetricRow> compare(const std::vector<Candidate>& models, const systems::SystemSpec& sys,
                               const std::vector<systems::PhaseState>& initial, double dt, int n_steps) {
  std::vector<MetricRow> rows;
  for (const auto& cand : models) {
    if (cand.seeds.empty()) throw std::invalid_argument("compare: model " + cand.name + " has no seeds");
    std::vector<std::string> names{"trajectory_mse"};
    std::vector<std::vector<double>> values(1);
    std::vector<double> exits;
    for (const auto& f : cand.seeds) {
      const SeedMetrics m = evaluate_seed(f, sys, initial, dt, n_steps);
      values[0].push_back(m.mse.mse);
      for (std::size_t k = 0; k < m.drifts.size(); ++k) {
        if (names.size() <= k + 1) {
          names.push_back(m.drifts[k].first);
          values.emplace_back();
        }
        values[k + 1].push_back(m.drifts[k].second.drift);
      }
      exits.push_back(m.mse.flagged);
    }
    names.push_back("domain_exits");
    values.push_back(exits);
    for (std::size_t k = 0; k < names.size(); ++k) {
      rows.push_back({cand.name, names[k], mean(values[k]), sample_std(values[k]),
                      static_cast<int>(cand.seeds.size()), static_cast<int>(initial.size()), n_steps});
    }
  }
  return rows;
}

void write_report(const std::vector<MetricRow>& rows, std::ostream& out) {
  out << "model,metric,mean,std,n_seeds,n_init,n_steps\n";
  for (const auto& r : rows) {
    out << r.model << "," << r.metric << "," << io::format_double(r.mean) << "," << io::format_double(r.std) << ","
        << r.n_seeds << "," << r.n_init << "," << r.n_steps << "\n";
  }
}

void write_rollout(const systems::SystemSpec& sys, const Rollout& r, const integrate::BatchField& f, double dt,
                   std::ostream& out) {
  const int K = sys.K();
  out << "traj_id,split,t";
  for (const char* prefix : {"q_", "p_", "dq_", "dp_"}) {
    for (int i = 1; i <= K; ++i) out << "," << prefix << i;
  }
  out << "\n";
  const Eigen::Index B = r.states.front().cols();
  for (Eigen::Index b = 0; b < B; ++b) {
    const int last = r.last_valid[static_cast<std::size_t>(b)];
    Eigen::MatrixXd xs(2 * K, last + 1);
    for (int t = 0; t <= last; ++t) xs.col(t) = r.states[static_cast<std::size_t>(t)].col(b);
    const Eigen::MatrixXd d = f(xs);
    for (int t = 0; t <= last; ++t) {
      out << b << ",test," << io::format_double(t * dt);
      for (Eigen::Index i = 0; i < 2 * K; ++i) out << "," << io::format_double(xs(i, t));
      for (Eigen::Index i = 0; i < 2 * K; ++i) out << "," << io::format_double(d(i, t));
      out << "\n";
    }
  }
}

}  // namespace scnn::eval
