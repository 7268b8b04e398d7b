#include "scnn/losses/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <thread>

#include "scnn/error.hpp"

namespace scnn::losses {

using model::ModelKind;

namespace {

// Index of a latent coordinate: Q_i -> i, P_i -> K + i.
struct Pair {
  int a;
  int b;
  double target;
};

std::vector<Pair> poisson_pairs(const model::ModelSpec& s, const LossWeights& w) {
  const int K = s.K;
  const int n = w.n_cyclic;
  const bool full = w.poisson_scope == PoissonScope::Full;
  const int m = static_cast<int>(s.constraints.size());
  std::vector<Pair> out;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      if (full || i < n || j < n) out.push_back({i, K + j, i == j ? 1.0 : 0.0});
    }
  }
  for (int i = 0; i < K; ++i) {
    for (int j = i + 1; j < K; ++j) {
      if (!full && i >= n) continue;
      // Two analytic momenta need not commute; they are not learned anyway.
      if (!(i < m && j < m)) out.push_back({K + i, K + j, 0.0});
      out.push_back({i, j, 0.0});
    }
  }
  return out;
}

void require_transform(const model::ModelSpec& s, const char* what) {
  if (!model::has_transform(s.kind)) {
    throw StructuralError(std::string(what) + " needs a transform model, got " + model::to_string(s.kind));
  }
}

void require_hamiltonian(const model::ModelSpec& s, const char* what) {
  if (!model::is_hamiltonian(s.kind)) throw StructuralError(std::string(what) + ": baseline has no Hamiltonian");
}

double weighted_total(const model::ModelSpec& s, const LossWeights& w, const LossReport& r) {
  if (!model::has_transform(s.kind)) return r.l_hnn;
  return r.l_hnn + w.alpha1 * r.l_poisson + w.alpha2 * r.l_hqp;
}

// --- scalar helpers ----------------------------------------------------------

struct ScalarSample {
  std::vector<ad::DiffScalar> x;  // (q, p) leaves
  std::span<const ad::DiffScalar> q() const { return std::span(x).first(x.size() / 2); }
  std::span<const ad::DiffScalar> p() const { return std::span(x).subspan(x.size() / 2); }
};

ScalarSample place(ad::Tape& tape, const systems::Sample& s) {
  ScalarSample out;
  for (Eigen::Index i = 0; i < s.state.q.size(); ++i) out.x.push_back(tape.var(s.state.q[i]));
  for (Eigen::Index i = 0; i < s.state.p.size(); ++i) out.x.push_back(tape.var(s.state.p[i]));
  return out;
}

ad::DiffScalar bracket(std::span<const ad::DiffScalar> df, std::span<const ad::DiffScalar> dg,
                       ad::Tape& tape) {
  const std::size_t K = df.size() / 2;
  ad::DiffScalar acc = tape.lift(0.0);
  for (std::size_t l = 0; l < K; ++l) acc = acc + (df[l] * dg[K + l] - df[K + l] * dg[l]);
  return acc;
}

ad::DiffScalar dot_data(std::span<const ad::DiffScalar> df, const systems::Sample& s, ad::Tape& tape) {
  const auto K = static_cast<std::size_t>(s.dq_dt.size());
  ad::DiffScalar acc = tape.lift(0.0);
  for (std::size_t l = 0; l < K; ++l) {
    acc = acc + df[l] * s.dq_dt[static_cast<Eigen::Index>(l)] + df[K + l] * s.dp_dt[static_cast<Eigen::Index>(l)];
  }
  return acc;
}

ad::DiffScalar batch_mean(ad::DiffScalar sum, std::size_t n) { return sum / static_cast<double>(n); }

// Gradients of every latent coordinate w.r.t. (q, p), (Q_1..Q_K, P_1..P_K) order.
std::vector<std::vector<ad::DiffScalar>> coordinate_gradients(ad::Tape& tape, const model::CanonicalCoords& c,
                                                              const ScalarSample& s) {
  std::vector<std::vector<ad::DiffScalar>> out;
  for (const auto* part : {&c.Q, &c.P}) {
    for (const auto& f : *part) out.push_back(tape.grad(f, s.x));
  }
  return out;
}

// --- matrix helpers -----------------------------------------------------------

ad::MatNode batch_mean(ad::MatrixTape& t, ad::MatNode rows_by_batch, Eigen::Index batch) {
  return t.affine(t.sum(rows_by_batch), 1.0 / static_cast<double>(batch), 0.0);
}

double scalar_of(ad::MatNode n) { return n.value()(0, 0); }

}  // namespace

std::string to_string(PoissonScope s) { return s == PoissonScope::Full ? "full" : "cyclic_only"; }
std::string to_string(HqpMode m) { return m == HqpMode::ChainRuleData ? "chain_rule_data" : "bracket_with_H"; }

PoissonScope parse_poisson_scope(std::string_view name) {
  if (name == "full") return PoissonScope::Full;
  if (name == "cyclic_only") return PoissonScope::CyclicOnly;
  throw std::invalid_argument("unknown poisson_scope '" + std::string(name) + "'");
}

HqpMode parse_hqp_mode(std::string_view name) {
  if (name == "chain_rule_data") return HqpMode::ChainRuleData;
  if (name == "bracket_with_H") return HqpMode::BracketWithH;
  throw std::invalid_argument("unknown hqp_derivative_mode '" + std::string(name) + "'");
}

LossWeights default_weights(const model::ModelSpec& spec) {
  LossWeights w;
  w.n_cyclic = spec.n_cyclic;
  w.alpha1 = w.alpha2 = std::pow(10.0, -spec.n_cyclic);
  w.beta = 0.0;
  w.poisson_scope = spec.K <= 4 ? PoissonScope::Full : PoissonScope::CyclicOnly;
  w.hqp_mode = HqpMode::ChainRuleData;
  return w;
}

std::vector<std::string> validate(const LossWeights& w, const model::ModelSpec& spec) {
  for (double v : {w.alpha1, w.alpha2, w.beta}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
  std::vector<std::string> warnings;
  if (model::has_transform(spec.kind)) {
    if (w.n_cyclic != spec.n_cyclic) {
      throw StructuralError("loss weights n_cyclic=" + std::to_string(w.n_cyclic) + " but model n_cyclic=" +
                            std::to_string(spec.n_cyclic));
    }
  } else if (w.beta != 0.0) {
    warnings.push_back("beta is unused by " + model::to_string(spec.kind) + " models");
  }
  return warnings;
}

// --- scalar path ---------------------------------------------------------------

ad::DiffScalar loss_hnn(ad::Tape& tape, const ScalarHamiltonian& H, std::span<const systems::Sample> batch) {
  ad::DiffScalar acc = tape.lift(0.0);
  for (const auto& s : batch) {
    const auto xs = place(tape, s);
    const auto dH = tape.grad(H(xs.q(), xs.p()), xs.x);
    const std::size_t K = xs.x.size() / 2;
    for (std::size_t i = 0; i < K; ++i) {
      const auto e = static_cast<Eigen::Index>(i);
      acc = acc + square(dH[K + i] - s.dq_dt[e]) + square(dH[i] + s.dp_dt[e]);
    }
  }
  return batch_mean(acc, batch.size());
}

ad::DiffScalar loss_hnn(const model::ScalarModel& m, std::span<const systems::Sample> batch) {
  require_hamiltonian(m.model().spec, "loss_hnn");
  return loss_hnn(
      m.tape(), [&m](std::span<const ad::DiffScalar> q, std::span<const ad::DiffScalar> p) { return m.hamiltonian(q, p); },
      batch);
}

ad::DiffScalar loss_baseline(const model::ScalarModel& m, std::span<const systems::Sample> batch) {
  ad::Tape& tape = m.tape();
  ad::DiffScalar acc = tape.lift(0.0);
  for (const auto& s : batch) {
    const auto xs = place(tape, s);
    const auto d = m.derivative(xs.q(), xs.p());
    const std::size_t K = xs.x.size() / 2;
    for (std::size_t i = 0; i < K; ++i) {
      const auto e = static_cast<Eigen::Index>(i);
      acc = acc + square(d[i] - s.dq_dt[e]) + square(d[K + i] - s.dp_dt[e]);
    }
  }
  return batch_mean(acc, batch.size());
}

ad::DiffScalar loss_poisson(const model::ScalarModel& m, std::span<const systems::Sample> batch,
                            const LossWeights& w) {
  const auto& spec = m.model().spec;
  require_transform(spec, "loss_poisson");
  ad::Tape& tape = m.tape();
  const auto pairs = poisson_pairs(spec, w);
  ad::DiffScalar acc = tape.lift(0.0);
  for (const auto& s : batch) {
    const auto xs = place(tape, s);
    const auto grads = coordinate_gradients(tape, m.transform(xs.q(), xs.p()), xs);
    for (const auto& pr : pairs) {
      acc = acc + square(bracket(grads[static_cast<std::size_t>(pr.a)], grads[static_cast<std::size_t>(pr.b)], tape) -
                         pr.target);
    }
  }
  return batch_mean(acc, batch.size());
}

HqpTerms hqp_terms(const model::ScalarModel& m, std::span<const systems::Sample> batch, const LossWeights& w) {
  const auto& spec = m.model().spec;
  require_transform(spec, "loss_hqp");
  ad::Tape& tape = m.tape();
  const int K = spec.K;
  const int n = w.n_cyclic;
  HqpTerms out{tape.lift(0.0), tape.lift(0.0), tape.lift(0.0)};
  for (const auto& s : batch) {
    const auto xs = place(tape, s);
    const auto c = m.transform(xs.q(), xs.p());
    const auto grads = coordinate_gradients(tape, c, xs);
    std::vector<ad::DiffScalar> z(c.P.begin(), c.P.end());
    z.insert(z.end(), c.Q.begin() + n, c.Q.end());
    const ad::DiffScalar H = m.latent_hamiltonian(c);
    const auto lg = tape.grad(H, z);
    std::vector<ad::DiffScalar> dH;
    if (w.hqp_mode == HqpMode::BracketWithH) dH = tape.grad(H, xs.x);
    auto rate = [&](int coord) {
      const auto& g = grads[static_cast<std::size_t>(coord)];
      return w.hqp_mode == HqpMode::ChainRuleData ? dot_data(g, s, tape) : bracket(g, dH, tape);
    };
    for (int i = 0; i < K; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (i < n) {
        out.momentum = out.momentum + square(rate(K + i));
        out.angle = out.angle + square(rate(i) - lg[ui]);
      } else {
        // dP_i = -dH/dQ_i, dQ_i = dH/dP_i; Q_i sits at latent index K + i - n.
        out.non_cyclic = out.non_cyclic + square(rate(K + i) + lg[static_cast<std::size_t>(K + i - n)]) +
                         square(rate(i) - lg[ui]);
      }
    }
  }
  out.momentum = batch_mean(out.momentum, batch.size());
  out.angle = batch_mean(out.angle, batch.size());
  out.non_cyclic = batch_mean(out.non_cyclic, batch.size());
  return out;
}

ad::DiffScalar loss_hqp(const model::ScalarModel& m, std::span<const systems::Sample> batch,
                        const LossWeights& w) {
  const auto& spec = m.model().spec;
  require_transform(spec, "loss_hqp");
  ad::Tape& tape = m.tape();
  if (w.n_cyclic == 0 && w.beta == 0.0) return tape.lift(0.0);
  const HqpTerms t = hqp_terms(m, batch, w);
  if (w.beta == 0.0) return t.momentum + t.angle;
  return t.momentum + t.angle + w.beta * t.non_cyclic;
}

ScalarLoss total_loss(const model::ScalarModel& m, std::span<const systems::Sample> batch,
                      const LossWeights& w) {
  const auto& spec = m.model().spec;
  ScalarLoss out;
  if (spec.kind == ModelKind::Baseline) {
    out.total = loss_baseline(m, batch);
    out.report.l_hnn = out.report.total = out.total.value();
    return out;
  }
  const ad::DiffScalar h = loss_hnn(m, batch);
  out.report.l_hnn = h.value();
  if (!model::has_transform(spec.kind)) {
    out.total = h;
    out.report.total = h.value();
    return out;
  }
  const ad::DiffScalar po = loss_poisson(m, batch, w);
  const ad::DiffScalar hq = loss_hqp(m, batch, w);
  out.report.l_poisson = po.value();
  out.report.l_hqp = hq.value();
  out.total = h + w.alpha1 * po + w.alpha2 * hq;
  out.report.total = weighted_total(spec, w, out.report);
  return out;
}

// --- batched path --------------------------------------------------------------

BatchData make_batch(std::span<const systems::Sample> samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(samples, all);
}

BatchData make_batch(std::span<const systems::Sample> samples, std::span<const std::size_t> index) {
  if (index.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Eigen::Index K = samples[index[0]].state.q.size();
  BatchData d{Eigen::MatrixXd(2 * K, static_cast<Eigen::Index>(index.size())),
              Eigen::MatrixXd(2 * K, static_cast<Eigen::Index>(index.size()))};
  for (std::size_t c = 0; c < index.size(); ++c) {
    const auto& s = samples[index[c]];
    const auto col = static_cast<Eigen::Index>(c);
    d.x.col(col) << s.state.q, s.state.p;
    d.xdot.col(col) << s.dq_dt, s.dp_dt;
  }
  return d;
}

ad::MatNode loss_hnn(const model::BatchGraph& g, const BatchData& data) {
  ad::MatrixTape& t = *g.dH.tape;
  const Eigen::Index K = data.x.rows() / 2;
  Eigen::MatrixXd target(2 * K, data.size());
  target << data.xdot.topRows(K), -data.xdot.bottomRows(K);
  const std::array<ad::MatNode, 2> swapped{t.rows(g.dH, K, K), t.rows(g.dH, 0, K)};
  const ad::MatNode r = t.sub(t.concat_rows(swapped), t.constant(std::move(target)));
  return batch_mean(t, t.square(r), data.size());
}

ad::MatNode loss_baseline(const model::BatchGraph& g, const BatchData& data) {
  ad::MatrixTape& t = *g.derivative.tape;
  const ad::MatNode r = t.sub(g.derivative, t.constant(data.xdot));
  return batch_mean(t, t.square(r), data.size());
}

ad::MatNode loss_poisson(const model::BatchGraph& g, const model::ModelSpec& spec, const LossWeights& w) {
  require_transform(spec, "loss_poisson");
  const auto pairs = poisson_pairs(spec, w);
  ad::MatrixTape& t = *g.coord_grad.front().tape;
  if (pairs.empty()) return t.constant(Eigen::MatrixXd::Zero(1, 1));
  std::vector<ad::MatNode> rows;
  Eigen::MatrixXd target(static_cast<Eigen::Index>(pairs.size()), g.batch);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& pr = pairs[k];
    rows.push_back(t.bracket(g.coord_grad[static_cast<std::size_t>(pr.a)], g.coord_grad[static_cast<std::size_t>(pr.b)]));
    target.row(static_cast<Eigen::Index>(k)).setConstant(pr.target);
  }
  const ad::MatNode r = t.sub(t.concat_rows(rows), t.constant(std::move(target)));
  return batch_mean(t, t.square(r), g.batch);
}

ad::MatNode loss_hqp(const model::BatchGraph& g, const BatchData& data, const model::ModelSpec& spec,
                     const LossWeights& w) {
  require_transform(spec, "loss_hqp");
  ad::MatrixTape& t = *g.coord_grad.front().tape;
  const int K = spec.K;
  const int n = w.n_cyclic;
  const ad::MatNode xdot = t.constant(data.xdot);
  auto rate = [&](int coord) {
    const ad::MatNode grad = g.coord_grad[static_cast<std::size_t>(coord)];
    return w.hqp_mode == HqpMode::ChainRuleData ? t.colsum(t.mul(grad, xdot)) : t.bracket(grad, g.dH);
  };
  auto lg = [&](int j) { return t.rows(g.latent_grad, j, 1); };
  std::vector<ad::MatNode> cyclic;
  std::vector<ad::MatNode> rest;
  for (int i = 0; i < K; ++i) {
    if (i < n) {
      cyclic.push_back(rate(K + i));
      cyclic.push_back(t.sub(rate(i), lg(i)));
    } else if (w.beta > 0.0) {
      rest.push_back(t.add(rate(K + i), lg(K + i - n)));
      rest.push_back(t.sub(rate(i), lg(i)));
    }
  }
  ad::MatNode total = t.constant(Eigen::MatrixXd::Zero(1, 1));
  if (!cyclic.empty()) total = t.add(total, batch_mean(t, t.square(t.concat_rows(cyclic)), g.batch));
  if (!rest.empty()) {
    total = t.add(total, t.affine(batch_mean(t, t.square(t.concat_rows(rest)), g.batch), w.beta, 0.0));
  }
  return total;
}

MatrixLoss total_loss(const model::MatrixModel& mm, const BatchData& data, const LossWeights& w) {
  const auto& spec = mm.model->spec;
  if (mm.nets.empty()) throw StructuralError("total_loss: unbound model");
  ad::MatrixTape& t = *mm.nets.front().weights.front().tape;
  const auto g = model::build_graph(mm, t.constant(data.x));
  MatrixLoss out;
  if (spec.kind == ModelKind::Baseline) {
    out.total = loss_baseline(g, data);
    out.report.l_hnn = out.report.total = scalar_of(out.total);
    return out;
  }
  const ad::MatNode h = loss_hnn(g, data);
  out.report.l_hnn = scalar_of(h);
  if (!model::has_transform(spec.kind)) {
    out.total = h;
    out.report.total = out.report.l_hnn;
    return out;
  }
  const ad::MatNode po = loss_poisson(g, spec, w);
  const ad::MatNode hq = loss_hqp(g, data, spec, w);
  out.report.l_poisson = scalar_of(po);
  out.report.l_hqp = scalar_of(hq);
  out.total = t.add(h, t.add(t.affine(po, w.alpha1, 0.0), t.affine(hq, w.alpha2, 0.0)));
  out.report.total = weighted_total(spec, w, out.report);
  return out;
}

namespace {

Evaluation evaluate_shard(const model::Model& m, const BatchData& data, const LossWeights& w, bool with_gradient) {
  ad::MatrixTape tape;
  const auto mm = model::bind(tape, m, with_gradient);
  const auto loss = total_loss(mm, data, w);
  Evaluation ev{loss.report, {}};
  if (!with_gradient) return ev;
  std::vector<ad::MatNode> leaves;
  for (const auto& net : mm.nets) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      leaves.push_back(net.weights[l]);
      leaves.push_back(net.biases[l]);
    }
  }
  const auto adj = tape.backward(loss.total, leaves);
  ev.gradient.resize(static_cast<Eigen::Index>(model::parameter_count(m)));
  Eigen::Index at = 0;
  for (std::size_t k = 0; k < adj.size(); k += 2) {
    const Eigen::MatrixXd& W = adj[k];
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) ev.gradient[at++] = W(r, c);
    }
    const Eigen::MatrixXd& b = adj[k + 1];
    ev.gradient.segment(at, b.size()) = b.reshaped();
    at += b.size();
  }
  return ev;
}

}  // namespace

Evaluation evaluate(const model::Model& m, const BatchData& data, const LossWeights& w, bool with_gradient,
                    int workers) {
  const Eigen::Index B = data.size();
  const Eigen::Index shards = std::clamp<Eigen::Index>(workers, 1, B);
  if (shards == 1) return evaluate_shard(m, data, w, with_gradient);

  std::vector<BatchData> parts;
  Eigen::Index start = 0;
  for (Eigen::Index s = 0; s < shards; ++s) {
    const Eigen::Index len = B / shards + (s < B % shards ? 1 : 0);
    parts.push_back({data.x.middleCols(start, len), data.xdot.middleCols(start, len)});
    start += len;
  }
  std::vector<Evaluation> results(parts.size());
  std::vector<std::exception_ptr> errors(parts.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t s = 0; s < parts.size(); ++s) {
      pool.emplace_back([&, s] {
        try {
          results[s] = evaluate_shard(m, parts[s], w, with_gradient);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Evaluation out;
  if (with_gradient) out.gradient = Eigen::VectorXd::Zero(results[0].gradient.size());
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const double f = static_cast<double>(parts[s].size()) / static_cast<double>(B);
    out.report.l_hnn += f * results[s].report.l_hnn;
    out.report.l_poisson += f * results[s].report.l_poisson;
    out.report.l_hqp += f * results[s].report.l_hqp;
    out.report.total += f * results[s].report.total;
    if (with_gradient) out.gradient += f * results[s].gradient;
  }
  return out;
}

Evaluation evaluate_reference(const model::Model& m, std::span<const systems::Sample> batch, const LossWeights& w,
                              bool with_gradient) {
  ad::Tape tape;
  const model::ScalarModel sm(tape, m, with_gradient);
  const auto loss = total_loss(sm, batch, w);
  Evaluation ev{loss.report, {}};
  if (!with_gradient) return ev;
  const auto leaves = sm.leaves();
  const auto g = tape.grad(loss.total, leaves);
  ev.gradient.resize(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) ev.gradient[static_cast<Eigen::Index>(i)] = g[i].value();
  return ev;
}

}  // namespace scnn::losses
