#include "scnn/model/model.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "json_codec.hpp"
#include "scnn/error.hpp"

namespace scnn::model {

namespace {

constexpr std::array<std::pair<ModelKind, const char*>, 5> kNames{{
    {ModelKind::Baseline, "baseline"},
    {ModelKind::Hnn, "hnn"},
    {ModelKind::HnnLarge, "hnn_large"},
    {ModelKind::Scnn, "scnn"},
    {ModelKind::ScnnConstraint, "scnn_constraint"},
}};

constexpr int kLargeHiddenLayers = 5;

std::vector<std::string> roles(ModelKind kind) {
  if (kind == ModelKind::Baseline) return {"derivative"};
  if (has_transform(kind)) return {"transform", "hamiltonian"};
  return {"hamiltonian"};
}

std::vector<nets::MLPSpec> net_specs(const ModelSpec& s) {
  if (s.kind == ModelKind::Baseline) return {s.derivative_spec()};
  if (has_transform(s.kind)) return {s.transform_spec(), s.hamiltonian_spec()};
  return {s.hamiltonian_spec()};
}

}  // namespace

std::string to_string(ModelKind kind) {
  for (auto [k, n] : kNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto [k, n] : kNames) {
    if (name == n) return k;
  }
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

bool is_hamiltonian(ModelKind kind) { return kind != ModelKind::Baseline; }

bool has_transform(ModelKind kind) {
  return kind == ModelKind::Scnn || kind == ModelKind::ScnnConstraint;
}

nets::MLPSpec ModelSpec::transform_spec() const {
  return nets::MLPSpec{2 * K, 2 * K, hidden_dim, hidden_layers, nets::Activation::Tanh};
}

nets::MLPSpec ModelSpec::hamiltonian_spec() const {
  const int layers = kind == ModelKind::HnnLarge ? kLargeHiddenLayers : hidden_layers;
  const int in = has_transform(kind) ? 2 * K - n_cyclic : 2 * K;
  return nets::MLPSpec{in, 1, hidden_dim, layers, nets::Activation::Tanh};
}

nets::MLPSpec ModelSpec::derivative_spec() const {
  return nets::MLPSpec{2 * K, 2 * K, hidden_dim, hidden_layers, nets::Activation::Tanh};
}

void validate(const ModelSpec& s) {
  auto fail = [&](const std::string& why) {
    throw StructuralError("invalid " + to_string(s.kind) + " model: " + why);
  };
  if (s.K < 1) fail("K must be positive");
  if (s.hidden_dim < 1 || s.hidden_layers < 0) fail("bad hidden layer sizes");
  if (has_transform(s.kind)) {
    if (s.n_cyclic < 0 || s.n_cyclic > s.K) fail("n_cyclic must lie in [0, K]");
  } else if (s.n_cyclic != 0) {
    fail("n_cyclic only applies to scnn kinds");
  }
  if (s.kind == ModelKind::ScnnConstraint) {
    if (s.constraints.empty()) fail("needs at least one constraint function");
    if (static_cast<int>(s.constraints.size()) > s.n_cyclic) {
      fail("more constraint functions than cyclic pairs");
    }
  } else if (!s.constraints.empty()) {
    fail("constraint functions only apply to scnn_constraint");
  }
}

const nets::MLPParams& Model::transform() const {
  if (!has_transform(spec.kind)) throw StructuralError(to_string(spec.kind) + " has no transform network");
  return nets[0];
}

const nets::MLPParams& Model::hamiltonian_net() const {
  if (!is_hamiltonian(spec.kind)) throw StructuralError("baseline has no Hamiltonian network");
  return nets.back();
}

std::vector<systems::ConservedQuantity> Model::constraint_functions() const {
  std::vector<systems::ConservedQuantity> out;
  for (const auto& name : spec.constraints) out.push_back(systems::conserved_by_name(system, name));
  return out;
}

Model init_model(const ModelSpec& spec, const systems::SystemSpec& system, std::uint64_t seed) {
  validate(spec);
  if (spec.K != system.K()) {
    throw StructuralError("model K=" + std::to_string(spec.K) + " does not match system K=" +
                          std::to_string(system.K()));
  }
  Model m{spec, system, {}};
  std::uint64_t s = seed;
  for (const auto& ns : net_specs(spec)) {
    m.nets.push_back(nets::init_orthogonal(ns, s));
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
  }
  // Resolve constraint names early so bad names fail here.
  (void)m.constraint_functions();
  return m;
}

std::size_t parameter_count(const Model& m) {
  std::size_t n = 0;
  for (const auto& net : m.nets) n += net.parameter_count();
  return n;
}

Eigen::VectorXd flatten(const Model& m) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count(m)));
  Eigen::Index at = 0;
  for (const auto& net : m.nets) {
    const Eigen::VectorXd f = nets::flatten(net);
    flat.segment(at, f.size()) = f;
    at += f.size();
  }
  return flat;
}

void unflatten(std::span<const double> flat, Model& m) {
  if (flat.size() != parameter_count(m)) {
    throw StructuralError("unflatten: expected " + std::to_string(parameter_count(m)) +
                          " values, got " + std::to_string(flat.size()));
  }
  std::size_t at = 0;
  for (auto& net : m.nets) {
    const std::size_t n = net.parameter_count();
    nets::unflatten(flat.subspan(at, n), net);
    at += n;
  }
}

// --- scalar path -------------------------------------------------------------

ScalarModel::ScalarModel(ad::Tape& tape, const Model& model, bool track_params)
    : tape_(&tape), model_(&model), constraints_(model.constraint_functions()) {
  for (const auto& net : model.nets) nets_.emplace_back(tape, net, track_params);
}

std::vector<ad::DiffScalar> ScalarModel::leaves() const {
  std::vector<ad::DiffScalar> out;
  for (const auto& n : nets_) out.insert(out.end(), n.leaves().begin(), n.leaves().end());
  return out;
}

CanonicalCoords ScalarModel::transform(std::span<const ad::DiffScalar> q,
                                       std::span<const ad::DiffScalar> p) const {
  if (!has_transform(model_->spec.kind)) {
    throw StructuralError("transform: " + to_string(model_->spec.kind) + " has no transform network");
  }
  const int K = model_->spec.K;
  std::vector<ad::DiffScalar> x(q.begin(), q.end());
  x.insert(x.end(), p.begin(), p.end());
  const auto y = nets_[0].forward(x);
  CanonicalCoords c;
  c.Q.assign(y.begin(), y.begin() + K);
  c.P.assign(y.begin() + K, y.end());
  for (std::size_t i = 0; i < constraints_.size(); ++i) c.P[i] = constraints_[i].eval_ad(q, p);
  return c;
}

ad::DiffScalar ScalarModel::latent_hamiltonian(const CanonicalCoords& c) const {
  const int n = model_->spec.n_cyclic;
  std::vector<ad::DiffScalar> z(c.P.begin(), c.P.end());
  z.insert(z.end(), c.Q.begin() + n, c.Q.end());
  return nets_.back().forward(z)[0];
}

ad::DiffScalar ScalarModel::hamiltonian(std::span<const ad::DiffScalar> q,
                                        std::span<const ad::DiffScalar> p) const {
  const ModelKind kind = model_->spec.kind;
  if (!is_hamiltonian(kind)) throw StructuralError("hamiltonian: baseline model has no Hamiltonian");
  if (has_transform(kind)) return latent_hamiltonian(transform(q, p));
  std::vector<ad::DiffScalar> x(q.begin(), q.end());
  x.insert(x.end(), p.begin(), p.end());
  return nets_.back().forward(x)[0];
}

std::vector<ad::DiffScalar> ScalarModel::derivative(std::span<const ad::DiffScalar> q,
                                                    std::span<const ad::DiffScalar> p) const {
  if (model_->spec.kind != ModelKind::Baseline) {
    throw StructuralError("derivative: only the baseline predicts derivatives directly");
  }
  std::vector<ad::DiffScalar> x(q.begin(), q.end());
  x.insert(x.end(), p.begin(), p.end());
  return nets_[0].forward(x);
}

ad::DiffScalar poisson_bracket(ad::DiffScalar f, ad::DiffScalar g,
                               std::span<const ad::DiffScalar> q, std::span<const ad::DiffScalar> p) {
  if (q.size() != p.size()) throw StructuralError("poisson_bracket: q and p differ in length");
  ad::Tape* tape = f.tape();
  if (tape == nullptr || g.tape() != tape) throw StructuralError("poisson_bracket: tape mismatch");
  std::vector<ad::DiffScalar> x(q.begin(), q.end());
  x.insert(x.end(), p.begin(), p.end());
  const auto df = tape->grad(f, x);
  const auto dg = tape->grad(g, x);
  const std::size_t K = q.size();
  ad::DiffScalar acc = tape->lift(0.0);
  for (std::size_t i = 0; i < K; ++i) acc = acc + (df[i] * dg[K + i] - df[K + i] * dg[i]);
  return acc;
}

systems::PhaseState vector_field_scalar(const Model& m, const systems::PhaseState& s) {
  ad::Tape tape;
  ScalarModel sm(tape, m, false);
  const int K = m.spec.K;
  std::vector<ad::DiffScalar> q, p;
  for (int i = 0; i < K; ++i) q.push_back(tape.var(s.q[i]));
  for (int i = 0; i < K; ++i) p.push_back(tape.var(s.p[i]));
  systems::PhaseState out{Eigen::VectorXd(K), Eigen::VectorXd(K)};
  if (m.spec.kind == ModelKind::Baseline) {
    const auto d = sm.derivative(q, p);
    for (int i = 0; i < K; ++i) {
      out.q[i] = d[i].value();
      out.p[i] = d[K + i].value();
    }
    return out;
  }
  std::vector<ad::DiffScalar> x(q);
  x.insert(x.end(), p.begin(), p.end());
  const auto g = tape.grad(sm.hamiltonian(q, p), x);
  for (int i = 0; i < K; ++i) {
    out.q[i] = g[K + i].value();
    out.p[i] = -g[i].value();
  }
  return out;
}

// --- matrix path -------------------------------------------------------------

MatrixModel bind(ad::MatrixTape& tape, const Model& m, bool track_params) {
  MatrixModel mm{&m, {}};
  for (const auto& net : m.nets) mm.nets.push_back(nets::bind(tape, net, track_params));
  return mm;
}

BatchGraph build_graph(const MatrixModel& mm, ad::MatNode x) {
  const Model& m = *mm.model;
  const int K = m.spec.K;
  const Eigen::Index dim = 2 * K;
  if (x.rows() != dim) {
    throw StructuralError("build_graph: batch has " + std::to_string(x.rows()) + " rows, model needs " +
                          std::to_string(dim));
  }
  ad::MatrixTape& t = *x.tape;
  const Eigen::Index B = x.cols();
  BatchGraph g;
  g.batch = B;

  if (m.spec.kind == ModelKind::Baseline) {
    g.derivative = nets::forward(mm.nets[0], x);
    return g;
  }

  const ad::MatNode seeds = t.constant(nets::unit_seeds(dim, B));
  if (!has_transform(m.spec.kind)) {
    const auto out = nets::forward_tangent(mm.nets[0], x, seeds, dim);
    g.H = out.value;
    g.dH = nets::per_sample_gradient(out, 0, B, dim);
    return g;
  }

  const auto tout = nets::forward_tangent(mm.nets[0], x, seeds, dim);
  for (Eigen::Index a = 0; a < dim; ++a) {
    g.coord_value.push_back(t.rows(tout.value, a, 1));
    g.coord_grad.push_back(nets::per_sample_gradient(tout, a, B, dim));
  }

  const auto constraints = m.constraint_functions();
  if (!constraints.empty()) {
    const Eigen::MatrixXd& xv = x.value();
    for (std::size_t i = 0; i < constraints.size(); ++i) {
      Eigen::MatrixXd val(1, B);
      Eigen::MatrixXd grad(dim, B);
      for (Eigen::Index b = 0; b < B; ++b) {
        ad::Tape tape;
        std::vector<ad::DiffScalar> vars;
        for (Eigen::Index r = 0; r < dim; ++r) vars.push_back(tape.var(xv(r, b)));
        const std::span<const ad::DiffScalar> all(vars);
        const ad::DiffScalar f = constraints[i].eval_ad(all.first(K), all.subspan(K));
        val(0, b) = f.value();
        const auto df = tape.grad(f, all);
        for (Eigen::Index r = 0; r < dim; ++r) grad(r, b) = df[static_cast<std::size_t>(r)].value();
      }
      g.coord_value[K + i] = t.constant(std::move(val));
      g.coord_grad[K + i] = t.constant(std::move(grad));
    }
  }

  const int n = m.spec.n_cyclic;
  std::vector<Eigen::Index> latent_of;  // latent input j -> coordinate index
  for (int i = 0; i < K; ++i) latent_of.push_back(K + i);
  for (int i = n; i < K; ++i) latent_of.push_back(i);
  std::vector<ad::MatNode> parts;
  for (auto idx : latent_of) parts.push_back(g.coord_value[static_cast<std::size_t>(idx)]);
  const ad::MatNode z = t.concat_rows(parts);
  const auto zdim = static_cast<Eigen::Index>(latent_of.size());
  const auto hout = nets::forward_tangent(mm.nets[1], z, t.constant(nets::unit_seeds(zdim, B)), zdim);
  g.H = hout.value;
  g.latent_grad = nets::per_sample_gradient(hout, 0, B, zdim);

  // Chain rule back to (q, p).
  ad::MatNode dH = t.scale_cols(g.coord_grad[static_cast<std::size_t>(latent_of[0])], t.rows(g.latent_grad, 0, 1));
  for (Eigen::Index j = 1; j < zdim; ++j) {
    dH = t.add(dH, t.scale_cols(g.coord_grad[static_cast<std::size_t>(latent_of[static_cast<std::size_t>(j)])],
                                t.rows(g.latent_grad, j, 1)));
  }
  g.dH = dH;
  return g;
}

Eigen::MatrixXd vector_field_batch(const Model& m, const Eigen::MatrixXd& x) {
  ad::MatrixTape tape;
  const auto mm = bind(tape, m, false);
  const auto g = build_graph(mm, tape.constant(x));
  if (m.spec.kind == ModelKind::Baseline) return g.derivative.value();
  const int K = m.spec.K;
  const Eigen::MatrixXd& dH = g.dH.value();
  Eigen::MatrixXd out(2 * K, x.cols());
  out.topRows(K) = dH.bottomRows(K);
  out.bottomRows(K) = -dH.topRows(K);
  return out;
}

systems::PhaseState vector_field_learned(const Model& m, const systems::PhaseState& s) {
  const Eigen::MatrixXd field = vector_field_batch(m, integrate::pack(s));
  return integrate::unpack(field.col(0));
}

integrate::BatchField learned_field(const Model& m) {
  return [&m](const Eigen::MatrixXd& x) { return vector_field_batch(m, x); };
}

integrate::VectorField learned_single_field(const Model& m) {
  return [&m](const systems::PhaseState& s) { return vector_field_learned(m, s); };
}

Eigen::MatrixXd latent_coordinates(const Model& m, const Eigen::MatrixXd& x) {
  ad::MatrixTape tape;
  const auto mm = bind(tape, m, false);
  const auto g = build_graph(mm, tape.constant(x));
  if (g.coord_value.empty()) throw StructuralError("latent_coordinates: model has no transform");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(g.coord_value.size()), x.cols());
  for (std::size_t a = 0; a < g.coord_value.size(); ++a) {
    out.row(static_cast<Eigen::Index>(a)) = g.coord_value[a].value();
  }
  return out;
}

Eigen::MatrixXd hamiltonian_batch(const Model& m, const Eigen::MatrixXd& x) {
  if (!is_hamiltonian(m.spec.kind)) throw StructuralError("hamiltonian: baseline model has no Hamiltonian");
  ad::MatrixTape tape;
  const auto mm = bind(tape, m, false);
  return build_graph(mm, tape.constant(x)).H.value();
}

// --- bundles -----------------------------------------------------------------

void save_bundle(const Model& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  codec::Json manifest;
  manifest["format_version"] = 1;
  manifest["model"] = codec::to_json(m.spec);
  manifest["system"] = codec::to_json(m.system);
  codec::Json list = codec::Json::array();
  const auto names = roles(m.spec.kind);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string file = names[i] + ".json";
    nets::save_checkpoint(m.nets[i], dir / file);
    list.push_back(codec::Json{{"role", names[i]}, {"file", file}});
  }
  manifest["nets"] = list;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Model load_bundle(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  codec::Json manifest;
  try {
    manifest = codec::Json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), e.byte);
  }
  codec::require_known_keys(manifest, {"format_version", "model", "system", "nets"}, "manifest");
  if (!manifest.contains("model") || !manifest.contains("system") || !manifest.contains("nets")) {
    throw ParseError("manifest: missing model, system or nets", 0);
  }
  Model m;
  m.spec = codec::model_spec_from_json(manifest["model"]);
  m.system = codec::system_from_json(manifest["system"]);
  validate(m.spec);
  const auto specs = net_specs(m.spec);
  const auto names = roles(m.spec.kind);
  const auto& list = manifest["nets"];
  if (!list.is_array() || list.size() != names.size()) {
    throw StructuralError("manifest: " + to_string(m.spec.kind) + " needs " +
                          std::to_string(names.size()) + " nets");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (list[i].value("role", "") != names[i]) {
      throw StructuralError("manifest: net " + std::to_string(i) + " should have role " + names[i]);
    }
    m.nets.push_back(nets::load_checkpoint(dir / list[i].value("file", ""), specs[i]));
  }
  return m;
}

}  // namespace scnn::model
