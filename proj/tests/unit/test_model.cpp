#include "doctest.h"
#include "scnn/error.hpp"
#include "scnn/model/model.hpp"
#include "support.hpp"

using namespace scnn;
using model::ModelKind;
using systems::SystemKind;

namespace {

model::ModelSpec make_spec(ModelKind kind, int K, int n = 0, int hidden = 16) {
  model::ModelSpec s;
  s.kind = kind;
  s.K = K;
  s.n_cyclic = n;
  s.hidden_dim = hidden;
  return s;
}

// Model with biases set so that nothing is accidentally symmetric.
model::Model random_model(model::ModelSpec spec, const systems::SystemSpec& sys, std::uint64_t seed) {
  auto m = model::init_model(spec, sys, seed);
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (auto& net : m.nets)
    for (auto& l : net.layers)
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = u(rng);
  return m;
}

nets::MLPParams identity_net(int dim) {
  auto p = nets::zeros({dim, dim, 1, 0});
  p.layers[0].weight = Eigen::MatrixXd::Identity(dim, dim);
  return p;
}

struct Leaves {
  std::vector<ad::DiffScalar> q, p, all;
};

Leaves place(ad::Tape& t, const systems::PhaseState& s) {
  Leaves l;
  for (int i = 0; i < s.K(); ++i) l.q.push_back(t.var(s.q[i]));
  for (int i = 0; i < s.K(); ++i) l.p.push_back(t.var(s.p[i]));
  l.all = l.q;
  l.all.insert(l.all.end(), l.p.begin(), l.p.end());
  return l;
}

}  // namespace

TEST_CASE("kinds and validation") {
  for (auto k : {ModelKind::Baseline, ModelKind::Hnn, ModelKind::HnnLarge, ModelKind::Scnn, ModelKind::ScnnConstraint}) {
    CHECK(model::parse_model_kind(model::to_string(k)) == k);
  }
  CHECK_THROWS_AS(model::parse_model_kind("scnn2"), std::invalid_argument);
  CHECK_THROWS_AS(model::validate(make_spec(ModelKind::Hnn, 2, 1)), StructuralError);
  CHECK_THROWS_AS(model::validate(make_spec(ModelKind::Scnn, 2, 3)), StructuralError);
  CHECK_THROWS_AS(model::validate(make_spec(ModelKind::ScnnConstraint, 2, 1)), StructuralError);
  auto c = make_spec(ModelKind::ScnnConstraint, 2, 1);
  c.constraints = {"L", "L"};
  CHECK_THROWS_AS(model::validate(c), StructuralError);
  c.constraints = {"P_x"};
  CHECK_THROWS_AS(model::init_model(c, systems::default_spec(SystemKind::Magnetic), 0), std::invalid_argument);
  CHECK_THROWS_AS(model::init_model(make_spec(ModelKind::Hnn, 4), systems::default_spec(SystemKind::Magnetic), 0),
                  StructuralError);
}

TEST_CASE("network shapes") {
  auto s = make_spec(ModelKind::Scnn, 4, 3, 200);
  CHECK(s.hamiltonian_spec().input_dim == 5);
  CHECK(s.transform_spec().input_dim == 8);
  CHECK(s.transform_spec().output_dim == 8);
  CHECK(make_spec(ModelKind::Hnn, 4).hamiltonian_spec().input_dim == 8);
  CHECK(make_spec(ModelKind::HnnLarge, 4).hamiltonian_spec().hidden_layers == 5);
  const auto sys = systems::default_spec(SystemKind::TwoBodyGrav);
  CHECK(model::init_model(make_spec(ModelKind::Hnn, 4, 0, 200), sys, 0).nets.size() == 1);
  CHECK(model::parameter_count(model::init_model(make_spec(ModelKind::Hnn, 4, 0, 200), sys, 0)) == 42201);
  CHECK(model::init_model(s, sys, 0).nets.size() == 2);
}

TEST_CASE("identity transform") {
  const auto sys = systems::default_spec(SystemKind::TwoBodyGrav);
  auto m = random_model(make_spec(ModelKind::Scnn, 4, 2), sys, 1);
  m.nets[0] = identity_net(8);
  for (const auto& s : testing::random_states(sys, 5, 2)) {
    ad::Tape t;
    const auto l = place(t, s);
    const auto c = model::ScalarModel(t, m, false).transform(l.q, l.p);
    for (int i = 0; i < 4; ++i) {
      CHECK(c.Q[static_cast<std::size_t>(i)].value() == s.q[i]);
      CHECK(c.P[static_cast<std::size_t>(i)].value() == s.p[i]);
    }
    const Eigen::MatrixXd lat = model::latent_coordinates(m, integrate::pack(s));
    CHECK((lat.col(0) - integrate::pack(s)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("transform requires a transform kind") {
  const auto sys = systems::default_spec(SystemKind::Magnetic);
  const auto m = model::init_model(make_spec(ModelKind::Hnn, 2), sys, 0);
  ad::Tape t;
  const auto l = place(t, testing::make_state({0.1, 0.2}, {0.3, 0.4}));
  CHECK_THROWS_AS(model::ScalarModel(t, m, false).transform(l.q, l.p), StructuralError);
  CHECK_THROWS_AS(model::latent_coordinates(m, Eigen::MatrixXd::Zero(4, 1)), StructuralError);
}

TEST_CASE("constraint momenta") {
  const auto sys = systems::default_spec(SystemKind::SphericalPendulum);
  auto spec = make_spec(ModelKind::ScnnConstraint, 2, 1);
  spec.constraints = {"L"};
  const auto m = random_model(spec, sys, 3);
  ad::Tape t;
  const auto l = place(t, testing::make_state({1, 0}, {0, 1}));
  const auto c = model::ScalarModel(t, m, false).transform(l.q, l.p);
  CHECK(c.P[0].value() == 1.0);
  CHECK(t.grad(c.P[0], {l.q[0]})[0].value() == 1.0);

  const auto L = systems::conserved_by_name(sys, "L");
  const auto states = testing::random_states(sys, 50, 4);
  const Eigen::MatrixXd lat = model::latent_coordinates(m, integrate::pack(states));
  for (std::size_t i = 0; i < states.size(); ++i) CHECK(std::abs(lat(2, static_cast<Eigen::Index>(i)) - L(states[i])) < 1e-15);
}

TEST_CASE("fully cyclic H ignores every Q") {
  const auto sys = systems::default_spec(SystemKind::SphericalPendulum);
  const auto m = random_model(make_spec(ModelKind::Scnn, 2, 2), sys, 5);
  CHECK(m.hamiltonian_net().spec.input_dim == 2);
  for (const auto& s : testing::random_states(sys, 5, 6)) {
    ad::Tape t;
    const auto l = place(t, s);
    const model::ScalarModel sm(t, m, false);
    const auto c = sm.transform(l.q, l.p);
    const auto g = t.grad(sm.latent_hamiltonian(c), c.Q);
    for (const auto& d : g) CHECK(d.value() == 0.0);
  }
}

TEST_CASE("linear Hamiltonian gives the constant field") {
  const auto sys = systems::default_spec(SystemKind::Magnetic);
  auto m = model::init_model(make_spec(ModelKind::Hnn, 2), sys, 0);
  m.nets[0] = nets::zeros({4, 1, 1, 0});
  m.nets[0].layers[0].weight << 0.5, -1.0, 2.0, 0.25;  // H = 0.5 q1 - q2 + 2 p1 + 0.25 p2
  const auto f = model::vector_field_learned(m, testing::make_state({0.3, 0.1}, {-0.2, 0.7}));
  CHECK(f.q[0] == 2.0);
  CHECK(f.q[1] == 0.25);
  CHECK(f.p[0] == -0.5);
  CHECK(f.p[1] == 1.0);
}

TEST_CASE("scnn with identity transform reproduces hnn") {
  const auto sys = systems::default_spec(SystemKind::TwoBodyGrav);
  const auto hnn = random_model(make_spec(ModelKind::Hnn, 4), sys, 7);
  auto scnn = random_model(make_spec(ModelKind::Scnn, 4, 0), sys, 8);
  scnn.nets[0] = identity_net(8);
  // H_phi input order is (P, Q) for the scnn, (q, p) for the hnn.
  scnn.nets[1] = hnn.nets[0];
  auto& W = scnn.nets[1].layers[0].weight;
  W.leftCols(4) = hnn.nets[0].layers[0].weight.rightCols(4);
  W.rightCols(4) = hnn.nets[0].layers[0].weight.leftCols(4);
  const auto states = testing::random_states(sys, 20, 9);
  const Eigen::MatrixXd x = integrate::pack(states);
  CHECK((model::hamiltonian_batch(scnn, x) - model::hamiltonian_batch(hnn, x)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((model::vector_field_batch(scnn, x) - model::vector_field_batch(hnn, x)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scalar and batched fields agree for every kind") {
  const auto sys = systems::default_spec(SystemKind::TwoBodyGrav);
  std::vector<model::ModelSpec> specs{make_spec(ModelKind::Baseline, 4), make_spec(ModelKind::Hnn, 4),
                                      make_spec(ModelKind::HnnLarge, 4), make_spec(ModelKind::Scnn, 4, 2)};
  auto c = make_spec(ModelKind::ScnnConstraint, 4, 3);
  c.constraints = {"L", "P_x"};
  specs.push_back(c);
  const auto states = testing::random_states(sys, 8, 10);
  for (const auto& spec : specs) {
    const auto m = random_model(spec, sys, 11);
    const Eigen::MatrixXd fb = model::vector_field_batch(m, integrate::pack(states));
    for (std::size_t i = 0; i < states.size(); ++i) {
      const auto fs = integrate::pack(model::vector_field_scalar(m, states[i]));
      CHECK((fs - fb.col(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("learned fields are tangent to their energy and match finite differences") {
  const auto sys = systems::default_spec(SystemKind::SphericalPendulum);
  std::vector<model::ModelSpec> specs{make_spec(ModelKind::Hnn, 2), make_spec(ModelKind::Scnn, 2, 1),
                                      make_spec(ModelKind::Scnn, 2, 2)};
  auto c = make_spec(ModelKind::ScnnConstraint, 2, 2);
  c.constraints = {"L"};
  specs.push_back(c);
  const auto states = testing::random_states(sys, 50, 12);
  for (const auto& spec : specs) {
    const auto m = random_model(spec, sys, 13);
    const Eigen::MatrixXd x = integrate::pack(states);
    const Eigen::MatrixXd f = model::vector_field_batch(m, x);
    for (Eigen::Index col = 0; col < x.cols(); ++col) {
      Eigen::VectorXd grad(4);
      for (int r = 0; r < 4; ++r) {
        const double h = 1e-6;
        Eigen::MatrixXd xp = x.col(col), xm = x.col(col);
        xp(r, 0) += h;
        xm(r, 0) -= h;
        grad[r] = (model::hamiltonian_batch(m, xp)(0, 0) - model::hamiltonian_batch(m, xm)(0, 0)) / (2 * h);
      }
      // field = (dH/dp, -dH/dq)
      for (int i = 0; i < 2; ++i) {
        CHECK(testing::rel_err(f(i, col), grad[2 + i]) < 1e-6);
        CHECK(testing::rel_err(f(2 + i, col), -grad[i]) < 1e-6);
      }
      // Exact tangency with the autodiff gradient.
      ad::Tape t;
      const auto l = place(t, states[static_cast<std::size_t>(col)]);
      const auto g = t.grad(model::ScalarModel(t, m, false).hamiltonian(l.q, l.p), l.all);
      double dot = 0.0;
      for (int r = 0; r < 4; ++r) dot += g[static_cast<std::size_t>(r)].value() * f(r, col);
      CHECK(std::abs(dot) < 1e-10);
    }
  }
}

TEST_CASE("poisson bracket") {
  ad::Tape t;
  const auto l = place(t, testing::make_state({0.3, -0.4}, {0.2, 0.5}));
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double b = model::poisson_bracket(l.q[static_cast<std::size_t>(i)], l.p[static_cast<std::size_t>(j)], l.q, l.p).value();
      CHECK(b == (i == j ? 1.0 : 0.0));
    }
  }
  const auto sys = systems::default_spec(SystemKind::SphericalPendulum);
  const auto L = systems::conserved_by_name(sys, "L");
  for (const auto& s : testing::random_states(sys, 10, 14)) {
    ad::Tape tt;
    const auto ls = place(tt, s);
    const auto H = systems::hamiltonian<ad::DiffScalar>(sys, ls.q, ls.p);
    const auto Lv = L.eval_ad(ls.q, ls.p);
    CHECK(std::abs(model::poisson_bracket(Lv, H, ls.q, ls.p).value()) < 1e-10);
    const auto f = ls.q[0] * ls.p[1] * ls.p[1] + sin(ls.q[1]);
    const auto b1 = model::poisson_bracket(f, H, ls.q, ls.p).value();
    const auto b2 = model::poisson_bracket(H, f, ls.q, ls.p).value();
    CHECK(b1 == doctest::Approx(-b2).epsilon(1e-14));
    // The bracket is itself differentiable.
    CHECK(std::isfinite(tt.grad(model::poisson_bracket(f, H, ls.q, ls.p), ls.all)[0].value()));
  }
  ad::Tape other;
  const auto x = other.var(1.0);
  CHECK_THROWS_AS(model::poisson_bracket(l.q[0], x, l.q, l.p), StructuralError);
}

TEST_CASE("flatten and bundles round trip") {
  const auto sys = systems::default_spec(SystemKind::Magnetic);
  auto spec = make_spec(ModelKind::ScnnConstraint, 2, 2);
  spec.constraints = {"L"};
  const auto m = random_model(spec, sys, 15);
  const Eigen::VectorXd flat = model::flatten(m);
  CHECK(static_cast<std::size_t>(flat.size()) == model::parameter_count(m));
  auto z = model::init_model(spec, sys, 99);
  model::unflatten(std::span<const double>(flat.data(), static_cast<std::size_t>(flat.size())), z);
  CHECK(model::flatten(z) == flat);

  const auto dir = testing::scratch_dir("bundle");
  model::save_bundle(m, dir / "b");
  const auto back = model::load_bundle(dir / "b");
  CHECK(back.spec == m.spec);
  CHECK(back.system == m.system);
  CHECK(model::flatten(back) == flat);

  // A hamiltonian.json from a different architecture must be rejected.
  model::save_bundle(model::init_model(make_spec(ModelKind::Scnn, 2, 1), sys, 0), dir / "other");
  std::filesystem::copy_file(dir / "other" / "hamiltonian.json", dir / "b" / "hamiltonian.json",
                             std::filesystem::copy_options::overwrite_existing);
  CHECK_THROWS_AS(model::load_bundle(dir / "b"), StructuralError);
}
