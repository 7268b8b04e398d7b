#include "cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "run_config.hpp"
#include "scnn/error.hpp"
#include "scnn/eval/eval.hpp"
#include "scnn/io/text.hpp"
#include "scnn/symfit/symfit.hpp"
#include "scnn/systems/dataset.hpp"
#include "scnn/train/train.hpp"

namespace scnn::cli {

namespace fs = std::filesystem;
using codec::Json;

namespace {

constexpr const char* kEcho = "config.echo";
constexpr const char* kCheckpoints = "checkpoints";
constexpr const char* kHistory = "loss_history";
constexpr const char* kEvalDir = "eval";
constexpr const char* kLock = ".lock";

// --- environment and files ---------------------------------------------------

fs::path resolve_out(const std::string& path) {
  fs::path p(path);
  if (p.is_relative()) {
    if (const char* root = std::getenv("SCNN_OUT_ROOT"); root != nullptr && *root != '\0') return fs::path(root) / p;
  }
  return p;
}

int env_workers() {
  const char* w = std::getenv("SCNN_WORKERS");
  if (w == nullptr || *w == '\0') return 1;
  const long long n = io::parse_int(w, 0);
  if (n < 1) throw std::invalid_argument("SCNN_WORKERS must be positive");
  return static_cast<int>(n);
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CliError("io", "cannot write " + path.string());
    out << text;
    if (!out) throw CliError("io", "write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError("io", "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Exclusive ownership of a directory for the duration of a command.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / kLock) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw CliError("locked", dir.string() + " is in use by another command (" + path_.string() + ")");
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

std::string echo_dump(const Json& j) { return j.dump(2) + "\n"; }

// --- gen-data ----------------------------------------------------------------

struct GenArgs {
  std::string system;
  std::uint64_t seed = 0;
  std::string out;
  int n_traj = 100;
  int n_points = 500;
  double t_span = 20.0;
  double split = 0.8;
  int n_particles = 0;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  systems::SystemSpec sys;
  try {
    sys = systems::default_spec(systems::parse_system_kind(a.system), a.n_particles);
  } catch (const std::invalid_argument& e) {
    throw CliError("argument", e.what());
  }
  systems::DatasetOptions opt;
  opt.n_traj = a.n_traj;
  opt.n_points = a.n_points;
  opt.t_span = a.t_span;
  opt.split = a.split;
  opt.seed = a.seed;
  systems::validate(opt);

  const systems::Dataset data = systems::generate_dataset(sys, opt);
  const fs::path path = resolve_out(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ostringstream text;
  systems::write_dataset(data, text);
  write_text(path, text.str());

  double drift = 0.0;
  for (const auto& traj : data.trajectories) {
    const double e0 = systems::hamiltonian_true(sys, traj.front().state);
    for (const auto& s : traj) {
      drift = std::max(drift, std::abs(systems::hamiltonian_true(sys, s.state) - e0) / std::max(std::abs(e0), 1e-8));
    }
  }
  out << "wrote " << path.string() << "\n"
      << "system " << systems::to_string(sys.kind) << " K=" << sys.K() << " seed=" << opt.seed << "\n"
      << "trajectories " << data.trajectories.size() << " (train " << data.train.size() << ", test "
      << data.test.size() << "), points " << opt.n_points << ", dt " << io::format_double(opt.dt()) << "\n"
      << "resampled initial conditions " << data.resampled << "\n"
      << "max relative energy drift " << io::format_double(drift) << "\n";
  return 0;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> sets;
  bool resume = false;
};

void print_row(std::ostream& out, const train::HistoryRow& r) {
  out << "step " << r.step << " total " << io::format_double(r.loss.total) << " l_hnn "
      << io::format_double(r.loss.l_hnn) << " l_poisson " << io::format_double(r.loss.l_poisson) << " l_hqp "
      << io::format_double(r.loss.l_hqp) << "\n";
  out.flush();
}

void write_run(const fs::path& dir, const RunConfig& cfg, const train::TrainState& state) {
  write_text(dir / kEcho, echo_dump(to_json(cfg)));
  train::save_state(state, dir / kCheckpoints);
  std::ostringstream hist;
  train::write_history(state.history, hist);
  write_text(dir / kHistory, hist.str());
}

void check_data(const RunConfig& cfg, const systems::Dataset& data) {
  if (data.system.kind != cfg.system.kind || data.system.K() != cfg.system.K()) {
    throw StructuralError("dataset holds " + systems::to_string(data.system.kind) + " with K=" +
                          std::to_string(data.system.K()) + " but the config describes " +
                          systems::to_string(cfg.system.kind) + " with K=" + std::to_string(cfg.system.K()));
  }
  if (!(data.system == cfg.system)) {
    throw StructuralError("dataset system parameters differ from the config's system section");
  }
  if (data.train.empty()) throw std::invalid_argument("dataset has no training trajectories");
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = resolve_out(a.out);
  Json json;
  if (a.resume) {
    if (!fs::exists(dir / kEcho)) throw CliError("argument", "--resume: " + dir.string() + " is not a run directory");
    json = read_json_file((dir / kEcho).string());
  } else {
    if (a.config.empty()) throw CliError("argument", "--config is required");
    json = read_json_file(a.config);
  }
  for (const auto& s : a.sets) apply_override(json, s);
  const RunConfig cfg = parse_run_config(json, env_workers());
  for (const auto& w : config_warnings(cfg)) err << "warning: " << w << "\n";

  const systems::Dataset data = systems::load_dataset(a.data);
  check_data(cfg, data);
  const auto samples = systems::training_samples(data, cfg.train.first_n);
  out << "training " << model::to_string(cfg.model.kind) << " on " << samples.size() << " samples from "
      << data.train.size() << " trajectories\n"
      << "alpha1 " << io::format_double(cfg.train.weights.alpha1) << " alpha2 "
      << io::format_double(cfg.train.weights.alpha2) << " beta " << io::format_double(cfg.train.weights.beta)
      << "\n";
  const auto progress = [&](const train::TrainState&, const train::HistoryRow& r) { print_row(out, r); };

  if (a.resume) {
    const DirLock lock(dir);
    std::istringstream hist(read_text(dir / kHistory));
    train::TrainState state = train::load_state(dir / kCheckpoints, train::read_history(hist));
    if (!(state.model.spec == cfg.model) || !(state.model.system == cfg.system)) {
      throw StructuralError("checkpoint does not match the run's config.echo");
    }
    if (state.step >= cfg.train.steps) {
      throw CliError("argument", "run is already at step " + std::to_string(state.step) +
                                     "; raise train.steps with --set to continue");
    }
    out << "resuming at step " << state.step << "\n";
    try {
      train::run(state, samples, cfg.train, progress);
    } catch (const train::TrainingError& e) {
      state.model = e.last_finite();
      write_run(dir, cfg, state);
      throw;
    }
    write_run(dir, cfg, state);
    out << "finished at step " << state.step << " (best loss " << io::format_double(state.best_loss) << " at step "
        << state.best_step << ")\n";
    return 0;
  }

  if (fs::exists(dir) && !fs::is_empty(dir)) {
    throw CliError("argument", dir.string() + " already exists; use --resume to continue it");
  }
  // Build in a sibling directory and rename, so failures leave nothing behind.
  const fs::path partial = dir.string() + ".partial";
  if (fs::exists(partial)) throw CliError("locked", partial.string() + " exists (another run in progress?)");
  fs::create_directories(partial);
  std::optional<train::TrainingError> failure;
  try {
    const DirLock lock(partial);
    train::TrainState state = train::initial_state(cfg.model, cfg.system, cfg.train.seed);
    try {
      train::run(state, samples, cfg.train, progress);
    } catch (const train::TrainingError& e) {
      state.model = e.last_finite();
      failure = e;
    }
    write_run(partial, cfg, state);
    if (!failure) {
      out << "finished at step " << state.step << " (best loss " << io::format_double(state.best_loss)
          << " at step " << state.best_step << ")\n";
    }
  } catch (...) {
    std::error_code ec;
    fs::remove_all(partial, ec);
    throw;
  }
  if (fs::exists(dir)) fs::remove(dir);
  fs::rename(partial, dir);
  out << "run directory " << dir.string() << "\n";
  if (failure) {
    throw CliError("training", std::string(failure->what()) + "; last finite checkpoint saved in " +
                                   (dir / kCheckpoints).string());
  }
  return 0;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> models;
  std::string system;
  int n_steps = 100;
  int seeds = 0;
  std::string out;
  std::string data;
  int n_init = 100;
  std::uint64_t init_seed = 0;
};

std::string model_label(const model::Model& m) {
  std::string label = model::to_string(m.spec.kind);
  if (model::has_transform(m.spec.kind)) label += "_n" + std::to_string(m.spec.n_cyclic);
  return label;
}

fs::path bundle_dir(const fs::path& run) {
  if (fs::exists(run / kCheckpoints / "manifest.json")) return run / kCheckpoints;
  return run;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  systems::SystemKind kind;
  try {
    kind = systems::parse_system_kind(a.system);
  } catch (const std::invalid_argument& e) {
    throw CliError("argument", e.what());
  }
  if (a.n_steps < 1) throw CliError("argument", "--n-steps must be positive");
  if (a.n_init < 1) throw CliError("argument", "--n-init must be positive");

  std::vector<std::string> missing;
  for (const auto& name : a.models) {
    if (name != "oracle" && !fs::exists(bundle_dir(resolve_out(name)) / "manifest.json")) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw CliError("missing-model", "no trained model at: " + list);
  }

  // Models outlive the fields that reference them.
  std::vector<std::unique_ptr<model::Model>> loaded;
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<std::string, const model::Model*>>> groups;
  std::optional<systems::SystemSpec> sys;
  bool oracle = false;
  for (const auto& name : a.models) {
    if (name == "oracle") {
      oracle = true;
      continue;
    }
    loaded.push_back(std::make_unique<model::Model>(model::load_bundle(bundle_dir(resolve_out(name)))));
    const model::Model& m = *loaded.back();
    if (m.system.kind != kind) {
      throw StructuralError(name + " was trained on " + systems::to_string(m.system.kind) + ", not " + a.system);
    }
    if (sys && !(*sys == m.system)) throw StructuralError(name + " uses different system parameters");
    sys = m.system;
    const std::string label = model_label(m);
    if (!groups.count(label)) order.push_back(label);
    groups[label].emplace_back(name, &m);
  }

  std::vector<systems::PhaseState> initial;
  double dt = systems::DatasetOptions{}.dt();
  if (!a.data.empty()) {
    const systems::Dataset data = systems::load_dataset(a.data);
    if (data.system.kind != kind) throw StructuralError("--data holds " + systems::to_string(data.system.kind));
    if (sys && !(*sys == data.system)) throw StructuralError("--data system parameters differ from the models'");
    sys = data.system;
    dt = data.dt();
    initial = systems::test_initial_states(data);
    if (initial.empty()) throw CliError("argument", "--data has no test trajectories");
    if (static_cast<int>(initial.size()) > a.n_init) initial.resize(static_cast<std::size_t>(a.n_init));
  } else {
    if (!sys) sys = systems::default_spec(kind);
    initial = symfit::sample_points(*sys, a.n_init, a.init_seed);
  }

  std::vector<eval::Candidate> candidates;
  std::vector<std::vector<std::string>> sources;
  if (oracle) {
    candidates.push_back({"oracle", {integrate::true_batch_field(*sys)}});
    sources.push_back({"oracle"});
  }
  for (const auto& label : order) {
    auto& runs = groups[label];
    if (a.seeds > 0) {
      if (static_cast<int>(runs.size()) < a.seeds) {
        throw CliError("argument", label + " has " + std::to_string(runs.size()) + " runs, --seeds asks for " +
                                       std::to_string(a.seeds));
      }
      runs.resize(static_cast<std::size_t>(a.seeds));
    }
    eval::Candidate c{label, {}};
    std::vector<std::string> src;
    for (const auto& [name, m] : runs) {
      c.seeds.push_back(model::learned_field(*m));
      src.push_back(name);
    }
    candidates.push_back(std::move(c));
    sources.push_back(std::move(src));
  }

  const auto rows = eval::compare(candidates, *sys, initial, dt, a.n_steps);

  fs::path dir;
  if (!a.out.empty()) {
    dir = resolve_out(a.out);
  } else {
    const auto first = std::find_if(a.models.begin(), a.models.end(), [](const std::string& n) { return n != "oracle"; });
    if (first == a.models.end()) throw CliError("argument", "--out is required when only the oracle is evaluated");
    dir = bundle_dir(resolve_out(*first)).parent_path() / kEvalDir;
  }
  fs::create_directories(dir / "trajectories");
  const DirLock lock(dir);
  std::ostringstream report;
  eval::write_report(rows, report);
  write_text(dir / "report.csv", report.str());

  const Eigen::MatrixXd x0 = integrate::pack(initial);
  {
    const auto truth_field = integrate::true_batch_field(*sys);
    std::ostringstream dump;
    eval::write_rollout(*sys, eval::rollout(truth_field, *sys, x0, dt, a.n_steps), truth_field, dt, dump);
    write_text(dir / "trajectories" / "truth.csv", dump.str());
  }
  for (const auto& c : candidates) {
    for (std::size_t s = 0; s < c.seeds.size(); ++s) {
      std::ostringstream dump;
      eval::write_rollout(*sys, eval::rollout(c.seeds[s], *sys, x0, dt, a.n_steps), c.seeds[s], dt, dump);
      write_text(dir / "trajectories" / (c.name + "_seed" + std::to_string(s) + ".csv"), dump.str());
    }
  }

  Json echo;
  echo["system"] = codec::to_json(*sys);
  echo["n_steps"] = a.n_steps;
  echo["n_init"] = initial.size();
  echo["dt"] = dt;
  echo["data"] = a.data;
  echo["init_seed"] = a.data.empty() ? Json(a.init_seed) : Json(nullptr);
  Json models = Json::object();
  for (std::size_t i = 0; i < candidates.size(); ++i) models[candidates[i].name] = sources[i];
  echo["models"] = models;
  write_text(dir / kEcho, echo_dump(echo));

  out << "model,metric,mean,std,n_seeds,n_init,n_steps\n";
  for (const auto& r : rows) {
    out << r.model << "," << r.metric << "," << io::format_double(r.mean) << "," << io::format_double(r.std) << ","
        << r.n_seeds << "," << r.n_init << "," << r.n_steps << "\n";
  }
  out << "wrote " << (dir / "report.csv").string() << "\n";
  return 0;
}

// --- extract -----------------------------------------------------------------

struct ExtractArgs {
  std::string model;
  int degree = 2;
  std::string out;
  int n_points = symfit::kDefaultFitPoints;
  std::uint64_t seed = 0;
  int n_traj = 20;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  const fs::path run = resolve_out(a.model);
  if (!fs::exists(bundle_dir(run) / "manifest.json")) throw CliError("missing-model", "no trained model at: " + a.model);
  const model::Model m = model::load_bundle(bundle_dir(run));
  if (!model::has_transform(m.spec.kind) || m.spec.n_cyclic == 0) {
    throw CliError("no-cyclic", "no cyclic coordinates in " + model::to_string(m.spec.kind) + " model " + a.model);
  }
  if (a.degree < 0) throw CliError("argument", "--degree must be >= 0");
  if (a.n_points < 1 || a.n_traj < 1) throw CliError("argument", "--n-points and --n-traj must be positive");

  const symfit::MonomialBasis basis(m.spec.K, a.degree);
  const auto points = symfit::sample_points(m.system, a.n_points, a.seed);
  const auto known = systems::conserved_true(m.system);
  const int K = m.spec.K;

  std::ostringstream report;
  for (int i = 0; i < m.spec.n_cyclic; ++i) {
    const symfit::BatchFunction momentum = [&m, K, i](const std::vector<systems::PhaseState>& states) {
      return Eigen::VectorXd(model::latent_coordinates(m, integrate::pack(states)).row(K + i).transpose());
    };
    const std::string name = "P_" + std::to_string(i + 1);
    const auto fit = symfit::fit_polynomial(momentum, points, basis, name);
    const double span = known.empty() ? std::numeric_limits<double>::quiet_NaN() : symfit::match_span(fit, known);
    const double drift = symfit::check_conservation(momentum, m.system, a.n_traj, a.seed);
    report << "# conservation_drift=" << io::format_double(drift) << "\n";
    symfit::write_fit(fit, span, report);
    report << "\n";
    out << name << ": r2 " << io::format_fixed(fit.r2, 4) << " span " << io::format_fixed(span, 4) << " drift "
        << io::format_double(drift) << "  " << name << " = " << fit.display() << "\n";
  }
  const fs::path path = resolve_out(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, report.str());
  Json echo{{"model", a.model},          {"degree", a.degree}, {"n_points", a.n_points},
            {"seed", a.seed},            {"n_traj", a.n_traj}, {"system", codec::to_json(m.system)},
            {"spec", codec::to_json(m.spec)}};
  write_text(path.string() + ".echo", echo_dump(echo));
  out << "wrote " << path.string() << "\n";
  return 0;
}

// --- dispatch ----------------------------------------------------------------

int report(std::ostream& err, const std::string& category, const std::string& what, int status = 1) {
  err << "error: " << category << ": " << what << "\n";
  return status;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Symmetry control networks: data generation, training, evaluation and extraction", "scnn"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a trajectory dataset");
  g->add_option("--system", gen.system, "System name")->required();
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--out", gen.out, "Output file")->required();
  g->add_option("--n-traj", gen.n_traj, "Number of trajectories");
  g->add_option("--n-points", gen.n_points, "Points per trajectory");
  g->add_option("--t-span", gen.t_span, "Time span per trajectory");
  g->add_option("--split", gen.split, "Training fraction");
  g->add_option("--n-particles", gen.n_particles, "Particles (spring system)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Run config (JSON)");
  t->add_option("--data", tr.data, "Dataset file")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--set", tr.sets, "Override a config field, key=value");
  t->add_flag("--resume", tr.resume, "Continue the run in --out");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compare trained models on rollouts");
  e->add_option("--models", ev.models, "Run directories, or 'oracle'")->required();
  e->add_option("--system", ev.system, "System name")->required();
  e->add_option("--n-steps", ev.n_steps, "Rollout steps");
  e->add_option("--seeds", ev.seeds, "Runs per model to use (default all)");
  e->add_option("--out", ev.out, "Output directory (default <first run>/eval)");
  e->add_option("--data", ev.data, "Dataset whose test split gives the initial states");
  e->add_option("--n-init", ev.n_init, "Initial states");
  e->add_option("--init-seed", ev.init_seed, "Seed for sampled initial states without --data");

  ExtractArgs ex;
  auto* x = app.add_subcommand("extract", "Fit polynomials to learned cyclic momenta");
  x->add_option("--model", ex.model, "Run directory")->required();
  x->add_option("--degree", ex.degree, "Maximum polynomial degree");
  x->add_option("--out", ex.out, "Report file")->required();
  x->add_option("--n-points", ex.n_points, "Fit sample size");
  x->add_option("--seed", ex.seed, "Sample seed");
  x->add_option("--n-traj", ex.n_traj, "Trajectories for the conservation check");

  std::vector<std::string> argv_store{"scnn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& pe) {
    return report(err, "argument", pe.what(), 2);
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, out);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_eval(ev, out);
    if (x->parsed()) return cmd_extract(ex, out);
  } catch (const CliError& ce) {
    return report(err, ce.category(), ce.what(), ce.category() == "argument" ? 2 : 1);
  } catch (const train::TrainingError& te) {
    return report(err, "training", te.what());
  } catch (const ParseError& pe) {
    return report(err, "parse", pe.what());
  } catch (const StructuralError& se) {
    return report(err, "dimension", se.what());
  } catch (const SamplerError& se) {
    return report(err, "sampler", se.what());
  } catch (const DomainError& de) {
    return report(err, "domain", de.what());
  } catch (const std::invalid_argument& ia) {
    return report(err, "argument", ia.what(), 2);
  } catch (const fs::filesystem_error& fe) {
    return report(err, "io", fe.what());
  } catch (const std::exception& ex2) {
    return report(err, "internal", ex2.what());
  }
  return report(err, "argument", "no command given", 2);
}

}  // namespace scnn::cli
