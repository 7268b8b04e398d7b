#include "scnn/train/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"
#include "scnn/error.hpp"
#include "scnn/io/text.hpp"

namespace scnn::train {

namespace {

constexpr int kPaperFirstSamples = 50;

void accumulate(losses::LossReport& into, const losses::LossReport& r) {
  into.l_hnn += r.l_hnn;
  into.l_poisson += r.l_poisson;
  into.l_hqp += r.l_hqp;
  into.total += r.total;
}

losses::LossReport scaled(losses::LossReport r, double f) {
  r.l_hnn *= f;
  r.l_poisson *= f;
  r.l_hqp *= f;
  r.total *= f;
  return r;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (c.steps < 1) throw std::invalid_argument("steps must be positive");
  if (c.log_every < 1) throw std::invalid_argument("log_every must be positive");
  if (c.first_n && *c.first_n < 1) throw std::invalid_argument("first_n must be positive");
  if (c.workers < 1) throw std::invalid_argument("workers must be positive");
}

TrainConfig default_config(const model::ModelSpec& spec, const systems::SystemSpec& sys) {
  TrainConfig c;
  c.weights = losses::default_weights(spec);
  if (sys.kind == systems::SystemKind::TwoBodyGrav || sys.kind == systems::SystemKind::SpringNBody) {
    c.first_n = kPaperFirstSamples;
  }
  return c;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr) {
  if (grads.size() != params.size()) throw StructuralError("adam_step: gradient and parameter sizes differ");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  if (state.m.size() != params.size()) throw StructuralError("adam_step: optimizer state has the wrong size");
  ++state.t;
  state.m = kAdamBeta1 * state.m + (1.0 - kAdamBeta1) * grads;
  state.v = kAdamBeta2 * state.v + (1.0 - kAdamBeta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + kAdamEps);
}

TrainState initial_state(const model::ModelSpec& spec, const systems::SystemSpec& sys, std::uint64_t seed) {
  TrainState s;
  s.model = model::init_model(spec, sys, seed);
  s.best = s.model;
  return s;
}

std::vector<std::size_t> batch_indices(std::size_t n_samples, int batch_size, std::uint64_t seed, int step) {
  if (n_samples == 0) throw std::invalid_argument("no training samples");
  const auto b = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n_samples);
  const std::size_t per_epoch = n_samples / b;
  const auto epoch = static_cast<std::uint64_t>(step) / per_epoch;
  const std::size_t slot = static_cast<std::size_t>(step) % per_epoch;
  std::vector<std::size_t> perm(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) perm[i] = i;
  std::mt19937_64 rng(seed ^ ((epoch + 1) * 0x9E3779B97F4A7C15ULL));
  for (std::size_t i = n_samples; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  return {perm.begin() + static_cast<std::ptrdiff_t>(slot * b),
          perm.begin() + static_cast<std::ptrdiff_t>((slot + 1) * b)};
}

void run(TrainState& state, std::span<const systems::Sample> samples, const TrainConfig& config,
         const Progress& progress) {
  validate(config);
  (void)losses::validate(config.weights, state.model.spec);
  if (samples.empty()) throw std::invalid_argument("no training samples");
  if (samples.front().state.q.size() != state.model.spec.K) {
    throw StructuralError("training data has K=" + std::to_string(samples.front().state.q.size()) +
                          " but the model expects K=" + std::to_string(state.model.spec.K));
  }
  Eigen::VectorXd params = model::flatten(state.model);
  losses::LossReport interval;
  int in_interval = 0;
  auto flush = [&] {
    if (in_interval == 0) return;
    const HistoryRow row{state.step, scaled(interval, 1.0 / in_interval)};
    state.history.push_back(row);
    if (progress) progress(state, row);
    interval = {};
    in_interval = 0;
  };
  while (state.step < config.steps) {
    const auto idx = batch_indices(samples.size(), config.batch_size, config.seed, state.step);
    const auto batch = losses::make_batch(samples, idx);
    const auto ev = losses::evaluate(state.model, batch, config.weights, true, config.workers);
    if (!std::isfinite(ev.report.total) || !ev.gradient.allFinite()) {
      throw TrainingError("non-finite loss at step " + std::to_string(state.step), state.step, state.model);
    }
    if (ev.report.total < state.best_loss) {
      state.best_loss = ev.report.total;
      state.best_step = state.step;
      state.best = state.model;
    }
    adam_step(params, ev.gradient, state.adam, config.learning_rate);
    model::unflatten(std::span<const double>(params.data(), static_cast<std::size_t>(params.size())), state.model);
    ++state.step;
    accumulate(interval, ev.report);
    ++in_interval;
    if (state.step % config.log_every == 0) flush();
  }
  flush();
}

TrainState train(const model::ModelSpec& spec, const systems::Dataset& data, const TrainConfig& config,
                 const Progress& progress) {
  if (spec.K != data.system.K()) {
    throw StructuralError("model K=" + std::to_string(spec.K) + " does not match dataset K=" +
                          std::to_string(data.system.K()));
  }
  TrainState state = initial_state(spec, data.system, config.seed);
  const auto samples = systems::training_samples(data, config.first_n);
  run(state, samples, config, progress);
  return state;
}

void write_history(const std::vector<HistoryRow>& rows, std::ostream& out) {
  out << "step,l_hnn,l_poisson,l_hqp,total\n";
  for (const auto& r : rows) {
    out << r.step << "," << io::format_double(r.loss.l_hnn) << "," << io::format_double(r.loss.l_poisson) << ","
        << io::format_double(r.loss.l_hqp) << "," << io::format_double(r.loss.total) << "\n";
  }
}

std::vector<HistoryRow> read_history(std::istream& in) {
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || io::trim(line) != "step,l_hnn,l_poisson,l_hqp,total") {
    throw ParseError("loss history: bad header", 0);
  }
  offset += line.size() + 1;
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (!io::trim(line).empty()) {
      const auto f = io::split(line);
      if (f.size() != 5) throw ParseError("loss history: expected 5 fields", offset);
      HistoryRow r;
      r.step = static_cast<int>(io::parse_int(f[0], offset));
      r.loss.l_hnn = io::parse_double(f[1], offset);
      r.loss.l_poisson = io::parse_double(f[2], offset);
      r.loss.l_hqp = io::parse_double(f[3], offset);
      r.loss.total = io::parse_double(f[4], offset);
      rows.push_back(r);
    }
    offset += line.size() + 1;
  }
  return rows;
}

void save_state(const TrainState& state, const std::filesystem::path& dir) {
  model::save_bundle(state.model, dir);
  model::save_bundle(state.best, dir / "best");
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["step"] = state.step;
  j["t"] = state.adam.t;
  j["best_step"] = state.best_step;
  j["best_loss"] = std::isfinite(state.best_loss) ? nlohmann::ordered_json(state.best_loss) : nullptr;
  j["m"] = std::vector<double>(state.adam.m.begin(), state.adam.m.end());
  j["v"] = std::vector<double>(state.adam.v.begin(), state.adam.v.end());
  std::ofstream out(dir / "optimizer.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "optimizer.json").string());
  out << j.dump() << "\n";
}

TrainState load_state(const std::filesystem::path& dir, std::vector<HistoryRow> history) {
  TrainState s;
  s.model = model::load_bundle(dir);
  s.best = std::filesystem::exists(dir / "best") ? model::load_bundle(dir / "best") : s.model;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "optimizer.json"));
    s.step = j.at("step").get<int>();
    s.adam.t = j.at("t").get<long>();
    s.best_step = j.at("best_step").get<int>();
    s.best_loss = j.at("best_loss").is_null() ? std::numeric_limits<double>::infinity()
                                              : j.at("best_loss").get<double>();
    const auto m = j.at("m").get<std::vector<double>>();
    const auto v = j.at("v").get<std::vector<double>>();
    s.adam.m = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    s.adam.v = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("optimizer.json: ") + e.what(), e.byte);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("optimizer.json: ") + e.what(), 0);
  }
  const auto n = static_cast<Eigen::Index>(model::parameter_count(s.model));
  if ((s.adam.m.size() != 0 || s.adam.t != 0) && (s.adam.m.size() != n || s.adam.v.size() != n)) {
    throw StructuralError("optimizer state does not match the model's parameter count");
  }
  if (!history.empty() && history.back().step != s.step) {
    throw StructuralError("loss history ends at step " + std::to_string(history.back().step) +
                          " but the checkpoint is at step " + std::to_string(s.step));
  }
  s.history = std::move(history);
  return s;
}

}  // namespace scnn::train
