#include "scnn/systems/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "scnn/error.hpp"
#include "scnn/integrate/rk4.hpp"
#include "scnn/io/text.hpp"

namespace scnn::systems {

namespace {

std::vector<Sample> integrate_trajectory(const SystemSpec& sys, const PhaseState& s0,
                                         const DatasetOptions& opt) {
  const auto field = integrate::true_field(sys);
  const auto mask = sys.angular();
  const double dt = opt.dt();
  std::vector<Sample> traj;
  traj.reserve(static_cast<std::size_t>(opt.n_points));
  PhaseState s = s0;
  wrap(sys, s);
  for (int j = 0; j < opt.n_points; ++j) {
    if (j > 0) s = integrate::rk4_step(field, s, dt, mask);
    if (!in_domain(sys, s)) throw DomainError("trajectory left the domain");
    const PhaseState d = vector_field_true(sys, s);
    traj.push_back(Sample{j * dt, s, d.q, d.p});
  }
  return traj;
}

// Fisher-Yates on raw engine output so the permutation only depends on the
// standardised mt19937_64 sequence.
void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::string header_line(const Dataset& d) {
  const SystemSpec& s = d.system;
  std::ostringstream o;
  o << "# system=" << to_string(s.kind) << " n_particles=" << s.n_particles << " dim=" << s.dim
    << " k=" << io::format_double(s.k) << " m=" << io::format_double(s.m)
    << " g=" << io::format_double(s.g) << " l=" << io::format_double(s.l)
    << " charge=" << io::format_double(s.charge) << " field=" << io::format_double(s.field)
    << " l1=" << io::format_double(s.l1) << " l2=" << io::format_double(s.l2)
    << " m1=" << io::format_double(s.m1) << " m2=" << io::format_double(s.m2)
    << " n_traj=" << d.options.n_traj << " n_points=" << d.options.n_points
    << " t_span=" << io::format_double(d.options.t_span)
    << " split=" << io::format_double(d.options.split) << " seed=" << d.options.seed;
  return o.str();
}

}  // namespace

bool Dataset::is_test(std::size_t traj) const {
  return std::find(test.begin(), test.end(), traj) != test.end();
}

void validate(const DatasetOptions& o) {
  if (o.n_points < 2) throw std::invalid_argument("n_points must be at least 2");
  if (o.n_traj < 1) throw std::invalid_argument("n_traj must be at least 1");
  if (!(o.t_span > 0.0)) throw std::invalid_argument("t_span must be positive");
  if (!(o.split >= 0.0 && o.split <= 1.0)) throw std::invalid_argument("split must lie in [0, 1]");
}

Dataset generate_dataset(const SystemSpec& sys, const DatasetOptions& options) {
  validate(sys);
  validate(options);
  Dataset data{sys, options, {}, {}, {}, 0};
  data.trajectories.resize(static_cast<std::size_t>(options.n_traj));
  for (int i = 0; i < options.n_traj; ++i) {
    std::mt19937_64 rng(options.seed ^ static_cast<std::uint64_t>(i));
    for (int attempt = 0;; ++attempt) {
      const PhaseState s0 = sample_initial(sys, rng);
      try {
        data.trajectories[static_cast<std::size_t>(i)] = integrate_trajectory(sys, s0, options);
        break;
      } catch (const DomainError& e) {
        if (attempt + 1 >= kMaxSamplerTries) throw SamplerError("trajectory resampling budget exhausted");
        ++data.resampled;
        std::clog << "generate_dataset: trajectory " << i << " resampled (" << e.what() << ")\n";
      }
    }
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(options.n_traj));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 split_rng(options.seed);
  shuffle(order, split_rng);
  const auto n_train = static_cast<std::size_t>(std::llround(options.split * options.n_traj));
  data.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.test.begin(), data.test.end());
  return data;
}

void write_dataset(const Dataset& data, std::ostream& out) {
  const int K = data.system.K();
  out << header_line(data) << "\n";
  out << "traj_id,split,t";
  for (const char* prefix : {"q_", "p_", "dq_", "dp_"}) {
    for (int i = 1; i <= K; ++i) out << "," << prefix << i;
  }
  out << "\n";
  for (std::size_t tr = 0; tr < data.trajectories.size(); ++tr) {
    const char* split = data.is_test(tr) ? "test" : "train";
    for (const auto& s : data.trajectories[tr]) {
      out << tr << "," << split << "," << io::format_double(s.t);
      for (const Eigen::VectorXd* v : {&s.state.q, &s.state.p, &s.dq_dt, &s.dp_dt}) {
        for (Eigen::Index i = 0; i < v->size(); ++i) out << "," << io::format_double((*v)[i]);
      }
      out << "\n";
    }
  }
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || !line.starts_with("#")) {
    throw ParseError("dataset: missing '#' spec line", offset);
  }
  std::map<std::string, std::string> kv;
  {
    std::istringstream fields(line.substr(1));
    std::string tok;
    while (fields >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ParseError("dataset: bad spec token '" + tok + "'", offset);
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("dataset: spec line lacks '") + key + "'", 0);
    return it->second;
  };
  auto num = [&](const char* key) { return io::parse_double(need(key), 0); };
  auto integer = [&](const char* key) { return io::parse_int(need(key), 0); };

  Dataset data;
  SystemSpec& s = data.system;
  try {
    s.kind = parse_system_kind(need("system"));
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("dataset: ") + e.what(), 0);
  }
  s.n_particles = static_cast<int>(integer("n_particles"));
  s.dim = static_cast<int>(integer("dim"));
  s.k = num("k");
  s.m = num("m");
  s.g = num("g");
  s.l = num("l");
  s.charge = num("charge");
  s.field = num("field");
  s.l1 = num("l1");
  s.l2 = num("l2");
  s.m1 = num("m1");
  s.m2 = num("m2");
  validate(s);
  data.options.n_traj = static_cast<int>(integer("n_traj"));
  data.options.n_points = static_cast<int>(integer("n_points"));
  data.options.t_span = num("t_span");
  data.options.split = num("split");
  data.options.seed = static_cast<std::uint64_t>(std::stoull(need("seed")));
  validate(data.options);
  offset += line.size() + 1;

  const int K = s.K();
  if (!std::getline(in, line)) throw ParseError("dataset: missing header row", offset);
  const auto columns = io::split(line);
  if (columns.size() != static_cast<std::size_t>(3 + 4 * K) || columns[0] != "traj_id") {
    throw ParseError("dataset: header does not match a K=" + std::to_string(K) + " system", offset);
  }
  offset += line.size() + 1;

  data.trajectories.resize(static_cast<std::size_t>(data.options.n_traj));
  std::vector<int> split_of(data.trajectories.size(), -1);
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const auto f = io::split(line);
    if (f.size() != columns.size()) throw ParseError("dataset: wrong field count", offset);
    const auto tr = io::parse_int(f[0], offset);
    if (tr < 0 || tr >= data.options.n_traj) throw ParseError("dataset: traj_id out of range", offset);
    const int is_test = f[1] == "test" ? 1 : (f[1] == "train" ? 0 : -1);
    if (is_test < 0) throw ParseError("dataset: split must be train or test", offset);
    auto& prev = split_of[static_cast<std::size_t>(tr)];
    if (prev >= 0 && prev != is_test) throw ParseError("dataset: trajectory in both splits", offset);
    prev = is_test;

    Sample smp;
    smp.t = io::parse_double(f[2], offset);
    smp.state.q.resize(K);
    smp.state.p.resize(K);
    smp.dq_dt.resize(K);
    smp.dp_dt.resize(K);
    std::size_t c = 3;
    for (Eigen::VectorXd* v : {&smp.state.q, &smp.state.p, &smp.dq_dt, &smp.dp_dt}) {
      for (int i = 0; i < K; ++i) (*v)[i] = io::parse_double(f[c++], offset);
    }
    data.trajectories[static_cast<std::size_t>(tr)].push_back(std::move(smp));
    offset += line.size() + 1;
  }
  for (std::size_t tr = 0; tr < data.trajectories.size(); ++tr) {
    if (split_of[tr] < 0) throw ParseError("dataset: trajectory " + std::to_string(tr) + " has no rows", offset);
    (split_of[tr] ? data.test : data.train).push_back(tr);
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dataset(data, out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_dataset(in);
}

std::vector<Sample> training_samples(const Dataset& data, std::optional<int> first_n) {
  std::vector<Sample> out;
  for (const auto tr : data.train) {
    const auto& traj = data.trajectories[tr];
    const std::size_t n = first_n ? std::min<std::size_t>(traj.size(), static_cast<std::size_t>(*first_n))
                                  : traj.size();
    out.insert(out.end(), traj.begin(), traj.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

std::vector<PhaseState> test_initial_states(const Dataset& data) {
  std::vector<PhaseState> out;
  for (const auto tr : data.test) out.push_back(data.trajectories[tr].front().state);
  return out;
}

}  // namespace scnn::systems
