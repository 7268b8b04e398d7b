#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include "scnn/error.hpp"

namespace scnn::cli {

namespace {

using codec::Json;

void collect_keys(const Json& j, const std::string& prefix, std::set<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    out.insert(key);
    if (it->is_object()) collect_keys(*it, key, out);
  }
}

template <class T>
void read(const Json& j, const char* key, T& into, const char* where) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string(where) + ": bad value for '" + key + "': " + e.what(), 0);
  }
}

const Json& section(const Json& j, const char* name) {
  static const Json empty = Json::object();
  if (!j.contains(name)) return empty;
  const Json& s = j.at(name);
  if (!s.is_object()) throw ParseError(std::string("config: '") + name + "' must be an object", 0);
  return s;
}

}  // namespace

void apply_override(Json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw std::invalid_argument("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("--set: bad key '" + path + "'");
    if (!node->is_object()) throw std::invalid_argument("--set: '" + path + "' does not name an object field");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig parse_run_config(const Json& j, int default_workers) {
  codec::require_known_keys(j, {"system", "model", "loss", "train", "eval"}, "config");
  RunConfig c;
  collect_keys(j, "", c.explicit_keys);
  if (!j.contains("system")) throw ParseError("config: missing 'system'", 0);
  if (!j.contains("model")) throw ParseError("config: missing 'model'", 0);
  c.system = codec::system_from_json(j.at("system"));

  Json model_json = j.at("model");
  if (!model_json.is_object()) throw ParseError("config: 'model' must be an object", 0);
  if (!model_json.contains("K")) model_json["K"] = c.system.K();
  c.model = codec::model_spec_from_json(model_json);
  model::validate(c.model);
  if (c.model.K != c.system.K()) {
    throw StructuralError("config: model K=" + std::to_string(c.model.K) + " but system " +
                          systems::to_string(c.system.kind) + " has K=" + std::to_string(c.system.K()));
  }

  c.train = train::default_config(c.model, c.system);
  c.train.workers = default_workers;

  const Json& loss = section(j, "loss");
  codec::require_known_keys(loss, {"alpha1", "alpha2", "beta", "poisson_scope", "hqp_derivative_mode"}, "loss");
  read(loss, "alpha1", c.train.weights.alpha1, "loss");
  read(loss, "alpha2", c.train.weights.alpha2, "loss");
  read(loss, "beta", c.train.weights.beta, "loss");
  try {
    if (loss.contains("poisson_scope")) {
      c.train.weights.poisson_scope = losses::parse_poisson_scope(loss.at("poisson_scope").get<std::string>());
    }
    if (loss.contains("hqp_derivative_mode")) {
      c.train.weights.hqp_mode = losses::parse_hqp_mode(loss.at("hqp_derivative_mode").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("loss: ") + e.what(), 0);
  }

  const Json& tr = section(j, "train");
  codec::require_known_keys(tr, {"learning_rate", "batch_size", "steps", "seed", "log_every", "first_n", "workers"},
                            "train");
  read(tr, "learning_rate", c.train.learning_rate, "train");
  read(tr, "batch_size", c.train.batch_size, "train");
  read(tr, "steps", c.train.steps, "train");
  read(tr, "seed", c.train.seed, "train");
  read(tr, "log_every", c.train.log_every, "train");
  read(tr, "workers", c.train.workers, "train");
  if (tr.contains("first_n")) {
    if (tr.at("first_n").is_null()) {
      c.train.first_n.reset();
    } else {
      int n = 0;
      read(tr, "first_n", n, "train");
      c.train.first_n = n;
    }
  }

  const Json& ev = section(j, "eval");
  codec::require_known_keys(ev, {"n_steps", "n_init"}, "eval");
  read(ev, "n_steps", c.eval.n_steps, "eval");
  read(ev, "n_init", c.eval.n_init, "eval");
  if (c.eval.n_steps < 1 || c.eval.n_init < 1) throw std::invalid_argument("eval: n_steps and n_init must be positive");

  train::validate(c.train);
  (void)losses::validate(c.train.weights, c.model);
  return c;
}

Json to_json(const RunConfig& c) {
  Json j;
  j["system"] = codec::to_json(c.system);
  j["model"] = codec::to_json(c.model);
  const auto& w = c.train.weights;
  j["loss"] = Json{{"alpha1", w.alpha1},
                   {"alpha2", w.alpha2},
                   {"beta", w.beta},
                   {"poisson_scope", losses::to_string(w.poisson_scope)},
                   {"hqp_derivative_mode", losses::to_string(w.hqp_mode)}};
  j["train"] = Json{{"learning_rate", c.train.learning_rate},
                    {"batch_size", c.train.batch_size},
                    {"steps", c.train.steps},
                    {"seed", c.train.seed},
                    {"log_every", c.train.log_every},
                    {"first_n", c.train.first_n ? Json(*c.train.first_n) : Json(nullptr)},
                    {"workers", c.train.workers}};
  j["eval"] = Json{{"n_steps", c.eval.n_steps}, {"n_init", c.eval.n_init}};
  return j;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
}

std::vector<std::string> config_warnings(const RunConfig& c) {
  std::vector<std::string> out;
  if (!model::has_transform(c.model.kind)) {
    for (const char* k : {"loss.alpha1", "loss.alpha2", "loss.beta", "loss.poisson_scope", "loss.hqp_derivative_mode"}) {
      if (c.explicit_keys.count(k)) {
        out.push_back(std::string(k) + " is unused by " + model::to_string(c.model.kind) + " models (alpha unused)");
      }
    }
  }
  return out;
}

}  // namespace scnn::cli
