#include "json_codec.hpp"

#include <string>

#include "scnn/error.hpp"

namespace scnn::codec {

void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ParseError(std::string(where) + ": expected an object", 0);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ParseError(std::string(where) + ": unknown key '" + it.key() + "'", 0);
  }
}

namespace {

template <class T>
void read(const Json& j, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad value for '") + key + "': " + e.what(), 0);
  }
}

}  // namespace

Json to_json(const systems::SystemSpec& s) {
  return Json{{"kind", systems::to_string(s.kind)},
              {"n_particles", s.n_particles},
              {"dim", s.dim},
              {"k", s.k},
              {"m", s.m},
              {"g", s.g},
              {"l", s.l},
              {"charge", s.charge},
              {"field", s.field},
              {"l1", s.l1},
              {"l2", s.l2},
              {"m1", s.m1},
              {"m2", s.m2}};
}

systems::SystemSpec system_from_json(const Json& j) {
  require_known_keys(j, {"kind", "n_particles", "dim", "k", "m", "g", "l", "charge", "field", "l1",
                         "l2", "m1", "m2"},
                     "system");
  std::string kind;
  read(j, "kind", kind);
  if (kind.empty()) throw ParseError("system: missing 'kind'", 0);
  int n = 0;
  read(j, "n_particles", n);
  systems::SystemSpec s;
  try {
    s = systems::default_spec(systems::parse_system_kind(kind),
                              systems::parse_system_kind(kind) == systems::SystemKind::SpringNBody ? n : 0);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("system: ") + e.what(), 0);
  }
  read(j, "n_particles", s.n_particles);
  read(j, "dim", s.dim);
  read(j, "k", s.k);
  read(j, "m", s.m);
  read(j, "g", s.g);
  read(j, "l", s.l);
  read(j, "charge", s.charge);
  read(j, "field", s.field);
  read(j, "l1", s.l1);
  read(j, "l2", s.l2);
  read(j, "m1", s.m1);
  read(j, "m2", s.m2);
  systems::validate(s);
  return s;
}

Json to_json(const model::ModelSpec& s) {
  return Json{{"kind", model::to_string(s.kind)},
              {"K", s.K},
              {"n_cyclic", s.n_cyclic},
              {"hidden_dim", s.hidden_dim},
              {"hidden_layers", s.hidden_layers},
              {"constraints", s.constraints}};
}

model::ModelSpec model_spec_from_json(const Json& j) {
  require_known_keys(j, {"kind", "K", "n_cyclic", "hidden_dim", "hidden_layers", "constraints"}, "model");
  model::ModelSpec s;
  std::string kind;
  read(j, "kind", kind);
  try {
    s.kind = model::parse_model_kind(kind);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("model: ") + e.what(), 0);
  }
  read(j, "K", s.K);
  read(j, "n_cyclic", s.n_cyclic);
  read(j, "hidden_dim", s.hidden_dim);
  read(j, "hidden_layers", s.hidden_layers);
  read(j, "constraints", s.constraints);
  return s;
}

}  // namespace scnn::codec
