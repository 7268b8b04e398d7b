#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json_codec.hpp"
#include "scnn/model/model.hpp"
#include "scnn/systems/systems.hpp"
#include "scnn/train/train.hpp"

namespace scnn::cli {

struct EvalSettings {
  int n_steps = 100;
  int n_init = 100;
};

// Everything a training run needs, merged from the config file, --set
// overrides and defaults.
struct RunConfig {
  systems::SystemSpec system;
  model::ModelSpec model;
  train::TrainConfig train;
  EvalSettings eval;
  // Dotted keys given explicitly by the user, e.g. "loss.alpha1".
  std::set<std::string> explicit_keys;
};

// Sets `path` (dot separated) in `j`. The value is parsed as JSON when it
// parses, otherwise stored as a string.
void apply_override(codec::Json& j, std::string_view assignment);

RunConfig parse_run_config(const codec::Json& j, int default_workers);
codec::Json to_json(const RunConfig& c);

codec::Json read_json_file(const std::string& path);

// Warnings about settings the chosen model ignores.
std::vector<std::string> config_warnings(const RunConfig& c);

}  // namespace scnn::cli
