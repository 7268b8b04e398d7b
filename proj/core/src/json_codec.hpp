#pragma once

// JSON mappings for the structured-text files (bundles, run configs). Kept
// out of the public headers so consumers of the core library do not need the
// JSON library.

#include "json.hpp"
#include "scnn/model/model.hpp"
#include "scnn/systems/systems.hpp"

namespace scnn::codec {

using Json = nlohmann::ordered_json;

Json to_json(const systems::SystemSpec& s);
// Keys missing from `j` keep the values of `base`; unknown keys are rejected.
systems::SystemSpec system_from_json(const Json& j);

Json to_json(const model::ModelSpec& s);
model::ModelSpec model_spec_from_json(const Json& j);

// Rejects keys of `j` not listed in `allowed`.
void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const char* where);

}  // namespace scnn::codec
