#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "levyfilter/models.hpp"

namespace levyfilter {

using Json = nlohmann::json;

/// Inline JSON form of a model ({"model": ..., "observation": ...}). Every
/// coefficient must carry its expression source.
Json preset_to_json(const ModelPreset& preset);

/// Accepts either the inline form or {"preset": name, "params": {...}} under
/// "model". Unknown keys raise ConfigError naming the key.
ModelPreset preset_from_json(const Json& model, const Json* observation);

Json measure_to_json(const LevyMeasureSpec& spec);
LevyMeasureSpec measure_from_json(const Json& j, Region region, std::string_view context);

/// Throws ConfigError for the first key of `object` not in `allowed`.
void reject_unknown_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                         std::string_view context);

}  // namespace levyfilter
