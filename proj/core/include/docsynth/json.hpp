#pragma once

// nlohmann::json conversions for the shared data model.

#include <nlohmann/json.hpp>

#include "docsynth/layout.hpp"

namespace docsynth {

nlohmann::json layout_to_json_value(const Layout& layout, const CategoryVocab& vocab);
Layout layout_from_json_value(const nlohmann::json& j, const CategoryVocab& vocab);

nlohmann::json validation_to_json(const ValidationReport& report);

}  // namespace docsynth
