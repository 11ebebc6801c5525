#pragma once

// The JSON Schema subset the shipped schemas use: type, enum, properties,
// required, additionalProperties, items, minItems, maxItems, minimum,
// maximum and $ref by schema name.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace scalerl::cli {

const std::vector<std::pair<std::string_view, std::string_view>>& embedded_schemas();

std::vector<std::string> schema_names();

/// Throws InputError for an unknown name.
const nlohmann::json& schema(const std::string& name);

/// Empty when `doc` conforms; otherwise one message per violation, each
/// prefixed with its JSON pointer.
std::vector<std::string> check_schema(const nlohmann::json& doc, const std::string& name);

}  // namespace scalerl::cli
