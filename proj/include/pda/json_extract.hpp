#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace pda {

/// Remove ``` / ```json fence markers, keeping whatever they enclosed, including
/// content on the fence line itself.
std::string strip_code_fences(std::string_view text);

/// The first balanced {...} object in the text, honoring string literals and
/// escapes. Leading and trailing prose is ignored.
std::optional<std::string> first_json_object(std::string_view text);

/// strip_code_fences + first_json_object + parse. Never throws; nullopt when
/// no well-formed object is present.
std::optional<nlohmann::json> extract_json_object(std::string_view text);

}  // namespace pda
