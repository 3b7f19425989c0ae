#include "pda/json_extract.hpp"

#include <cctype>
#include <sstream>

namespace pda {

std::string strip_code_fences(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line, out;
  while (std::getline(in, line)) {
    bool fence = false;
    auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line.compare(first, 3, "```") == 0) {
      fence = true;
      // opening fence with its language tag; content may follow on the same line
      auto rest = first + 3;
      while (rest < line.size() && (std::isalnum(static_cast<unsigned char>(line[rest])) || line[rest] == '_' ||
                                    line[rest] == '-')) {
        ++rest;
      }
      line = line.substr(rest);
    }
    auto last = line.find_last_not_of(" \t\r");
    if (last != std::string::npos && last >= 2 && line.compare(last - 2, 3, "```") == 0) {
      line.erase(last - 2);
      fence = true;
    }
    if (fence && line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out += line;
    out += '\n';
  }
  return out;
}

namespace {

// End index (inclusive) of the object opening at `start`, if it closes.
std::optional<std::size_t> balanced_end(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false, escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::string> first_json_object(std::string_view text) {
  for (auto start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    if (auto end = balanced_end(text, start)) return std::string(text.substr(start, *end - start + 1));
  }
  return std::nullopt;
}

std::optional<nlohmann::json> extract_json_object(std::string_view text) {
  // prose may contain stray braces, so fall through to later objects
  const std::string body = strip_code_fences(text);
  std::string_view view(body);
  for (auto start = view.find('{'); start != std::string_view::npos;
       start = view.find('{', start + 1)) {
    auto end = balanced_end(view, start);
    if (!end) continue;
    auto parsed = nlohmann::json::parse(view.substr(start, *end - start + 1), nullptr,
                                        /*allow_exceptions=*/false);
    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
  }
  return std::nullopt;
}

}  // namespace pda
