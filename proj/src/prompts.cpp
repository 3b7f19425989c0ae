#include "pda/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <sstream>

namespace pda {

namespace detail {
struct EmbeddedAsset {
  const char* name;
  const char* text;
};
extern const EmbeddedAsset kPromptAssets[];
extern const std::size_t kPromptAssetCount;
}  // namespace detail

namespace {

std::string trim_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

const std::map<std::string, PromptAsset, std::less<>>& registry() {
  static const auto assets = [] {
    std::map<std::string, PromptAsset, std::less<>> out;
    for (std::size_t i = 0; i < detail::kPromptAssetCount; ++i) {
      auto asset = parse_prompt_asset(detail::kPromptAssets[i].text);
      out.emplace(asset.name, std::move(asset));
    }
    return out;
  }();
  return assets;
}

}  // namespace

PromptAsset parse_prompt_asset(std::string_view text) {
  PromptAsset asset;
  std::istringstream in{std::string(text)};
  std::string line;
  std::string* section = nullptr;
  std::string system, user;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (section == nullptr && line.rfind("#!", 0) == 0) {
      auto colon = line.find(':');
      if (colon == std::string::npos) throw PromptError("bad asset header line: " + line);
      auto key = line.substr(2, colon - 2);
      auto value = line.substr(colon + 1);
      key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
      auto first = value.find_first_not_of(' ');
      value = first == std::string::npos ? "" : value.substr(first);
      if (key == "name") {
        asset.name = value;
      } else if (key == "version") {
        asset.version = value;
      } else if (key == "placeholders") {
        std::istringstream names(value);
        std::string name;
        while (names >> name) asset.placeholders.push_back(name);
      }
      continue;
    }
    if (line == "=== system") {
      section = &system;
      continue;
    }
    if (line == "=== user") {
      section = &user;
      continue;
    }
    if (section == nullptr) {
      if (line.empty()) continue;
      throw PromptError("asset text before any section: " + line);
    }
    *section += line;
    *section += '\n';
  }
  if (asset.name.empty() || asset.version.empty()) {
    throw PromptError("prompt asset lacks a name or version header");
  }
  if (user.empty()) throw PromptError("prompt asset '" + asset.name + "' has no user section");
  asset.system = trim_trailing_newlines(std::move(system));
  asset.user = trim_trailing_newlines(std::move(user));
  return asset;
}

const PromptAsset& prompt_asset(std::string_view name) {
  const auto& assets = registry();
  auto it = assets.find(name);
  if (it == assets.end()) throw PromptError("unknown prompt asset '" + std::string(name) + "'");
  return it->second;
}

std::map<std::string, std::string> prompt_versions() {
  std::map<std::string, std::string> out;
  for (const auto& [name, asset] : registry()) out[name] = asset.version;
  return out;
}

std::string render(std::string_view tmpl, const PromptVars& vars,
                   const std::vector<std::string>& declared) {
  for (const auto& name : declared) {
    if (!vars.contains(name)) throw PromptError("unresolved placeholder {" + name + "}");
  }
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) break;
    auto close = tmpl.find('}', open + 1);
    if (close == std::string_view::npos) break;
    auto name = tmpl.substr(open + 1, close - open - 1);
    out.append(tmpl.substr(pos, open - pos));
    auto it = is_identifier(name) ? vars.find(std::string(name)) : vars.end();
    if (it != vars.end()) {
      out += it->second;
      pos = close + 1;
    } else {
      out += '{';
      pos = open + 1;
    }
  }
  out.append(tmpl.substr(pos));
  return out;
}

RenderedPrompt render(const PromptAsset& asset, const PromptVars& vars) {
  for (const auto& name : asset.placeholders) {
    if (!vars.contains(name)) {
      throw PromptError("asset '" + asset.name + "' needs placeholder {" + name + "}");
    }
  }
  return RenderedPrompt{render(asset.system, vars), render(asset.user, vars)};
}

}  // namespace pda
