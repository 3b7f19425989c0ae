#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pda {

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One versioned prompt contract, compiled in from assets/prompts/<name>.txt.
struct PromptAsset {
  std::string name;
  std::string version;
  std::vector<std::string> placeholders;
  std::string system;  // empty when the contract is user-only
  std::string user;
};

/// Parse the asset text format: "#! key: value" header lines followed by
/// "=== system" and/or "=== user" sections.
PromptAsset parse_prompt_asset(std::string_view text);

/// Throws PromptError for unknown names.
const PromptAsset& prompt_asset(std::string_view name);

/// name -> version for every shipped asset; recorded in run manifests.
std::map<std::string, std::string> prompt_versions();

using PromptVars = std::map<std::string, std::string>;

/// Substitute {name} for every name in vars. Braces around anything else
/// (JSON examples in the prompts) are left alone. Throws PromptError if one
/// of the asset's declared placeholders is still unresolved.
std::string render(std::string_view tmpl, const PromptVars& vars,
                   const std::vector<std::string>& declared = {});

struct RenderedPrompt {
  std::string system;
  std::string user;
};

RenderedPrompt render(const PromptAsset& asset, const PromptVars& vars);

}  // namespace pda
