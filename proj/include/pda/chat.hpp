#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pda {

enum class ModelKind { llm, vlm };
enum class Role { system, user, assistant };
enum class StageTag { paraphrase, decomposition, answering, judging, aggregation };

std::string_view to_string(ModelKind kind);
std::string_view to_string(Role role);
std::string_view to_string(StageTag stage);

// Throw std::invalid_argument on unknown names.
ModelKind parse_model_kind(std::string_view name);
Role parse_role(std::string_view name);
StageTag parse_stage_tag(std::string_view name);

struct Message {
  Role role = Role::user;
  std::string content;
  std::optional<std::string> image_ref;
};

struct ChatRequest {
  ModelKind model_kind = ModelKind::llm;
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_output_tokens = 512;
  StageTag stage_tag = StageTag::paraphrase;

  // Second attempt after a malformed reply; the ledger files it under the
  // retry key of the same stage.
  bool reprompt = false;

  // Name of the prompt contract that built this request. Not part of the
  // fingerprint and never sent over the wire.
  std::string agent;

  // Read by the synthetic backend only.
  bool adversarial_hint = false;

  /// Throws std::invalid_argument when the request breaks its invariants:
  /// a system message that is not first (or more than one), an image on an
  /// llm request, a temperature outside [0,1], or a non-positive token cap.
  void validate() const;

  /// First image reference carried by any message.
  std::optional<std::string> image_ref() const;
};

struct ChatResponse {
  std::string text;
  std::int64_t latency_ms = 0;
  std::string backend_id;
};

/// Role-prefixed concatenation of the message texts with runs of whitespace
/// collapsed to one space. Used to key replay scripts.
std::string canonical_prompt(const ChatRequest& request);

/// Collapse whitespace runs to single spaces and trim both ends.
std::string collapse_whitespace(std::string_view text);

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// "fnv1a64:" followed by 16 lowercase hex digits of the canonical prompt.
std::string prompt_digest(const ChatRequest& request);

struct RequestFingerprint {
  StageTag stage = StageTag::paraphrase;
  ModelKind kind = ModelKind::llm;
  std::string prompt_digest;
  std::string image_ref;

  auto operator<=>(const RequestFingerprint&) const = default;
  bool operator==(const RequestFingerprint&) const = default;
};

RequestFingerprint fingerprint(const ChatRequest& request);

// Convenience builders used throughout the agent layer.
ChatRequest make_llm_request(StageTag stage, std::string agent, std::string system_text,
                             std::string user_text, double temperature);
ChatRequest make_vlm_request(StageTag stage, std::string agent, std::string user_text,
                             std::string image_ref);

}  // namespace pda
