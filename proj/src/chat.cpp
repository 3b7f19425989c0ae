#include "pda/chat.hpp"

#include <array>
#include <cctype>
#include <cstdio>
#include <stdexcept>

namespace pda {

namespace {

constexpr std::array<std::string_view, 2> kModelKindNames{"llm", "vlm"};
constexpr std::array<std::string_view, 3> kRoleNames{"system", "user", "assistant"};
constexpr std::array<std::string_view, 5> kStageNames{"paraphrase", "decomposition", "answering",
                                                      "judging", "aggregation"};

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view name, const std::array<std::string_view, N>& names,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<Enum>(i);
  }
  throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(name) + "'");
}

}  // namespace

std::string_view to_string(ModelKind kind) { return kModelKindNames[static_cast<int>(kind)]; }
std::string_view to_string(Role role) { return kRoleNames[static_cast<int>(role)]; }
std::string_view to_string(StageTag stage) { return kStageNames[static_cast<int>(stage)]; }

ModelKind parse_model_kind(std::string_view name) {
  return parse_enum<ModelKind>(name, kModelKindNames, "model kind");
}
Role parse_role(std::string_view name) { return parse_enum<Role>(name, kRoleNames, "role"); }
StageTag parse_stage_tag(std::string_view name) {
  return parse_enum<StageTag>(name, kStageNames, "stage tag");
}

void ChatRequest::validate() const {
  if (messages.empty()) throw std::invalid_argument("chat request has no messages");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto& m = messages[i];
    if (m.role == Role::system && i != 0) {
      throw std::invalid_argument("system message must be first and unique");
    }
    if (m.image_ref && model_kind != ModelKind::vlm) {
      throw std::invalid_argument("image_ref is only allowed on vlm requests");
    }
  }
  if (!(temperature >= 0.0 && temperature <= 1.0)) {
    throw std::invalid_argument("temperature must lie in [0,1]");
  }
  if (max_output_tokens <= 0) throw std::invalid_argument("max_output_tokens must be positive");
}

std::optional<std::string> ChatRequest::image_ref() const {
  for (const auto& m : messages) {
    if (m.image_ref) return m.image_ref;
  }
  return std::nullopt;
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string canonical_prompt(const ChatRequest& request) {
  std::string joined;
  for (const auto& m : request.messages) {
    joined += '[';
    joined += to_string(m.role);
    joined += "] ";
    joined += m.content;
    joined += '\n';
  }
  return collapse_whitespace(joined);
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string prompt_digest(const ChatRequest& request) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_prompt(request))));
  return std::string("fnv1a64:") + buf;
}

RequestFingerprint fingerprint(const ChatRequest& request) {
  return RequestFingerprint{request.stage_tag, request.model_kind, prompt_digest(request),
                            request.image_ref().value_or("")};
}

ChatRequest make_llm_request(StageTag stage, std::string agent, std::string system_text,
                             std::string user_text, double temperature) {
  ChatRequest r;
  r.model_kind = ModelKind::llm;
  r.stage_tag = stage;
  r.agent = std::move(agent);
  r.temperature = temperature;
  if (!system_text.empty()) r.messages.push_back({Role::system, std::move(system_text), {}});
  r.messages.push_back({Role::user, std::move(user_text), {}});
  return r;
}

ChatRequest make_vlm_request(StageTag stage, std::string agent, std::string user_text,
                             std::string image_ref) {
  ChatRequest r;
  r.model_kind = ModelKind::vlm;
  r.stage_tag = stage;
  r.agent = std::move(agent);
  r.temperature = 0.0;
  r.max_output_tokens = 128;
  std::optional<std::string> image;
  if (!image_ref.empty()) image = std::move(image_ref);
  r.messages.push_back({Role::user, std::move(user_text), std::move(image)});
  return r;
}

}  // namespace pda
