#pragma once

#include <string>

#include <json.hpp>

#include "pda/backend.hpp"

namespace pda {

struct HttpBackendConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
  int timeout_seconds = 60;
  RetryPolicy retry;
};

/// Request body for an OpenAI-compatible chat/completions endpoint. Local
/// image files are inlined as base64 data URLs; http(s) and data URLs pass
/// through.
nlohmann::json build_chat_body(const ChatRequest& request, const std::string& model);

/// Text of the first choice. A null content (refusal) becomes "". Throws
/// BackendError when the body is not a chat completion.
std::string parse_chat_response(const std::string& body);

std::string base64_encode(std::string_view bytes);

/// Split "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_base_url(const std::string& url);

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config, std::string id = "");

 protected:
  ChatResponse send(const ChatRequest& request) override;

 private:
  HttpBackendConfig config_;
  std::string origin_;
  std::string path_prefix_;
};

}  // namespace pda
