#include "pda/http_backend.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>

namespace pda {

using nlohmann::json;

namespace {

std::string mime_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

std::string image_url(const std::string& ref) {
  if (ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0 || ref.rfind("data:", 0) == 0) return ref;
  std::ifstream in(ref, std::ios::binary);
  if (!in) throw BackendError("cannot read image " + ref);
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return "data:" + mime_for(ref) + ";base64," + base64_encode(bytes.str());
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::pair<std::string, std::string> split_base_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("base_url needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  auto prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

json build_chat_body(const ChatRequest& request, const std::string& model) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json msg{{"role", to_string(m.role)}};
    if (m.image_ref) {
      msg["content"] = json::array({json{{"type", "text"}, {"text", m.content}},
                                    json{{"type", "image_url"}, {"image_url", {{"url", image_url(*m.image_ref)}}}}});
    } else {
      msg["content"] = m.content;
    }
    messages.push_back(std::move(msg));
  }
  return json{{"model", model},
              {"messages", std::move(messages)},
              {"temperature", request.temperature},
              {"max_tokens", request.max_output_tokens}};
}

std::string parse_chat_response(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw BackendError("chat response is not JSON");
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_null()) return {};
    if (content.is_string()) return content.get<std::string>();
    // some servers return content parts
    std::string text;
    for (const auto& part : content) text += part.value("text", "");
    return text;
  } catch (const json::exception& e) {
    throw BackendError(std::string("chat response without choices[0].message.content: ") + e.what());
  }
}

HttpBackend::HttpBackend(HttpBackendConfig config, std::string id)
    : Backend(id.empty() ? "http:" + config.model : std::move(id), config.retry), config_(std::move(config)) {
  if (config_.model.empty()) throw std::invalid_argument("http backend needs a model name");
  std::tie(origin_, path_prefix_) = split_base_url(config_.base_url);
}

ChatResponse HttpBackend::send(const ChatRequest& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto body = build_chat_body(request, config_.model).dump();
  auto result = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
  if (!result) throw TransportError("request to " + origin_ + " failed: " + httplib::to_string(result.error()));
  if (result->status == 429 || result->status >= 500) {
    throw TransportError("server returned HTTP " + std::to_string(result->status));
  }
  if (result->status != 200) {
    throw BackendError("server returned HTTP " + std::to_string(result->status) + ": " + result->body.substr(0, 200));
  }
  return ChatResponse{parse_chat_response(result->body), 0, {}};
}

}  // namespace pda
