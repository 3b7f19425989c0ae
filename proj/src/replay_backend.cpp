#include "pda/replay_backend.hpp"

#include <fstream>
#include <stdexcept>

namespace pda {

using nlohmann::json;

ReplayScript ReplayScript::from_json(const json& j) {
  if (!j.is_array()) throw std::runtime_error("replay script must be a JSON array");
  ReplayScript script;
  std::size_t index = 0;
  for (const auto& entry : j) {
    try {
      RequestFingerprint key;
      key.stage = parse_stage_tag(entry.at("stage_tag").get<std::string>());
      key.kind = parse_model_kind(entry.at("model_kind").get<std::string>());
      key.prompt_digest = entry.at("prompt_fingerprint").get<std::string>();
      key.image_ref = entry.value("image_ref", "");
      if (script.entries_.count(key)) throw std::runtime_error("duplicate key " + key.prompt_digest);
      script.entries_.emplace(std::move(key), entry.at("response_text").get<std::string>());
    } catch (const std::exception& e) {
      throw std::runtime_error("replay entry " + std::to_string(index) + ": " + e.what());
    }
    ++index;
  }
  return script;
}

ReplayScript ReplayScript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open replay script " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("replay script " + path.string() + " is not valid JSON");
  return from_json(j);
}

json ReplayScript::to_json() const {
  json out = json::array();
  for (const auto& [key, text] : entries_) {
    out.push_back({{"stage_tag", to_string(key.stage)},
                   {"model_kind", to_string(key.kind)},
                   {"prompt_fingerprint", key.prompt_digest},
                   {"image_ref", key.image_ref},
                   {"response_text", text}});
  }
  return out;
}

void ReplayScript::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write replay script " + path.string());
  out << to_json().dump(2) << '\n';
}

void ReplayScript::add(const RequestFingerprint& key, std::string response_text) {
  auto [it, inserted] = entries_.emplace(key, response_text);
  if (!inserted && it->second != response_text) {
    throw std::invalid_argument("conflicting replay entry for " + key.prompt_digest);
  }
}

std::optional<std::string> ReplayScript::lookup(const RequestFingerprint& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

ReplayBackend::ReplayBackend(ReplayScript script, std::string id)
    : Backend(std::move(id), RetryPolicy{0, std::chrono::milliseconds{0}}), script_(std::move(script)) {}

ChatResponse ReplayBackend::send(const ChatRequest& request) {
  auto key = fingerprint(request);
  auto hit = script_.lookup(key);
  if (!hit) {
    throw ReplayMiss("no recorded response for " + std::string(to_string(key.stage)) + "/" +
                     std::string(to_string(key.kind)) + " " + key.prompt_digest +
                     (key.image_ref.empty() ? "" : " image " + key.image_ref) + " (agent " + request.agent + ")");
  }
  return ChatResponse{*hit, 0, {}};
}

RecordingBackend::RecordingBackend(Backend& inner)
    : Backend("recording:" + inner.id(), RetryPolicy{0, std::chrono::milliseconds{0}}), inner_(inner) {}

ChatResponse RecordingBackend::send(const ChatRequest& request) {
  auto response = inner_.complete(request);
  std::lock_guard<std::mutex> lock(mutex_);
  script_.add(fingerprint(request), response.text);
  return response;
}

ReplayScript RecordingBackend::script() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return script_;
}

}  // namespace pda
