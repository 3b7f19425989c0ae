#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "pda/backend.hpp"

namespace pda {

// Recorded responses keyed by (stage, model kind, prompt digest, image).
class ReplayScript {
 public:
  /// JSON array of {stage_tag, model_kind, prompt_fingerprint, image_ref,
  /// response_text}. Throws std::runtime_error on malformed files or
  /// duplicate keys.
  static ReplayScript load(const std::filesystem::path& path);
  static ReplayScript from_json(const nlohmann::json& j);

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  /// Throws std::invalid_argument if the key is already present with a
  /// different response.
  void add(const RequestFingerprint& key, std::string response_text);
  std::optional<std::string> lookup(const RequestFingerprint& key) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<RequestFingerprint, std::string> entries_;
};

class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(ReplayScript script, std::string id = "replay");

 protected:
  /// Throws ReplayMiss for unrecorded requests.
  ChatResponse send(const ChatRequest& request) override;

 private:
  ReplayScript script_;
};

// Forwards to an inner backend and keeps every exchange for later replay.
class RecordingBackend final : public Backend {
 public:
  explicit RecordingBackend(Backend& inner);

  ReplayScript script() const;

 protected:
  ChatResponse send(const ChatRequest& request) override;

 private:
  Backend& inner_;
  mutable std::mutex mutex_;
  ReplayScript script_;
};

}  // namespace pda
