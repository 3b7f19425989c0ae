#pragma once

// Scripted model behavior used to record the replay fixtures under
// tests/fixtures. The generator writes them; a test regenerates them in
// memory and checks the committed files are current.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pda/harness.hpp"
#include "pda/replay_backend.hpp"

namespace pda::fixtures {

// Backend answering from a plain function of the request.
class ScriptedBackend final : public Backend {
 public:
  using Responder = std::function<std::string(const ChatRequest&)>;
  ScriptedBackend(std::string id, Responder responder)
      : Backend(std::move(id), RetryPolicy{0, std::chrono::milliseconds{0}}), responder_(std::move(responder)) {}

 protected:
  ChatResponse send(const ChatRequest& request) override { return {responder_(request), 1, {}}; }

 private:
  Responder responder_;
};

// Two-way "jeans vs t shirt" query on an attacked image: the direct query
// says jeans, four of five paraphrase views say t shirt.
Query tshirt_query();
std::string tshirt_reply(const ChatRequest& request);

// Short caption with a wrong subject count, and a detailed caption that
// contradicts it.
Query caption_query();
std::string caption_reply(const ChatRequest& request);

// Variants recorded for the t shirt query.
std::vector<VariantConfig> tshirt_configs();

ReplayScript record_tshirt_script();
ReplayScript record_caption_script();

// Three classification items plus a replay script recorded from the
// synthetic backend, for the CLI run test.
std::string cli_dataset_jsonl();
ReplayScript record_cli_script();

// Writes every fixture into dir; returns the file names written.
std::vector<std::string> write_all(const std::filesystem::path& dir);

}  // namespace pda::fixtures
