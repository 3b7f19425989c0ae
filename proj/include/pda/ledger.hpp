#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>

#include <json.hpp>

#include "pda/chat.hpp"

namespace pda {

struct LedgerKey {
  StageTag stage = StageTag::paraphrase;
  ModelKind kind = ModelKind::llm;
  bool retry = false;

  auto operator<=>(const LedgerKey&) const = default;
  bool operator==(const LedgerKey&) const = default;
};

/// "stage/kind", with a "/retry" suffix on reprompt keys.
std::string to_string(const LedgerKey& key);
LedgerKey parse_ledger_key(std::string_view text);

// Call counts per (stage, model kind). Zero entries are never stored, so two
// ledgers compare equal whenever their nonzero counts agree.
class CallLedger {
 public:
  void add(LedgerKey key, std::uint64_t n = 1);
  void merge(const CallLedger& other);

  std::uint64_t count(StageTag stage, ModelKind kind, bool retry = false) const;
  std::uint64_t total() const;
  bool empty() const { return counts_.empty(); }
  const std::map<LedgerKey, std::uint64_t>& counts() const { return counts_; }

  /// The ledger with every retry key dropped.
  CallLedger contract_view() const;

  bool operator==(const CallLedger&) const = default;

 private:
  std::map<LedgerKey, std::uint64_t> counts_;
};

void to_json(nlohmann::json& j, const CallLedger& ledger);
void from_json(const nlohmann::json& j, CallLedger& ledger);

// Thread-safe accumulator behind every backend.
class AtomicLedger {
 public:
  void record(LedgerKey key) {
    std::lock_guard<std::mutex> lock(mutex_);
    ledger_.add(key);
  }

  CallLedger snapshot() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return ledger_;
  }

 private:
  mutable std::mutex mutex_;
  CallLedger ledger_;
};

}  // namespace pda
