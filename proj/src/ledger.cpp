#include "pda/ledger.hpp"

#include <stdexcept>

namespace pda {

std::string to_string(const LedgerKey& key) {
  std::string s(to_string(key.stage));
  s += '/';
  s += to_string(key.kind);
  if (key.retry) s += "/retry";
  return s;
}

LedgerKey parse_ledger_key(std::string_view text) {
  auto slash = text.find('/');
  if (slash == std::string_view::npos) {
    throw std::invalid_argument("ledger key '" + std::string(text) + "' lacks a model kind");
  }
  LedgerKey key;
  key.stage = parse_stage_tag(text.substr(0, slash));
  auto rest = text.substr(slash + 1);
  auto second = rest.find('/');
  if (second != std::string_view::npos) {
    if (rest.substr(second + 1) != "retry") {
      throw std::invalid_argument("bad ledger key suffix in '" + std::string(text) + "'");
    }
    key.retry = true;
    rest = rest.substr(0, second);
  }
  key.kind = parse_model_kind(rest);
  return key;
}

void CallLedger::add(LedgerKey key, std::uint64_t n) {
  if (n == 0) return;
  counts_[key] += n;
}

void CallLedger::merge(const CallLedger& other) {
  for (const auto& [key, n] : other.counts_) add(key, n);
}

std::uint64_t CallLedger::count(StageTag stage, ModelKind kind, bool retry) const {
  auto it = counts_.find(LedgerKey{stage, kind, retry});
  return it == counts_.end() ? 0 : it->second;
}

std::uint64_t CallLedger::total() const {
  std::uint64_t sum = 0;
  for (const auto& [key, n] : counts_) sum += n;
  return sum;
}

CallLedger CallLedger::contract_view() const {
  CallLedger out;
  for (const auto& [key, n] : counts_) {
    if (!key.retry) out.add(key, n);
  }
  return out;
}

void to_json(nlohmann::json& j, const CallLedger& ledger) {
  j = nlohmann::json::object();
  for (const auto& [key, n] : ledger.counts()) j[to_string(key)] = n;
}

void from_json(const nlohmann::json& j, CallLedger& ledger) {
  ledger = CallLedger{};
  for (const auto& [name, n] : j.items()) ledger.add(parse_ledger_key(name), n.get<std::uint64_t>());
}

}  // namespace pda
