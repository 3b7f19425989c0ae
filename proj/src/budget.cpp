#include <set>
#include <sstream>

#include "pda/pipeline.hpp"

namespace pda {

namespace {

std::uint64_t u(int v) { return static_cast<std::uint64_t>(v); }

}  // namespace

CallLedger expected_budget(Variant variant, int n, int k) {
  if (n < 1 || k < 1) throw std::invalid_argument("budget needs n >= 1 and k >= 1");
  CallLedger l;
  l.add({StageTag::paraphrase, ModelKind::llm}, 1);
  switch (variant) {
    case Variant::full:
      l.add({StageTag::answering, ModelKind::vlm}, u(n) * u(k));
      l.add({StageTag::decomposition, ModelKind::llm}, u(n) * u(k) + u(n));
      l.add({StageTag::aggregation, ModelKind::llm}, 1);
      break;
    case Variant::rjv:
      l.add({StageTag::answering, ModelKind::vlm}, u(n));
      l.add({StageTag::judging, ModelKind::llm}, u(n));
      break;
    case Variant::rda:
      l.add({StageTag::answering, ModelKind::vlm}, u(n));
      l.add({StageTag::aggregation, ModelKind::llm}, 1);
      break;
    case Variant::pv:
      l.add({StageTag::answering, ModelKind::vlm}, u(n));
      break;
  }
  return l;
}

CallLedger expected_caption_budget(const DecisionRecord& record) {
  CallLedger l;
  std::uint64_t probes = 0;
  bool usable = false;
  for (const auto& set : record.evidence) {
    probes += set.pairs.size();
    for (const auto& pair : set.pairs) usable = usable || pair.answer != kUnclear;
  }
  l.add({StageTag::decomposition, ModelKind::llm}, 1 + u(record.n_paraphrases));
  l.add({StageTag::answering, ModelKind::vlm}, probes);
  l.add({StageTag::aggregation, ModelKind::llm}, usable ? 1 : 0);
  return l;
}

BudgetViolation::BudgetViolation(std::string query_id, std::vector<BudgetOffense> offenses)
    : std::runtime_error([&] {
        std::ostringstream out;
        out << "budget violation for " << query_id << ":";
        for (const auto& o : offenses) {
          out << " (" << to_string(o.key) << ", expected " << o.expected << ", actual " << o.actual << ")";
        }
        return out.str();
      }()),
      offenses_(std::move(offenses)) {}

std::optional<BudgetViolation> verify_budget(const DecisionRecord& record) {
  auto expected = record.task == TaskKind::caption
                      ? expected_caption_budget(record)
                      : expected_budget(record.variant, record.n_paraphrases, record.k_atomic);
  auto actual = record.ledger.contract_view();
  if (actual == expected) return std::nullopt;

  std::set<LedgerKey> keys;
  for (const auto& [k, v] : expected.counts()) keys.insert(k);
  for (const auto& [k, v] : actual.counts()) keys.insert(k);
  std::vector<BudgetOffense> offenses;
  for (const auto& key : keys) {
    auto e = expected.count(key.stage, key.kind);
    auto a = actual.count(key.stage, key.kind);
    if (e != a) offenses.push_back({key, e, a});
  }
  return BudgetViolation(record.query_id, std::move(offenses));
}

std::string budget_row(const CallLedger& ledger) {
  auto c = [&](StageTag s, ModelKind k) { return ledger.count(s, k); };
  std::ostringstream out;
  out << c(StageTag::paraphrase, ModelKind::llm) << " | " << c(StageTag::answering, ModelKind::vlm) << " | "
      << c(StageTag::decomposition, ModelKind::llm) + c(StageTag::judging, ModelKind::llm) << " | "
      << c(StageTag::aggregation, ModelKind::llm);
  return out.str();
}

}  // namespace pda
