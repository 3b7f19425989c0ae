#include <doctest.h>

#include "pda/backend.hpp"
#include "pda/chat.hpp"
#include "pda/ledger.hpp"
#include "support.hpp"

using namespace pda;

TEST_CASE("enum names round trip and reject unknown names") {
  for (auto s : {StageTag::paraphrase, StageTag::decomposition, StageTag::answering, StageTag::judging,
                 StageTag::aggregation}) {
    CHECK(parse_stage_tag(to_string(s)) == s);
  }
  CHECK(parse_model_kind("vlm") == ModelKind::vlm);
  CHECK(parse_role("assistant") == Role::assistant);
  CHECK_THROWS_AS(parse_stage_tag("voting"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_kind("gpt"), std::invalid_argument);
}

TEST_CASE("request validation") {
  auto ok = make_llm_request(StageTag::paraphrase, "x", "sys", "user", 0.7);
  CHECK_NOTHROW(ok.validate());

  auto late_system = ok;
  late_system.messages.push_back({Role::system, "again", {}});
  CHECK_THROWS_AS(late_system.validate(), std::invalid_argument);

  auto image_on_llm = ok;
  image_on_llm.messages.back().image_ref = "a.png";
  CHECK_THROWS_AS(image_on_llm.validate(), std::invalid_argument);

  auto hot = ok;
  hot.temperature = 1.5;
  CHECK_THROWS_AS(hot.validate(), std::invalid_argument);

  auto no_tokens = ok;
  no_tokens.max_output_tokens = 0;
  CHECK_THROWS_AS(no_tokens.validate(), std::invalid_argument);

  ChatRequest empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);

  auto vlm = make_vlm_request(StageTag::answering, "a", "q", "img.png");
  CHECK_NOTHROW(vlm.validate());
  CHECK(vlm.image_ref() == "img.png");
  CHECK_FALSE(make_vlm_request(StageTag::answering, "a", "q", "").image_ref().has_value());
}

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("prompt digest ignores whitespace layout but not content or role") {
  auto a = make_llm_request(StageTag::paraphrase, "x", "sys", "hello   world\n", 0.0);
  auto b = make_llm_request(StageTag::paraphrase, "y", "sys", "hello world", 0.5);
  auto c = make_llm_request(StageTag::paraphrase, "x", "sys", "hello world!", 0.0);
  auto d = make_llm_request(StageTag::paraphrase, "x", "", "sys hello world", 0.0);
  CHECK(prompt_digest(a) == prompt_digest(b));
  CHECK(prompt_digest(a) != prompt_digest(c));
  CHECK(prompt_digest(a) != prompt_digest(d));
  CHECK(prompt_digest(a).rfind("fnv1a64:", 0) == 0);
  CHECK(prompt_digest(a).size() == 8 + 16);
  CHECK(canonical_prompt(b) == "[system] sys [user] hello world");
}

TEST_CASE("ledger counts, merges and hides retry keys from the contract") {
  CallLedger l;
  l.add({StageTag::answering, ModelKind::vlm});
  l.add({StageTag::answering, ModelKind::vlm}, 2);
  l.add({StageTag::paraphrase, ModelKind::llm, true});
  l.add({StageTag::judging, ModelKind::llm}, 0);
  CHECK(l.count(StageTag::answering, ModelKind::vlm) == 3);
  CHECK(l.count(StageTag::paraphrase, ModelKind::llm) == 0);
  CHECK(l.count(StageTag::paraphrase, ModelKind::llm, true) == 1);
  CHECK(l.total() == 4);
  CHECK(l.counts().size() == 2);  // zero adds are not stored

  auto contract = l.contract_view();
  CHECK(contract.total() == 3);

  CallLedger other;
  other.add({StageTag::answering, ModelKind::vlm});
  l.merge(other);
  CHECK(l.count(StageTag::answering, ModelKind::vlm) == 4);

  nlohmann::json j = l;
  CHECK(j["paraphrase/llm/retry"] == 1);
  CHECK(j.get<CallLedger>() == l);
  CHECK(parse_ledger_key("judging/llm") == LedgerKey{StageTag::judging, ModelKind::llm, false});
  CHECK_THROWS(parse_ledger_key("judging"));
}

TEST_CASE("backend charges once per call, retries transport errors with backoff") {
  using pda::testing::FlakyBackend;
  FlakyBackend flaky(2, RetryPolicy{3, std::chrono::milliseconds{1}});
  auto r = flaky.complete(make_llm_request(StageTag::aggregation, "x", "", "q", 0.0));
  CHECK(r.text == "ok");
  CHECK(flaky.attempts() == 3);
  CHECK(flaky.ledger_snapshot().count(StageTag::aggregation, ModelKind::llm) == 1);
  CHECK(r.backend_id == "flaky");

  FlakyBackend dead(10, RetryPolicy{3, std::chrono::milliseconds{0}});
  CHECK_THROWS_AS(dead.complete(make_llm_request(StageTag::aggregation, "x", "", "q", 0.0)), TransportError);
  CHECK(dead.attempts() == 4);  // first try plus three retries
  CHECK(dead.ledger_snapshot().total() == 1);
}

TEST_CASE("empty replies become the sentinel and invalid requests are rejected before charging") {
  pda::testing::QueueBackend q({"   "});
  CHECK(q.complete(make_llm_request(StageTag::paraphrase, "x", "", "q", 0.0)).text == "unclear");
  ChatRequest bad;
  CHECK_THROWS_AS(q.complete(bad), std::invalid_argument);
  CHECK(q.ledger_snapshot().total() == 1);
}

TEST_CASE("metered backend charges the shared meter and the inner backend") {
  pda::testing::QueueBackend inner({"a", "b"});
  auto meter = std::make_shared<AtomicLedger>();
  MeteredBackend m1(inner, meter), m2(inner, meter);
  m1.complete(make_llm_request(StageTag::paraphrase, "x", "", "q", 0.0));
  m2.complete(make_vlm_request(StageTag::answering, "x", "q", "i"));
  CHECK(meter->snapshot().total() == 2);
  CHECK(inner.ledger_snapshot().total() == 2);
  CHECK(m1.id() == "queue");
}
