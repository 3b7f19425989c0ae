#include "pda/backend.hpp"

#include <thread>

namespace pda {

Backend::Backend(std::string id, RetryPolicy retry)
    : id_(std::move(id)), retry_(retry), ledger_(std::make_shared<AtomicLedger>()) {}

ChatResponse Backend::complete(const ChatRequest& request) {
  request.validate();
  ledger_->record(LedgerKey{request.stage_tag, request.model_kind, request.reprompt});

  auto backoff = retry_.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      auto started = std::chrono::steady_clock::now();
      ChatResponse response = send(request);
      if (response.latency_ms == 0) {
        response.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - started)
                                  .count();
      }
      if (response.backend_id.empty()) response.backend_id = id_;
      if (collapse_whitespace(response.text).empty()) response.text = "unclear";
      return response;
    } catch (const TransportError&) {
      if (attempt >= retry_.max_retries) throw;
      if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
}

MeteredBackend::MeteredBackend(Backend& inner, std::shared_ptr<AtomicLedger> meter)
    : Backend(inner.id(), RetryPolicy{0, std::chrono::milliseconds{0}}), inner_(inner) {
  share_ledger(std::move(meter));
}

}  // namespace pda
