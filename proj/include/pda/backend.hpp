#pragma once

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>

#include "pda/chat.hpp"
#include "pda/ledger.hpp"

namespace pda {

// Base of every failure raised by a backend.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Network-level failure; complete() retries these with backoff.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Replay script has no entry for the request. Never retried.
class ReplayMiss : public BackendError {
 public:
  using BackendError::BackendError;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{250};
};

// Uniform chat-completion interface. Every complete() call is charged to the
// ledger exactly once, before dispatch, so failed and malformed calls count.
class Backend {
 public:
  explicit Backend(std::string id, RetryPolicy retry = {});
  virtual ~Backend() = default;

  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  ChatResponse complete(const ChatRequest& request);

  CallLedger ledger_snapshot() const { return ledger_->snapshot(); }
  const std::string& id() const { return id_; }
  const RetryPolicy& retry_policy() const { return retry_; }

 protected:
  // Backends report refusals as empty text; complete() maps that to
  // "unclear".
  virtual ChatResponse send(const ChatRequest& request) = 0;

  // Lets a decorator charge an external ledger in addition to its own.
  void share_ledger(std::shared_ptr<AtomicLedger> ledger) { ledger_ = std::move(ledger); }

 private:
  std::string id_;
  RetryPolicy retry_;
  std::shared_ptr<AtomicLedger> ledger_;
};

// Routes requests to an inner backend while charging a shared, run-local
// ledger. One meter is shared by all roles of a single query so the decision
// record carries the calls of that query only.
class MeteredBackend final : public Backend {
 public:
  MeteredBackend(Backend& inner, std::shared_ptr<AtomicLedger> meter);

 protected:
  ChatResponse send(const ChatRequest& request) override { return inner_.complete(request); }

 private:
  Backend& inner_;
};

}  // namespace pda
