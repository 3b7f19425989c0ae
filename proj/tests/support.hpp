#pragma once

#include <deque>
#include <mutex>
#include <string>
#include <vector>

#include "pda/backend.hpp"

namespace pda::testing {

// Replies with queued texts in order and keeps every request it saw.
class QueueBackend final : public Backend {
 public:
  explicit QueueBackend(std::vector<std::string> replies, std::string id = "queue")
      : Backend(std::move(id), RetryPolicy{0, std::chrono::milliseconds{0}}), replies_(replies.begin(), replies.end()) {}

  void push(std::string reply) {
    std::lock_guard<std::mutex> lock(mutex_);
    replies_.push_back(std::move(reply));
  }
  std::vector<ChatRequest> requests() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests_;
  }
  std::size_t remaining() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return replies_.size();
  }

 protected:
  ChatResponse send(const ChatRequest& request) override {
    std::lock_guard<std::mutex> lock(mutex_);
    requests_.push_back(request);
    if (replies_.empty()) throw BackendError("queue exhausted");
    auto text = std::move(replies_.front());
    replies_.pop_front();
    return {std::move(text), 1, {}};
  }

 private:
  mutable std::mutex mutex_;
  std::deque<std::string> replies_;
  std::vector<ChatRequest> requests_;
};

// Fails with a transport error a fixed number of times, then answers.
class FlakyBackend final : public Backend {
 public:
  FlakyBackend(int failures, RetryPolicy retry)
      : Backend("flaky", retry), failures_(failures) {}
  int attempts() const { return attempts_; }

 protected:
  ChatResponse send(const ChatRequest&) override {
    ++attempts_;
    if (attempts_ <= failures_) throw TransportError("connection reset");
    return {"ok", 1, {}};
  }

 private:
  int failures_;
  int attempts_ = 0;
};

}  // namespace pda::testing
