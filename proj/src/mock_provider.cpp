#include "chatlab/mock_provider.hpp"

namespace chatlab {

std::vector<std::string> MockProvider::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current += text[i];
    const bool at_space = text[i] == ' ';
    const bool next_is_space = i + 1 < text.size() && text[i + 1] == ' ';
    if (at_space && !next_is_space) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

void MockProvider::maybe_fail() {
  if (failures_left_ > 0) {
    --failures_left_;
    const char* what = failure_kind_ == ProviderError::Kind::kAuthentication ? "mock: invalid api key"
                       : failure_kind_ == ProviderError::Kind::kMalformed  ? "mock: malformed response"
                       : failure_kind_ == ProviderError::Kind::kRejected   ? "mock: request rejected"
                                                                           : "mock: connection refused";
    throw ProviderError(failure_kind_, what);
  }
}

std::string MockProvider::next_content(const ProviderRequest& request) {
  if (!queued_.empty()) {
    auto reply = std::move(queued_.front());
    queued_.pop_front();
    return reply;
  }
  if (responder_) return responder_(request);
  for (auto it = request.turns.rbegin(); it != request.turns.rend(); ++it) {
    if (it->role == TurnRole::kUser) return it->content;
  }
  return {};
}

ProviderReply MockProvider::complete(const ProviderRequest& request) {
  std::lock_guard lock(mutex_);
  requests_.push_back(request);
  maybe_fail();
  ProviderReply reply;
  reply.content = next_content(request);
  reply.finish_reason = finish_reason_;
  return reply;
}

bool MockProvider::supports_streaming() const {
  std::lock_guard lock(mutex_);
  return streaming_;
}

ProviderReply MockProvider::stream(const ProviderRequest& request, const DeltaSink& on_delta) {
  std::vector<std::string> chunks;
  int interrupt_after;
  ProviderReply reply;
  {
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    maybe_fail();
    reply.content = next_content(request);
    reply.finish_reason = finish_reason_;
    chunks = chunker_ ? chunker_(reply.content) : split_words(reply.content);
    interrupt_after = interrupt_after_;
    interrupt_after_ = -1;
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (interrupt_after >= 0 && static_cast<int>(i) == interrupt_after) {
      throw ProviderError(ProviderError::Kind::kTransient, "mock: stream interrupted");
    }
    on_delta(chunks[i]);
  }
  if (interrupt_after >= 0 && static_cast<int>(chunks.size()) <= interrupt_after) {
    throw ProviderError(ProviderError::Kind::kTransient, "mock: stream interrupted");
  }
  return reply;
}

void MockProvider::set_streaming(bool enabled) {
  std::lock_guard lock(mutex_);
  streaming_ = enabled;
}

void MockProvider::set_responder(Responder responder) {
  std::lock_guard lock(mutex_);
  responder_ = std::move(responder);
}

void MockProvider::push_reply(std::string reply) {
  std::lock_guard lock(mutex_);
  queued_.push_back(std::move(reply));
}

void MockProvider::set_chunker(Chunker chunker) {
  std::lock_guard lock(mutex_);
  chunker_ = std::move(chunker);
}

void MockProvider::set_finish_reason(FinishReason reason) {
  std::lock_guard lock(mutex_);
  finish_reason_ = reason;
}

void MockProvider::fail_next(int calls, ProviderError::Kind kind) {
  std::lock_guard lock(mutex_);
  failures_left_ = calls;
  failure_kind_ = kind;
}

void MockProvider::interrupt_next_stream_after(int chunks) {
  std::lock_guard lock(mutex_);
  interrupt_after_ = chunks;
}

std::vector<ProviderRequest> MockProvider::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

int MockProvider::call_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<int>(requests_.size());
}

}  // namespace chatlab
