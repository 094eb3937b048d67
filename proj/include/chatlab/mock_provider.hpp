#pragma once

#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "chatlab/agent_runtime.hpp"

namespace chatlab {

/// In-process provider for offline runs. By default it echoes the last user turn;
/// scripted replies, a responder function and fault injection override that.
class MockProvider : public ChatProvider {
 public:
  using Responder = std::function<std::string(const ProviderRequest&)>;
  using Chunker = std::function<std::vector<std::string>(const std::string&)>;

  MockProvider() = default;

  ProviderReply complete(const ProviderRequest& request) override;
  bool supports_streaming() const override;
  ProviderReply stream(const ProviderRequest& request, const DeltaSink& on_delta) override;

  void set_streaming(bool enabled);
  void set_responder(Responder responder);
  /// Queued replies are used first, one per call, before falling back to the responder.
  void push_reply(std::string reply);
  void set_chunker(Chunker chunker);
  void set_finish_reason(FinishReason reason);

  /// The next `calls` provider calls fail with `kind`.
  void fail_next(int calls, ProviderError::Kind kind = ProviderError::Kind::kTransient);
  /// The next streaming call delivers `chunks` chunks, then fails.
  void interrupt_next_stream_after(int chunks);

  std::vector<ProviderRequest> requests() const;
  int call_count() const;

  /// Splits after each run of spaces: "to be" → {"to ", "be"}.
  static std::vector<std::string> split_words(const std::string& text);

 private:
  std::string next_content(const ProviderRequest& request);
  void maybe_fail();

  mutable std::mutex mutex_;
  bool streaming_ = true;
  Responder responder_;
  std::deque<std::string> queued_;
  Chunker chunker_;
  FinishReason finish_reason_ = FinishReason::kStop;
  int failures_left_ = 0;
  ProviderError::Kind failure_kind_ = ProviderError::Kind::kTransient;
  int interrupt_after_ = -1;
  std::vector<ProviderRequest> requests_;
};

}  // namespace chatlab
