#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chatlab/domain.hpp"

namespace chatlab {

enum class TurnRole { kSystem, kUser, kAssistant };
enum class FinishReason { kStop, kLength, kError };

std::string_view to_string(TurnRole role);
std::string_view to_string(FinishReason reason);

struct Turn {
  TurnRole role = TurnRole::kUser;
  std::string content;

  bool operator==(const Turn&) const = default;
};

struct ProviderRequest {
  std::string model_id;
  std::vector<Turn> turns;
  SamplingParams sampling;
  bool stream = false;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ProviderReply {
  std::string content;
  FinishReason finish_reason = FinishReason::kStop;
  std::optional<TokenUsage> usage;
  std::string error;  // set when finish_reason is kError
  int attempts = 0;   // provider calls spent producing this reply
};

struct StreamChunk {
  std::string delta;
  bool terminal = false;
};

using DeltaSink = std::function<void(std::string_view delta)>;
using ChunkSink = std::function<void(const StreamChunk& chunk)>;

class ProviderError : public std::runtime_error {
 public:
  enum class Kind {
    kTransient,       // connection refused, timeout, 429, 5xx: retried
    kAuthentication,  // 401/403: not retried
    kRejected,        // other 4xx: not retried
    kMalformed,       // unparseable response body: not retried
  };

  ProviderError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }
  bool retryable() const noexcept { return kind_ == Kind::kTransient; }

 private:
  Kind kind_;
};

/// A chat-completion backend.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;

  /// One non-streaming completion. Throws ProviderError.
  virtual ProviderReply complete(const ProviderRequest& request) = 0;

  virtual bool supports_streaming() const { return false; }

  /// Streams deltas in order and returns the final reply. Throws ProviderError;
  /// deltas delivered before the failure stay delivered.
  virtual ProviderReply stream(const ProviderRequest& request, const DeltaSink& on_delta);
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to std::this_thread::sleep_for

  static RetryPolicy immediate();  // same attempt budget, no waiting
};

/// The agent's scripted opener; no provider call is made.
MessageRecord first_message(const AgentConfig& agent);

/// before ⊕ "\n" ⊕ text ⊕ "\n" ⊕ after, omitting empty wrapper parts and their separators.
std::string wrap_user_text(const AgentConfig& agent, std::string_view user_text);

/// [system starter] + history (agent → assistant as displayed, user → user re-wrapped)
/// + the wrapped new user turn.
ProviderRequest assemble_request(const AgentConfig& agent, const std::vector<MessageRecord>& history,
                                 std::string_view user_text);

/// Calls the provider with bounded exponential backoff on transient failures. Never
/// throws ProviderError: exhaustion or a permanent failure yields finish_reason kError.
ProviderReply generate_reply(const ProviderRequest& request, ChatProvider& provider,
                             const RetryPolicy& policy = {});

/// Streams a reply into `sink`: content chunks in order, then exactly one terminal
/// chunk. Falls back to generate_reply when the provider cannot stream. The returned
/// content always equals the concatenated deltas.
ProviderReply stream_reply(const ProviderRequest& request, ChatProvider& provider, const ChunkSink& sink,
                           const RetryPolicy& policy = {});

/// OpenAI-style chat-completion request body.
nlohmann::json to_wire(const ProviderRequest& request);

}  // namespace chatlab
