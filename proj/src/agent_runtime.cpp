#include "chatlab/agent_runtime.hpp"

#include <cmath>
#include <thread>

namespace chatlab {

std::string_view to_string(TurnRole role) {
  switch (role) {
    case TurnRole::kSystem: return "system";
    case TurnRole::kUser: return "user";
    case TurnRole::kAssistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStop: return "stop";
    case FinishReason::kLength: return "length";
    case FinishReason::kError: return "error";
  }
  return "error";
}

ProviderReply ChatProvider::stream(const ProviderRequest& request, const DeltaSink& on_delta) {
  auto reply = complete(request);
  if (!reply.content.empty()) on_delta(reply.content);
  return reply;
}

RetryPolicy RetryPolicy::immediate() {
  RetryPolicy policy;
  policy.initial_backoff = std::chrono::milliseconds(0);
  policy.sleep = [](std::chrono::milliseconds) {};
  return policy;
}

MessageRecord first_message(const AgentConfig& agent) {
  MessageRecord message;
  message.author = Author::kAgent;
  message.text = agent.first_chat_sentence;
  message.status = MessageStatus::kComplete;
  return message;
}

std::string wrap_user_text(const AgentConfig& agent, std::string_view user_text) {
  std::string out;
  if (!agent.before_user_sentence_prompt.empty()) {
    out += agent.before_user_sentence_prompt;
    out += '\n';
  }
  out += user_text;
  if (!agent.after_user_sentence_prompt.empty()) {
    out += '\n';
    out += agent.after_user_sentence_prompt;
  }
  return out;
}

ProviderRequest assemble_request(const AgentConfig& agent, const std::vector<MessageRecord>& history,
                                 std::string_view user_text) {
  ProviderRequest request;
  request.model_id = agent.model_id;
  request.sampling = agent.sampling;
  request.turns.reserve(history.size() + 2);
  request.turns.push_back({TurnRole::kSystem, agent.system_starter_prompt});
  for (const auto& message : history) {
    if (message.author == Author::kAgent) {
      request.turns.push_back({TurnRole::kAssistant, message.text});
    } else {
      request.turns.push_back({TurnRole::kUser, wrap_user_text(agent, message.text)});
    }
  }
  request.turns.push_back({TurnRole::kUser, wrap_user_text(agent, user_text)});
  return request;
}

namespace {

void wait(const RetryPolicy& policy, int failed_attempts) {
  const auto factor = std::pow(policy.multiplier, failed_attempts - 1);
  const auto delay = std::chrono::milliseconds(
      static_cast<std::chrono::milliseconds::rep>(static_cast<double>(policy.initial_backoff.count()) * factor));
  if (policy.sleep) {
    policy.sleep(delay);
  } else if (delay.count() > 0) {
    std::this_thread::sleep_for(delay);
  }
}

ProviderReply failure(std::string content, const std::string& why, int attempts) {
  ProviderReply reply;
  reply.content = std::move(content);
  reply.finish_reason = FinishReason::kError;
  reply.error = why;
  reply.attempts = attempts;
  return reply;
}

std::string describe_exhaustion(const ProviderError& e, int attempts) {
  return "provider unavailable after " + std::to_string(attempts) + " attempts: " + e.what();
}

}  // namespace

ProviderReply generate_reply(const ProviderRequest& request, ChatProvider& provider, const RetryPolicy& policy) {
  const int attempts = std::max(1, policy.max_attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      auto reply = provider.complete(request);
      reply.attempts = attempt;
      return reply;
    } catch (const ProviderError& e) {
      if (!e.retryable()) return failure("", e.what(), attempt);
      if (attempt >= attempts) return failure("", describe_exhaustion(e, attempt), attempt);
      wait(policy, attempt);
    }
  }
}

ProviderReply stream_reply(const ProviderRequest& request, ChatProvider& provider, const ChunkSink& sink,
                           const RetryPolicy& policy) {
  if (!provider.supports_streaming()) {
    auto reply = generate_reply(request, provider, policy);
    if (!reply.content.empty()) sink({reply.content, false});
    sink({"", true});
    return reply;
  }

  ProviderRequest streaming = request;
  streaming.stream = true;
  const int attempts = std::max(1, policy.max_attempts);
  std::string content;
  for (int attempt = 1;; ++attempt) {
    try {
      auto reply = provider.stream(streaming, [&](std::string_view delta) {
        if (delta.empty()) return;
        content += delta;
        sink({std::string(delta), false});
      });
      reply.content = content;
      reply.attempts = attempt;
      sink({"", true});
      return reply;
    } catch (const ProviderError& e) {
      // Once text has reached the participant a retry would duplicate it.
      const bool give_up = !content.empty() || !e.retryable() || attempt >= attempts;
      if (give_up) {
        sink({"", true});
        const std::string why = e.retryable() && content.empty() ? describe_exhaustion(e, attempt) : e.what();
        return failure(content, why, attempt);
      }
      wait(policy, attempt);
    }
  }
}

nlohmann::json to_wire(const ProviderRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& turn : request.turns) {
    messages.push_back({{"role", std::string(to_string(turn.role))}, {"content", turn.content}});
  }
  nlohmann::json body = {{"model", request.model_id},
                         {"messages", std::move(messages)},
                         {"temperature", request.sampling.temperature},
                         {"max_tokens", request.sampling.max_tokens},
                         {"top_p", request.sampling.top_p},
                         {"frequency_penalty", request.sampling.frequency_penalty},
                         {"presence_penalty", request.sampling.presence_penalty},
                         {"stream", request.stream}};
  if (!request.sampling.stop_sequences.empty()) body["stop"] = request.sampling.stop_sequences;
  return body;
}

}  // namespace chatlab
