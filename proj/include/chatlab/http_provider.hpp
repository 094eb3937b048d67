#pragma once

#include <chrono>
#include <string>

#include "chatlab/agent_runtime.hpp"

namespace chatlab {

/// Client for OpenAI-style chat-completion endpoints (POST {base_url}/chat/completions).
class HttpChatProvider : public ChatProvider {
 public:
  struct Options {
    std::string base_url;  // e.g. https://api.openai.com/v1
    std::string api_key;
    std::string path = "/chat/completions";
    std::chrono::seconds timeout{60};
  };

  explicit HttpChatProvider(Options options);

  ProviderReply complete(const ProviderRequest& request) override;
  bool supports_streaming() const override { return true; }
  ProviderReply stream(const ProviderRequest& request, const DeltaSink& on_delta) override;

  /// Reads choices[0].message.content, finish_reason and usage from a response body.
  static ProviderReply parse_completion(const std::string& body);

 private:
  Options options_;
  std::string origin_;       // scheme://host[:port]
  std::string path_prefix_;  // path part of base_url
};

}  // namespace chatlab
