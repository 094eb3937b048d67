#pragma once

#include <functional>
#include <memory>
#include <string>

#include "chatlab/http_server.hpp"
#include "chatlab/service.hpp"

namespace chatlab {

/// Everything `chatlab serve` needs, read from CHATLAB_* environment variables:
///
///   CHATLAB_PROVIDER             mock | http (default mock)
///   CHATLAB_PROVIDER_BASE_URL    e.g. https://api.openai.com/v1
///   CHATLAB_PROVIDER_API_KEY
///   CHATLAB_STORAGE              journal file path; empty keeps data in memory
///   CHATLAB_ADMIN_USER           default "admin"
///   CHATLAB_ADMIN_PASSWORD_HASH  output of `chatlab hash-password`
///   CHATLAB_ADMIN_PASSWORD       hashed at startup when no hash is given
///   CHATLAB_PUBLIC_BASE_URL
///   CHATLAB_SEED                 fixes allocation and id generation
///   CHATLAB_ADMIN_TOKEN_TTL_MIN, CHATLAB_PARTICIPANT_TOKEN_TTL_MIN
///   CHATLAB_SESSION_AUTO_CLOSE_MIN
///   CHATLAB_HOST, CHATLAB_PORT, CHATLAB_STATIC_DIR, CHATLAB_THREADS
struct RuntimeConfig {
  std::string provider = "mock";
  std::string provider_base_url;
  std::string provider_api_key;
  std::string storage;
  ServiceConfig service;
  ServerOptions server;
};

using EnvLookup = std::function<const char*(const char*)>;

/// Throws kInvalidArgument listing every bad or missing variable.
RuntimeConfig config_from_env(const EnvLookup& lookup);
RuntimeConfig config_from_env();

std::unique_ptr<ChatProvider> make_provider(const RuntimeConfig& config);

}  // namespace chatlab
