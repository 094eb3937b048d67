#include "chatlab/config.hpp"

#include <charconv>
#include <cstdlib>

#include "chatlab/http_provider.hpp"
#include "chatlab/mock_provider.hpp"

namespace chatlab {

namespace {

template <typename T>
std::optional<T> number(const char* text) {
  T value{};
  const std::string_view s(text);
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || end != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace

RuntimeConfig config_from_env(const EnvLookup& lookup) {
  RuntimeConfig config;
  Violations violations;
  auto get = [&](const char* name) -> std::optional<std::string> {
    const char* v = lookup(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  auto get_number = [&]<typename T>(const char* name, T lo, T hi) -> std::optional<T> {
    auto text = get(name);
    if (!text) return std::nullopt;
    auto value = number<T>(text->c_str());
    if (!value || *value < lo || *value > hi) {
      violations.push_back({name, "not a number in range"});
      return std::nullopt;
    }
    return value;
  };

  config.provider = get("CHATLAB_PROVIDER").value_or("mock");
  if (config.provider != "mock" && config.provider != "http") {
    violations.push_back({"CHATLAB_PROVIDER", "must be mock or http"});
  }
  config.provider_base_url = get("CHATLAB_PROVIDER_BASE_URL").value_or("");
  config.provider_api_key = get("CHATLAB_PROVIDER_API_KEY").value_or("");
  if (config.provider == "http" && config.provider_base_url.empty()) {
    violations.push_back({"CHATLAB_PROVIDER_BASE_URL", "required for the http provider"});
  }
  config.storage = get("CHATLAB_STORAGE").value_or("");

  config.service.admin.username = get("CHATLAB_ADMIN_USER").value_or("admin");
  if (auto hash = get("CHATLAB_ADMIN_PASSWORD_HASH")) {
    config.service.admin.password_hash = *hash;
  } else if (auto password = get("CHATLAB_ADMIN_PASSWORD")) {
    config.service.admin.password_hash = hash_password(*password);
  } else {
    violations.push_back({"CHATLAB_ADMIN_PASSWORD_HASH", "admin credentials are required"});
  }
  config.service.public_base_url = get("CHATLAB_PUBLIC_BASE_URL").value_or("");
  if (auto seed = get_number.operator()<std::uint64_t>("CHATLAB_SEED", 0, UINT64_MAX)) config.service.seed = seed;

  constexpr long kMaxMinutes = 60L * 24 * 365;
  if (auto m = get_number.operator()<long>("CHATLAB_ADMIN_TOKEN_TTL_MIN", 1, kMaxMinutes)) {
    config.service.admin_token_ttl = std::chrono::minutes(*m);
  }
  if (auto m = get_number.operator()<long>("CHATLAB_PARTICIPANT_TOKEN_TTL_MIN", 1, kMaxMinutes)) {
    config.service.participant_token_ttl = std::chrono::minutes(*m);
  }
  if (auto m = get_number.operator()<long>("CHATLAB_SESSION_AUTO_CLOSE_MIN", 1, kMaxMinutes)) {
    config.service.session_auto_close = std::chrono::minutes(*m);
  }

  config.server.host = get("CHATLAB_HOST").value_or("0.0.0.0");
  if (auto port = get_number.operator()<int>("CHATLAB_PORT", 0, 65535)) config.server.port = *port;
  if (auto threads = get_number.operator()<int>("CHATLAB_THREADS", 1, 1024)) config.server.threads = *threads;
  if (auto dir = get("CHATLAB_STATIC_DIR")) config.server.static_dir = *dir;

  if (!violations.empty()) throw Error(ErrorCode::kInvalidArgument, "invalid configuration", violations);
  return config;
}

RuntimeConfig config_from_env() {
  return config_from_env([](const char* name) { return std::getenv(name); });
}

std::unique_ptr<ChatProvider> make_provider(const RuntimeConfig& config) {
  if (config.provider == "http") {
    HttpChatProvider::Options options;
    options.base_url = config.provider_base_url;
    options.api_key = config.provider_api_key;
    return std::make_unique<HttpChatProvider>(options);
  }
  return std::make_unique<MockProvider>();
}

}  // namespace chatlab
