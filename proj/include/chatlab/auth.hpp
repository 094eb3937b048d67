#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "chatlab/ids.hpp"
#include "chatlab/time.hpp"

namespace chatlab {

/// Encoded as "pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>".
std::string hash_password(std::string_view password, int iterations = 200000);

/// Constant-time comparison against an encoded hash. Malformed encodings never match.
bool verify_password(std::string_view password, std::string_view encoded_hash);

bool constant_time_equals(std::string_view a, std::string_view b);

/// Hex string from a cryptographically secure generator.
std::string random_token(std::size_t bytes = 32);

struct AdminCredentials {
  std::string username;
  std::string password_hash;  // never the clear-text password
};

enum class TokenKind { kAdmin, kParticipant };

struct TokenGrant {
  TokenKind kind = TokenKind::kParticipant;
  ExperimentId experiment;  // participant tokens only
  std::string username;
  Timestamp expires_at{};
};

class TokenRegistry {
 public:
  std::string issue(const TokenGrant& grant);
  /// The grant if the token exists and has not expired at `at`.
  std::optional<TokenGrant> resolve(std::string_view token, Timestamp at) const;
  void revoke(std::string_view token);
  void purge_expired(Timestamp at);

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, TokenGrant> grants_;
};

/// Locks a client out for `lockout` after `max_failures` failed logins within `window`.
class LoginRateLimiter {
 public:
  LoginRateLimiter(int max_failures, std::chrono::milliseconds window, std::chrono::milliseconds lockout);

  bool blocked(const std::string& client, Timestamp at) const;
  void record_failure(const std::string& client, Timestamp at);
  void record_success(const std::string& client);

 private:
  struct Entry {
    int failures = 0;
    Timestamp window_start{};
    std::optional<Timestamp> locked_until;
  };

  int max_failures_;
  std::chrono::milliseconds window_;
  std::chrono::milliseconds lockout_;
  mutable std::mutex mutex_;
  std::map<std::string, Entry> entries_;
};

}  // namespace chatlab
