#include "chatlab/auth.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <charconv>
#include <vector>

#include "chatlab/error.hpp"

namespace chatlab {

namespace {

std::string to_hex(const unsigned char* data, std::size_t size) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(size * 2);
  for (std::size_t i = 0; i < size; ++i) {
    out += kHex[data[i] >> 4];
    out += kHex[data[i] & 0xF];
  }
  return out;
}

std::optional<std::vector<unsigned char>> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) return std::nullopt;
  std::vector<unsigned char> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(hex.data() + 2 * i, hex.data() + 2 * i + 2, value, 16);
    if (ec != std::errc{} || ptr != hex.data() + 2 * i + 2) return std::nullopt;
    out[i] = static_cast<unsigned char>(value);
  }
  return out;
}

std::vector<unsigned char> derive(std::string_view password, const std::vector<unsigned char>& salt, int iterations,
                                  std::size_t length) {
  std::vector<unsigned char> out(length);
  if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()), salt.data(),
                        static_cast<int>(salt.size()), iterations, EVP_sha256(), static_cast<int>(length),
                        out.data()) != 1) {
    throw Error(ErrorCode::kIo, "PBKDF2 failed");
  }
  return out;
}

}  // namespace

std::string random_token(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) throw Error(ErrorCode::kIo, "RAND_bytes failed");
  return to_hex(buf.data(), buf.size());
}

std::string hash_password(std::string_view password, int iterations) {
  std::vector<unsigned char> salt(16);
  if (RAND_bytes(salt.data(), static_cast<int>(salt.size())) != 1) throw Error(ErrorCode::kIo, "RAND_bytes failed");
  const auto hash = derive(password, salt, iterations, 32);
  return "pbkdf2-sha256$" + std::to_string(iterations) + "$" + to_hex(salt.data(), salt.size()) + "$" +
         to_hex(hash.data(), hash.size());
}

bool constant_time_equals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  return CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

bool verify_password(std::string_view password, std::string_view encoded) {
  constexpr std::string_view kScheme = "pbkdf2-sha256$";
  if (encoded.substr(0, kScheme.size()) != kScheme) return false;
  encoded.remove_prefix(kScheme.size());
  const auto first = encoded.find('$');
  const auto second = encoded.find('$', first == std::string_view::npos ? first : first + 1);
  if (first == std::string_view::npos || second == std::string_view::npos) return false;
  int iterations = 0;
  const auto iter_text = encoded.substr(0, first);
  auto [ptr, ec] = std::from_chars(iter_text.data(), iter_text.data() + iter_text.size(), iterations);
  if (ec != std::errc{} || iterations < 1) return false;
  auto salt = from_hex(encoded.substr(first + 1, second - first - 1));
  auto expected = from_hex(encoded.substr(second + 1));
  if (!salt || !expected || expected->empty()) return false;
  const auto actual = derive(password, *salt, iterations, expected->size());
  return CRYPTO_memcmp(actual.data(), expected->data(), actual.size()) == 0;
}

std::string TokenRegistry::issue(const TokenGrant& grant) {
  auto token = random_token();
  std::lock_guard lock(mutex_);
  grants_[token] = grant;
  return token;
}

std::optional<TokenGrant> TokenRegistry::resolve(std::string_view token, Timestamp at) const {
  std::lock_guard lock(mutex_);
  auto it = grants_.find(std::string(token));
  if (it == grants_.end() || it->second.expires_at <= at) return std::nullopt;
  return it->second;
}

void TokenRegistry::revoke(std::string_view token) {
  std::lock_guard lock(mutex_);
  grants_.erase(std::string(token));
}

void TokenRegistry::purge_expired(Timestamp at) {
  std::lock_guard lock(mutex_);
  std::erase_if(grants_, [at](const auto& entry) { return entry.second.expires_at <= at; });
}

LoginRateLimiter::LoginRateLimiter(int max_failures, std::chrono::milliseconds window,
                                   std::chrono::milliseconds lockout)
    : max_failures_(max_failures), window_(window), lockout_(lockout) {}

bool LoginRateLimiter::blocked(const std::string& client, Timestamp at) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(client);
  return it != entries_.end() && it->second.locked_until && at < *it->second.locked_until;
}

void LoginRateLimiter::record_failure(const std::string& client, Timestamp at) {
  std::lock_guard lock(mutex_);
  auto& entry = entries_[client];
  if (entry.locked_until && at >= *entry.locked_until) entry = {};
  if (entry.failures == 0 || at - entry.window_start > window_) {
    entry.failures = 0;
    entry.window_start = at;
  }
  entry.failures += 1;
  if (entry.failures >= max_failures_) entry.locked_until = at + lockout_;
}

void LoginRateLimiter::record_success(const std::string& client) {
  std::lock_guard lock(mutex_);
  entries_.erase(client);
}

}  // namespace chatlab
