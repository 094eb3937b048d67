#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "chatlab/time.hpp"

namespace chatlab::detail {

template <class T>
nlohmann::json optional_to_json(const std::optional<T>& value) {
  if (!value) return nullptr;
  return nlohmann::json(*value);
}

template <class T>
std::optional<T> optional_from_json(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->template get<T>();
}

inline nlohmann::json timestamp_to_json(Timestamp t) { return format_timestamp(t); }

inline Timestamp timestamp_from_json(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return Timestamp{};
  return parse_timestamp(it->get<std::string>());
}

inline nlohmann::json optional_timestamp_to_json(const std::optional<Timestamp>& t) {
  if (!t) return nullptr;
  return format_timestamp(*t);
}

inline std::optional<Timestamp> optional_timestamp_from_json(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return parse_timestamp(it->get<std::string>());
}

}  // namespace chatlab::detail
