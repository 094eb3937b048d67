#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

namespace chatlab {

/// Opaque identifier tagged by the kind of record it names.
template <class Tag>
class Id {
 public:
  Id() = default;
  explicit Id(std::string value) : value_(std::move(value)) {}

  const std::string& str() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }

  auto operator<=>(const Id&) const = default;

 private:
  std::string value_;
};

template <class Tag>
void to_json(nlohmann::json& j, const Id<Tag>& id) {
  j = id.str();
}

template <class Tag>
void from_json(const nlohmann::json& j, Id<Tag>& id) {
  id = Id<Tag>(j.get<std::string>());
}

using ExperimentId = Id<struct ExperimentTag>;
using AgentId = Id<struct AgentTag>;
using FormId = Id<struct FormTag>;
using SessionId = Id<struct SessionTag>;
using MessageId = Id<struct MessageTag>;

/// Thread-safe generator of prefixed random identifiers ("exp_3f9a...").
/// Seeded generators produce reproducible id sequences.
class IdGenerator {
 public:
  IdGenerator();
  explicit IdGenerator(std::uint64_t seed);

  std::string next(std::string_view prefix);

  template <class IdT>
  IdT next_id(std::string_view prefix) {
    return IdT(next(prefix));
  }

 private:
  std::mutex mutex_;
  std::mt19937_64 engine_;
};

}  // namespace chatlab

template <class Tag>
struct std::hash<chatlab::Id<Tag>> {
  std::size_t operator()(const chatlab::Id<Tag>& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
