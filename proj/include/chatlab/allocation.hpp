#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chatlab/domain.hpp"

namespace chatlab {

enum class QuotaDecision { kAllowed, kLastMessage, kDenied };

std::string_view to_string(QuotaDecision decision);

struct Admission {
  bool admitted = false;
  AgentId agent_id;    // set when admitted
  std::string reason;  // set when rejected: "experiment full", "experiment inactive", "username taken"

  static Admission accept(AgentId agent) { return {true, std::move(agent), {}}; }
  static Admission reject(std::string why) { return {false, {}, std::move(why)}; }
};

struct ExperimentCounters {
  int participants_admitted = 0;
  std::map<AgentId, int> per_agent_counts;
  std::map<std::string, int> per_participant_conversations;
};

/// Draws a condition with probability weight_percent/100. The draw is an unbiased
/// integer in [0, 100) taken from the engine, so a seeded engine reproduces it exactly.
AgentId assign_condition(const ExperimentConfig& config, std::mt19937_64& rng);

/// Counts user-authored messages against max_messages_per_interaction.
/// Throws if the session is already finished.
QuotaDecision check_message_quota(const ConversationSession& session, const Limit& limit);

/// Assigns conditions and enforces participant and conversation boundaries.
/// Every mutating call runs under a per-experiment lock, so check-and-increment
/// sequences are linearizable.
class AllocationEngine {
 public:
  /// With a seed, each experiment's draw sequence is a pure function of (seed, experiment id).
  explicit AllocationEngine(std::optional<std::uint64_t> seed = std::nullopt);

  /// Admits `username` or says why not. `commit` runs inside the critical section
  /// once a condition is drawn; if it throws, the admission is rolled back and the
  /// exception propagates.
  Admission admit_participant(const ExperimentConfig& config, std::string_view username,
                              const std::function<void(const AgentId&)>& commit = {});

  /// Read-only conversation quota check. Throws kNotFound for unknown participants.
  QuotaDecision check_conversation_quota(const ExperimentConfig& config, std::string_view username) const;

  /// Atomic check-and-increment of the started-conversation count. Returns kAllowed
  /// when a conversation slot was taken, kDenied otherwise.
  QuotaDecision reserve_conversation(const ExperimentConfig& config, std::string_view username);

  /// Undo a reservation whose session could not be created.
  void release_conversation(const ExperimentId& experiment, std::string_view username);

  std::optional<AgentId> condition_of(const ExperimentId& experiment, std::string_view username) const;
  ExperimentCounters counters(const ExperimentId& experiment) const;

  /// Rebuilds an experiment's counters from persisted participants (username, agent)
  /// and per-participant session counts.
  void restore(const ExperimentId& experiment, const std::vector<std::pair<std::string, AgentId>>& participants,
               const std::map<std::string, int>& conversations);

  void forget(const ExperimentId& experiment);

 private:
  struct State {
    mutable std::mutex mutex;
    ExperimentCounters counters;
    std::map<std::string, AgentId, std::less<>> assignments;
    std::mt19937_64 rng;
  };

  State& state_for(const ExperimentId& experiment);
  const State* find_state(const ExperimentId& experiment) const;
  std::mt19937_64 make_rng(const ExperimentId& experiment, std::uint64_t salt) const;

  std::optional<std::uint64_t> seed_;
  mutable std::shared_mutex registry_mutex_;
  std::map<ExperimentId, std::unique_ptr<State>> states_;
};

}  // namespace chatlab
