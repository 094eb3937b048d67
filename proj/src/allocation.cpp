#include "chatlab/allocation.hpp"

#include <limits>

namespace chatlab {

std::string_view to_string(QuotaDecision decision) {
  switch (decision) {
    case QuotaDecision::kAllowed: return "allowed";
    case QuotaDecision::kLastMessage: return "last_message";
    case QuotaDecision::kDenied: return "denied";
  }
  return "denied";
}

namespace {

// Uniform integer in [0, bound) by rejection, independent of library distributions.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return draw % bound;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

bool reached(const Limit& limit, int count) { return limit && count >= *limit; }

}  // namespace

AgentId assign_condition(const ExperimentConfig& config, std::mt19937_64& rng) {
  if (config.agents.size() == 1) return config.agents.front().agent_id;
  const auto point = static_cast<int>(uniform_below(rng, 100));
  int cumulative = 0;
  for (const auto& entry : config.agents) {
    cumulative += entry.weight_percent;
    if (point < cumulative) return entry.agent_id;
  }
  return config.agents.back().agent_id;
}

QuotaDecision check_message_quota(const ConversationSession& session, const Limit& limit) {
  if (!session.is_open()) throw Error(ErrorCode::kConflict, "session is finished");
  if (!limit) return QuotaDecision::kAllowed;
  const int sent = session.count_messages(Author::kUser);
  if (sent >= *limit) return QuotaDecision::kDenied;
  if (sent + 1 == *limit) return QuotaDecision::kLastMessage;
  return QuotaDecision::kAllowed;
}

AllocationEngine::AllocationEngine(std::optional<std::uint64_t> seed) : seed_(seed) {}

std::mt19937_64 AllocationEngine::make_rng(const ExperimentId& experiment, std::uint64_t salt) const {
  if (!seed_) return std::mt19937_64(std::random_device{}() ^ (std::uint64_t{std::random_device{}()} << 32));
  const std::uint64_t id_hash = fnv1a(experiment.str());
  std::seed_seq seq{static_cast<std::uint32_t>(*seed_), static_cast<std::uint32_t>(*seed_ >> 32),
                    static_cast<std::uint32_t>(id_hash), static_cast<std::uint32_t>(id_hash >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

AllocationEngine::State& AllocationEngine::state_for(const ExperimentId& experiment) {
  {
    std::shared_lock lock(registry_mutex_);
    if (auto it = states_.find(experiment); it != states_.end()) return *it->second;
  }
  std::unique_lock lock(registry_mutex_);
  auto& slot = states_[experiment];
  if (!slot) {
    slot = std::make_unique<State>();
    slot->rng = make_rng(experiment, 0);
  }
  return *slot;
}

const AllocationEngine::State* AllocationEngine::find_state(const ExperimentId& experiment) const {
  std::shared_lock lock(registry_mutex_);
  auto it = states_.find(experiment);
  return it == states_.end() ? nullptr : it->second.get();
}

Admission AllocationEngine::admit_participant(const ExperimentConfig& config, std::string_view username,
                                              const std::function<void(const AgentId&)>& commit) {
  State& state = state_for(config.id);
  std::lock_guard lock(state.mutex);
  if (config.status != ExperimentStatus::kActive) return Admission::reject("experiment inactive");
  if (state.assignments.contains(username)) return Admission::reject("username taken");
  if (reached(config.boundaries.max_participants, state.counters.participants_admitted)) {
    return Admission::reject("experiment full");
  }

  const auto rng_before = state.rng;
  AgentId agent = assign_condition(config, state.rng);
  if (commit) {
    try {
      commit(agent);
    } catch (...) {
      state.rng = rng_before;
      throw;
    }
  }
  const std::string name(username);
  state.assignments.emplace(name, agent);
  state.counters.participants_admitted += 1;
  state.counters.per_agent_counts[agent] += 1;
  state.counters.per_participant_conversations.emplace(name, 0);
  return Admission::accept(std::move(agent));
}

QuotaDecision AllocationEngine::check_conversation_quota(const ExperimentConfig& config,
                                                         std::string_view username) const {
  const State* state = find_state(config.id);
  if (!state) throw Error(ErrorCode::kNotFound, "unknown participant '" + std::string(username) + "'");
  std::lock_guard lock(state->mutex);
  auto it = state->counters.per_participant_conversations.find(std::string(username));
  if (it == state->counters.per_participant_conversations.end()) {
    throw Error(ErrorCode::kNotFound, "unknown participant '" + std::string(username) + "'");
  }
  return reached(config.boundaries.max_conversations_per_participant, it->second) ? QuotaDecision::kDenied
                                                                                   : QuotaDecision::kAllowed;
}

QuotaDecision AllocationEngine::reserve_conversation(const ExperimentConfig& config, std::string_view username) {
  State& state = state_for(config.id);
  std::lock_guard lock(state.mutex);
  auto it = state.counters.per_participant_conversations.find(std::string(username));
  if (it == state.counters.per_participant_conversations.end()) {
    throw Error(ErrorCode::kNotFound, "unknown participant '" + std::string(username) + "'");
  }
  if (reached(config.boundaries.max_conversations_per_participant, it->second)) return QuotaDecision::kDenied;
  it->second += 1;
  return QuotaDecision::kAllowed;
}

void AllocationEngine::release_conversation(const ExperimentId& experiment, std::string_view username) {
  State& state = state_for(experiment);
  std::lock_guard lock(state.mutex);
  auto it = state.counters.per_participant_conversations.find(std::string(username));
  if (it != state.counters.per_participant_conversations.end() && it->second > 0) it->second -= 1;
}

std::optional<AgentId> AllocationEngine::condition_of(const ExperimentId& experiment, std::string_view username) const {
  const State* state = find_state(experiment);
  if (!state) return std::nullopt;
  std::lock_guard lock(state->mutex);
  auto it = state->assignments.find(username);
  if (it == state->assignments.end()) return std::nullopt;
  return it->second;
}

ExperimentCounters AllocationEngine::counters(const ExperimentId& experiment) const {
  const State* state = find_state(experiment);
  if (!state) return {};
  std::lock_guard lock(state->mutex);
  return state->counters;
}

void AllocationEngine::restore(const ExperimentId& experiment,
                               const std::vector<std::pair<std::string, AgentId>>& participants,
                               const std::map<std::string, int>& conversations) {
  State& state = state_for(experiment);
  std::lock_guard lock(state.mutex);
  state.assignments.clear();
  state.counters = {};
  for (const auto& [username, agent] : participants) {
    state.assignments.emplace(username, agent);
    state.counters.participants_admitted += 1;
    state.counters.per_agent_counts[agent] += 1;
    auto it = conversations.find(username);
    state.counters.per_participant_conversations[username] = it == conversations.end() ? 0 : it->second;
  }
  // A restarted engine must not replay the draws already handed out.
  state.rng = make_rng(experiment, static_cast<std::uint64_t>(participants.size()));
}

void AllocationEngine::forget(const ExperimentId& experiment) {
  std::unique_lock lock(registry_mutex_);
  states_.erase(experiment);
}

}  // namespace chatlab
