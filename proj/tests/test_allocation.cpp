#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <thread>

#include "chatlab/allocation.hpp"
#include "support.hpp"

using namespace chatlab;

TEST_CASE("weighted assignment stays within a 3-sigma binomial band") {
  for (int weight : {50, 70, 10}) {
    CAPTURE(weight);
    const auto config = testing::make_experiment("e", weight);
    std::mt19937_64 rng(2024);
    const int n = 20000;
    int a = 0;
    for (int i = 0; i < n; ++i) a += assign_condition(config, rng) == AgentId("agent-a");
    const double p = weight / 100.0;
    CHECK(std::abs(double(a) / n - p) <= testing::three_sigma_share(p, n));
  }
}

TEST_CASE("zero weight is never drawn, a single agent always is") {
  auto config = testing::make_experiment("e", 0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) CHECK(assign_condition(config, rng) == AgentId("agent-b"));
  config.agents = {{AgentId("solo"), 100}};
  CHECK(assign_condition(config, rng) == AgentId("solo"));
}

TEST_CASE("message quota boundary") {
  ConversationSession session;
  auto add = [&](Author a) {
    MessageRecord m;
    m.author = a;
    session.messages.push_back(m);
  };
  add(Author::kAgent);
  CHECK(check_message_quota(session, std::nullopt) == QuotaDecision::kAllowed);
  CHECK(check_message_quota(session, 3) == QuotaDecision::kAllowed);
  CHECK(check_message_quota(session, 1) == QuotaDecision::kLastMessage);
  add(Author::kUser);
  add(Author::kAgent);
  add(Author::kUser);
  add(Author::kAgent);
  CHECK(check_message_quota(session, 3) == QuotaDecision::kLastMessage);
  CHECK(check_message_quota(session, 2) == QuotaDecision::kDenied);
  session.finished_at = Timestamp{};
  CHECK_THROWS_AS(check_message_quota(session, 3), Error);
}

TEST_CASE("admission rejects taken usernames, full and inactive experiments") {
  AllocationEngine engine(3);
  auto config = testing::make_experiment("e");
  config.boundaries.max_participants = 2;
  CHECK(engine.admit_participant(config, "u1", nullptr).admitted);
  const auto dup = engine.admit_participant(config, "u1", nullptr);
  CHECK_FALSE(dup.admitted);
  CHECK(dup.reason == "username taken");
  CHECK(engine.admit_participant(config, "u2", nullptr).admitted);
  CHECK(engine.admit_participant(config, "u3", nullptr).reason == "experiment full");
  config.status = ExperimentStatus::kInactive;
  CHECK(engine.admit_participant(config, "u4", nullptr).reason == "experiment inactive");
  CHECK(engine.counters(config.id).participants_admitted == 2);
}

TEST_CASE("a failing commit leaves no trace") {
  AllocationEngine engine(3);
  const auto config = testing::make_experiment("e");
  CHECK_THROWS(engine.admit_participant(config, "u1", [](const AgentId&) { throw std::runtime_error("disk"); }));
  CHECK(engine.counters(config.id).participants_admitted == 0);
  CHECK_FALSE(engine.condition_of(config.id, "u1").has_value());
  CHECK(engine.admit_participant(config, "u1", nullptr).admitted);
}

TEST_CASE("concurrent admission never exceeds the participant limit") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AllocationEngine engine(seed);
    auto config = testing::make_experiment("e");
    config.boundaries.max_participants = 25;
    std::atomic<int> admitted{0};
    std::atomic<int> full{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 16; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 10; ++i) {
          const auto result = engine.admit_participant(config, "u" + std::to_string(t * 100 + i), nullptr);
          (result.admitted ? admitted : full) += 1;
        }
      });
    }
    for (auto& t : threads) t.join();
    CHECK(admitted == 25);
    CHECK(full == 135);
    const auto counters = engine.counters(config.id);
    int per_agent = 0;
    for (const auto& [agent, n] : counters.per_agent_counts) per_agent += n;
    CHECK(per_agent == 25);
  }
}

TEST_CASE("conversation quota") {
  AllocationEngine engine(1);
  auto config = testing::make_experiment("e");
  config.boundaries.max_conversations_per_participant = 1;
  engine.admit_participant(config, "u", nullptr);
  CHECK(engine.check_conversation_quota(config, "u") == QuotaDecision::kAllowed);
  CHECK(engine.reserve_conversation(config, "u") == QuotaDecision::kAllowed);
  CHECK(engine.reserve_conversation(config, "u") == QuotaDecision::kDenied);
  engine.release_conversation(config.id, "u");
  CHECK(engine.reserve_conversation(config, "u") == QuotaDecision::kAllowed);
  CHECK_THROWS_AS(engine.reserve_conversation(config, "stranger"), Error);
}

TEST_CASE("seeded engines agree; restore keeps conditions and does not replay draws") {
  const auto config = testing::make_experiment("e");
  AllocationEngine a(99);
  AllocationEngine b(99);
  std::vector<std::pair<std::string, AgentId>> assigned;
  for (int i = 0; i < 50; ++i) {
    const auto name = "u" + std::to_string(i);
    const auto x = a.admit_participant(config, name, nullptr);
    const auto y = b.admit_participant(config, name, nullptr);
    CHECK(x.agent_id == y.agent_id);
    assigned.emplace_back(name, x.agent_id);
  }

  AllocationEngine restored(99);
  restored.restore(config.id, assigned, {{"u1", 2}});
  CHECK(restored.counters(config.id).participants_admitted == 50);
  CHECK(restored.condition_of(config.id, "u7") == assigned[7].second);
  CHECK(restored.counters(config.id).per_participant_conversations.at("u1") == 2);
  CHECK_FALSE(restored.admit_participant(config, "u3", nullptr).admitted);

  // The next draws must not simply repeat the first ones.
  int same = 0;
  for (int i = 0; i < 50; ++i) {
    const auto next = restored.admit_participant(config, "v" + std::to_string(i), nullptr);
    same += next.agent_id == assigned[static_cast<std::size_t>(i)].second;
  }
  CHECK(same < 50);
}
