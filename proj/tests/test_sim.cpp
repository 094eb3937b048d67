#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "chatlab/sim.hpp"
#include "live.hpp"

using namespace chatlab;
using nlohmann::json;

namespace {

ExperimentConfig mood_study(testing::Rig& rig, const std::string& id) {
  rig.service.create_form(testing::make_scale_form("mood", 3, 1, 7));
  auto config = testing::make_experiment(id);
  config.forms.before_conversation = FormId("mood");
  config.forms.after_conversation = FormId("mood");
  config.features.user_annotation = true;
  return rig.service.create_experiment(config);
}

Answers all(int v) { return {{"q1", v}, {"q2", v}, {"q3", v}}; }

// Runs n participants in-process; post answers come from `post(label, pre)`.
ExportBundle scripted(int n, const std::function<int(const std::string&, int)>& post) {
  testing::Rig rig;
  const auto config = mood_study(rig, "mood");
  for (int i = 0; i < n; ++i) {
    const auto token = rig.service.register_participant("mood", testing::registration("p" + std::to_string(i))).token;
    const int pre = 2 + i % 3;
    const auto start = rig.service.start_conversation("mood", token, all(pre));
    rig.service.send_message("mood", token, start.session_id, "hello");
    const auto agent = rig.store.session(start.session_id)->agent_id;
    rig.service.finish_conversation("mood", token, start.session_id, all(post(condition_label(config, agent), pre)));
  }
  return rig.service.export_experiment(config.id);
}

sim::ParticipantScript five_messages() {
  sim::ParticipantScript script;
  script.messages = {"hi", "how are you", "tell me a story", "thanks", "bye now"};
  script.annotation = sim::AnnotationPolicy::kRandom;
  script.annotation_p = 0.5;
  return script;
}

sim::SimOptions options_for(const testing::Live& live, int n, std::uint64_t seed, int concurrency) {
  sim::SimOptions o;
  o.base_url = live.base_url();
  o.slug = "mood";
  o.participants = n;
  o.script = five_messages();
  o.seed = seed;
  o.concurrency = concurrency;
  o.admin_username = testing::kAdminUser;
  o.admin_password = testing::kAdminPassword;
  return o;
}

}  // namespace

TEST_CASE("mood delta: constant shift") {
  testing::Rig rig;
  const auto config = mood_study(rig, "mood");
  for (int i = 0; i < 10; ++i) {
    const auto token = rig.service.register_participant("mood", testing::registration("u" + std::to_string(i))).token;
    const auto start = rig.service.start_conversation("mood", token, all(3));
    rig.service.finish_conversation("mood", token, start.session_id, all(4));
  }
  const auto deltas = sim::report_mood_delta(rig.service.export_experiment(config.id), {"q1", "q2", "q3"},
                                             {"q1", "q2", "q3"});
  REQUIRE(deltas.size() == 2);
  CHECK(deltas.at("A") == doctest::Approx(1.0));
  CHECK(deltas.at("B") == doctest::Approx(1.0));
  // Prefixed keys name the same columns.
  CHECK(sim::report_mood_delta(rig.service.export_experiment(config.id), {"Pre_q1"}, {"Post_q1"}) == deltas);
}

TEST_CASE("mood delta: identity") {
  const auto bundle = scripted(20, [](const std::string&, int pre) { return pre; });
  for (const auto& [label, delta] : sim::report_mood_delta(bundle, {"q1", "q2", "q3"}, {"q1", "q2", "q3"})) {
    CAPTURE(label);
    CHECK(delta == doctest::Approx(0.0));
  }
}

TEST_CASE("mood delta: condition-dependent ground truth") {
  const auto bundle = scripted(30, [](const std::string& label, int pre) { return label == "A" ? pre + 1 : pre; });
  const auto deltas = sim::report_mood_delta(bundle, {"q1", "q2", "q3"}, {"q1", "q2", "q3"});
  REQUIRE(deltas.size() == 2);
  CHECK(deltas.at("A") == doctest::Approx(1.0));
  CHECK(deltas.at("B") == doctest::Approx(0.0));
  CHECK_THROWS_AS(sim::report_mood_delta(bundle, {"q9"}, {"q1"}), Error);

  const auto report = sim::report_from_export(bundle);
  REQUIRE(report.conditions.at("A").mood_delta.has_value());
  CHECK(*report.conditions.at("A").mood_delta == doctest::Approx(1.0));
}

TEST_CASE("script JSON") {
  const auto script = sim::script_from_json(json::parse(R"({
    "username_pattern": "p-{i}",
    "generator": {"count": 4, "min_words": 2, "max_words": 6},
    "annotation": {"random": 0.25},
    "stream": true,
    "answers": {"after": {"policy": "fixed", "values": {"q1": 5}}}
  })"));
  CHECK(script.generator->count == 4);
  CHECK(script.annotation == sim::AnnotationPolicy::kRandom);
  CHECK(script.annotation_p == 0.25);
  CHECK(script.stream);
  CHECK(script.after.policy == sim::AnswerPolicy::kFixed);
  CHECK(sim::script_from_json(sim::script_to_json(script)).annotation_p == 0.25);
  CHECK(sim::username_for(script, 7, 3) == "p-3");
  CHECK(sim::username_for(sim::ParticipantScript{}, 7, 3) == "sim-7-3");

  CHECK_THROWS_AS(sim::script_from_json(json::parse(R"({"messages": []})")), Error);
  CHECK_THROWS_AS(sim::script_from_json(json::parse(R"({"messages": ["x"], "username_pattern": "fixed"})")), Error);
  CHECK_THROWS_AS(sim::script_from_json(json::parse(R"({"messages": ["x"], "annotation": "sometimes"})")), Error);
}

TEST_CASE("synthesized answers are always legal") {
  auto form = testing::make_scale_form("f", 4, 1, 7);
  form.questions[3].required = false;
  std::mt19937_64 rng(5);
  for (auto policy : {sim::AnswerPolicy::kRandom, sim::AnswerPolicy::kMin, sim::AnswerPolicy::kMax}) {
    const auto answers = sim::synthesize_answers(form, {policy, {}}, rng);
    CHECK(validate_response(form, answers).empty());
  }
  const auto fixed = sim::synthesize_answers(form, {sim::AnswerPolicy::kFixed, {{"q2", 6}}}, rng);
  CHECK(fixed.at("q2") == 6);
}

TEST_CASE("n = 0 gives an empty report") {
  testing::Live live;
  mood_study(live.rig, "mood");
  const auto report = sim::run_simulation(options_for(live, 0, 1, 16));
  CHECK(report.attempted == 0);
  CHECK(report.registered == 0);
  CHECK(report.rejections.empty());
  CHECK(report.open_sessions == 0);
  CHECK(report.reconciled);
  int participants = 0;
  for (const auto& [label, c] : report.conditions) participants += c.participants;
  CHECK(participants == 0);
}

TEST_CASE("a run reconciles with the export and closes every session") {
  testing::Live live;
  mood_study(live.rig, "mood");
  const auto dir = std::filesystem::temp_directory_path() / "chatlab-sim-test";
  std::filesystem::remove_all(dir);
  auto options = options_for(live, 40, 3, 8);
  options.export_dir = dir;
  const auto report = sim::run_simulation(options);
  CHECK(report.registered == 40);
  CHECK(report.rejections.empty());
  CHECK(report.reconciled);
  CHECK(report.discrepancies.empty());
  CHECK(report.open_sessions == 0);
  int participants = 0;
  int users = 0;
  int agents = 0;
  for (const auto& [label, c] : report.conditions) {
    participants += c.participants;
    users += c.user_messages;
    agents += c.agent_messages;
    CHECK(c.pre_mean.has_value());
    CHECK(c.post_mean.has_value());
  }
  CHECK(participants == 40);
  CHECK(users == 200);
  CHECK(agents == 240);

  // The saved files reproduce the same report offline.
  const auto offline = sim::report_from_export(sim::load_export_dir(dir));
  CHECK(offline.conditions == report.conditions);
}

TEST_CASE("identical seeds give identical reports") {
  sim::SimReport first;
  sim::SimReport second;
  {
    testing::Live live(11);
    mood_study(live.rig, "mood");
    first = sim::run_simulation(options_for(live, 12, 77, 1));
  }
  {
    testing::Live live(11);
    mood_study(live.rig, "mood");
    second = sim::run_simulation(options_for(live, 12, 77, 1));
  }
  CHECK(first == second);
  CHECK(sim::to_json(first) == sim::to_json(second));
}

TEST_CASE("streaming participants see the same text") {
  testing::Live live;
  auto& rig = live.rig;
  mood_study(rig, "mood");
  auto config = rig.service.experiment(ExperimentId("mood"));
  config.features.stream_message = true;
  rig.service.update_experiment(config.id, config);
  auto options = options_for(live, 6, 2, 3);
  options.script.stream = true;
  const auto report = sim::run_simulation(options);
  CHECK(report.rejections.empty());
  CHECK(report.reconciled);
}
