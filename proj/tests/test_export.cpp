#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chatlab/csv.hpp"
#include "chatlab/export.hpp"
#include "support.hpp"

using namespace chatlab;
using nlohmann::json;

namespace {

Timestamp at(long ms) { return Timestamp{std::chrono::milliseconds(ms)}; }

ExperimentSnapshot sample() {
  ExperimentSnapshot snap;
  snap.experiment = testing::make_experiment("e1");
  snap.experiment.launch_date = at(1);
  snap.agents = {testing::make_agent("agent-a"), testing::make_agent("agent-b")};
  auto reg = testing::make_scale_form("reg", 1);
  reg.questions[0].key = "income";
  auto mood = testing::make_scale_form("mood", 2);
  snap.forms = {reg, mood};
  snap.experiment.forms.registration = FormId("reg");
  snap.experiment.forms.before_conversation = FormId("mood");
  snap.experiment.forms.after_conversation = FormId("mood");

  ParticipantRecord p;
  p.experiment_id = snap.experiment.id;
  p.username = "bluefox";
  p.condition_agent_id = AgentId("agent-b");
  p.age = 40;
  p.registration_answers = {{"income", 3}};
  p.registered_at = at(10);
  snap.participants.push_back(p);

  ConversationSession s;
  s.id = SessionId("ses_1");
  s.experiment_id = snap.experiment.id;
  s.username = "bluefox";
  s.agent_id = AgentId("agent-b");
  s.started_at = at(20);
  s.finished_at = at(90);
  s.pre_form_answers = {{"Pre_q1", 1}, {"Pre_q2", 2}};
  s.post_form_answers = {{"Post_q1", 4}, {"Post_q2", 5}};
  const char* texts[] = {"Hello", "I'm fine, thanks \"really\"", "Good\nto hear"};
  for (int i = 0; i < 3; ++i) {
    MessageRecord m;
    m.id = MessageId("msg_" + std::to_string(i));
    m.session_id = s.id;
    m.position = i + 1;
    m.author = i % 2 == 0 ? Author::kAgent : Author::kUser;
    m.text = texts[i];
    m.sent_at = at(30 + i);
    if (i == 2) m.annotation = -1;
    s.messages.push_back(m);
  }
  snap.sessions.push_back(s);
  return snap;
}

}  // namespace

TEST_CASE("CSV escaping follows RFC 4180") {
  CHECK(csv::escape("plain") == "plain");
  CHECK(csv::escape("a,b") == "\"a,b\"");
  CHECK(csv::escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv::escape("two\nlines") == "\"two\nlines\"");
  CHECK(csv::format_row({"a", "b,c"}) == "a,\"b,c\"\r\n");
  const auto rows = csv::parse("x,y\r\n\"1,2\",\"q\"\"q\"\r\n\"multi\nline\",\r\n");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1] == std::vector<std::string>{"1,2", "q\"q"});
  CHECK(rows[2] == std::vector<std::string>{"multi\nline", ""});
}

TEST_CASE("tables have the fixed column layout") {
  const auto bundle = build_export(sample());
  CHECK(bundle.participants.columns ==
        std::vector<std::string>{"experiment_id", "username", "condition", "agent_id", "age", "gender",
                                 "registered_at", "income"});
  CHECK(bundle.sessions.columns.size() == 10);
  CHECK(bundle.messages.columns.size() == 12);
  CHECK(bundle.responses.columns == std::vector<std::string>{"experiment_id", "username", "condition", "agent_id",
                                                             "session_id", "Pre_q1", "Pre_q2", "Post_q1", "Post_q2"});
  CHECK(bundle.participants.rows[0]["condition"] == "B");
  CHECK(bundle.participants.rows[0]["gender"].is_null());
  CHECK(bundle.messages.rows[2]["annotation"] == -1);
  CHECK(bundle.sessions.rows[0]["user_messages"] == 1);
  CHECK(bundle.sessions.rows[0]["agent_messages"] == 2);
  CHECK(check_integrity(bundle).empty());
}

TEST_CASE("file names") {
  const auto bundle = build_export(sample());
  const auto json_files = export_files(bundle, ExportFormat::kJson);
  REQUIRE(json_files.size() == 1);
  CHECK(json_files.begin()->first == "e1.json");
  const auto csv_files = export_files(bundle, ExportFormat::kCsv);
  CHECK(csv_files.count("e1_participants.csv") == 1);
  CHECK(csv_files.count("e1_sessions.csv") == 1);
  CHECK(csv_files.count("e1_messages.csv") == 1);
  CHECK(csv_files.count("e1_responses.csv") == 1);
  const auto rows = csv::parse(csv_files.at("e1_messages.csv"));
  CHECK(rows.size() == 4);
  CHECK(rows[2][8] == "I'm fine, thanks \"really\"");
}

TEST_CASE("JSON export round-trips byte for byte") {
  const auto first = to_json_document(build_export(sample()));
  const auto snapshot = snapshot_from_export(json::parse(first));
  const auto second = to_json_document(build_export(snapshot));
  CHECK(first == second);
  CHECK(snapshot.sessions[0].messages == sample().sessions[0].messages);
  CHECK(snapshot.participants[0] == sample().participants[0]);
}

TEST_CASE("integrity checks catch damage") {
  SUBCASE("dangling session reference") {
    auto bundle = build_export(sample());
    bundle.messages.rows[0]["session_id"] = "ses_missing";
    CHECK_FALSE(check_integrity(bundle).empty());
  }
  SUBCASE("non-contiguous positions") {
    auto bundle = build_export(sample());
    bundle.messages.rows[1]["position"] = 5;
    CHECK_FALSE(check_integrity(bundle).empty());
  }
  SUBCASE("annotated user message") {
    auto bundle = build_export(sample());
    bundle.messages.rows[1]["annotation"] = 1;
    CHECK_FALSE(check_integrity(bundle).empty());
  }
  SUBCASE("summary disagreement") {
    auto bundle = build_export(sample());
    bundle.metadata["summary"]["participants_count"] = 7;
    CHECK_FALSE(check_integrity(bundle).empty());
  }
  SUBCASE("import refuses a damaged document") {
    auto doc = json::parse(to_json_document(build_export(sample())));
    doc["tables"]["messages"]["rows"].erase(1);
    CHECK_THROWS_AS(snapshot_from_export(doc), Error);
    doc = json::parse(to_json_document(build_export(sample())));
    doc["schema_version"] = 2;
    CHECK_THROWS_AS(snapshot_from_export(doc), Error);
  }
}
