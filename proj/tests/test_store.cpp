#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "chatlab/export.hpp"
#include "chatlab/store.hpp"
#include "support.hpp"

using namespace chatlab;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "chatlab-store-tests";
  std::filesystem::create_directories(dir);
  auto path = dir / name;
  std::filesystem::remove(path);
  return path;
}

Timestamp at(long ms) { return Timestamp{std::chrono::milliseconds(ms)}; }

MessageRecord msg(Author author, std::string text, long ms) {
  MessageRecord m;
  m.author = author;
  m.text = std::move(text);
  m.sent_at = at(ms);
  return m;
}

// Populates one experiment with two participants and a few sessions.
SessionId populate(Store& store) {
  store.put_agent(testing::make_agent("agent-a"));
  store.put_agent(testing::make_agent("agent-b"));
  store.put_form(testing::make_scale_form("mood", 2));
  auto config = testing::make_experiment("e1");
  config.forms.before_conversation = FormId("mood");
  config.forms.after_conversation = FormId("mood");
  config.launch_date = at(1000);
  store.put_experiment(config);

  ParticipantRecord p;
  p.experiment_id = config.id;
  p.username = "bluefox";
  p.condition_agent_id = AgentId("agent-a");
  p.age = 31;
  p.gender = "female";
  p.registered_at = at(2000);
  store.create_participant(p);
  p.username = "redcat";
  p.condition_agent_id = AgentId("agent-b");
  p.gender.reset();
  store.create_participant(p);

  ConversationSession s;
  s.experiment_id = config.id;
  s.username = "bluefox";
  s.agent_id = AgentId("agent-a");
  s.started_at = at(3000);
  s.pre_form_answers = {{"Pre_q1", 2}, {"Pre_q2", 3}};
  s = store.create_session(s);
  store.append_message(s.id, msg(Author::kAgent, "Hello", 3000));
  store.append_message(s.id, msg(Author::kUser, "hi, \"there\"\nnew line", 3100));
  const auto reply = store.append_message(s.id, msg(Author::kAgent, "nice", 3200));
  store.set_annotation(reply.id, 1);
  store.finish_session(s.id, {{"Post_q1", 4}, {"Post_q2", 5}}, at(4000));

  ConversationSession open;
  open.experiment_id = config.id;
  open.username = "redcat";
  open.agent_id = AgentId("agent-b");
  open.started_at = at(5000);
  open = store.create_session(open);
  store.append_message(open.id, msg(Author::kAgent, "Hello", 5000));
  return open.id;
}

}  // namespace

TEST_CASE("messages get contiguous positions and alternate roles") {
  Store store;
  const auto open = populate(store);
  auto session = store.session(open);
  REQUIRE(session);
  CHECK(session->messages.size() == 1);
  CHECK(session->messages[0].position == 1);

  CHECK_THROWS_AS(store.append_message(open, msg(Author::kAgent, "again", 5100)), Error);
  const auto user = store.append_message(open, msg(Author::kUser, "hey", 5100));
  CHECK(user.position == 2);
  CHECK_FALSE(user.id.empty());

  // An earlier timestamp is clamped so the log never goes backwards.
  const auto late = store.append_message(open, msg(Author::kAgent, "yo", 10));
  CHECK(late.sent_at == at(5100));
}

TEST_CASE("annotation rules") {
  Store store;
  const auto open = populate(store);
  const auto opener = store.session(open)->messages[0];
  CHECK(store.set_annotation(opener.id, 1).annotation == 1);
  CHECK(store.set_annotation(opener.id, -1).annotation == -1);  // last write wins
  CHECK_THROWS_AS(store.set_annotation(opener.id, 0), Error);
  CHECK_THROWS_AS(store.set_annotation(opener.id, 2), Error);
  const auto user = store.append_message(open, msg(Author::kUser, "hey", 6000));
  CHECK_THROWS_AS(store.set_annotation(user.id, 1), Error);
  auto annotated_user = msg(Author::kAgent, "x", 6001);
  annotated_user.author = Author::kUser;
  annotated_user.annotation = 1;
  CHECK_THROWS_AS(store.append_message(open, annotated_user), Error);
  CHECK(store.message(opener.id)->annotation == -1);
}

TEST_CASE("usernames are unique per experiment") {
  Store store;
  populate(store);
  ParticipantRecord p;
  p.experiment_id = ExperimentId("e1");
  p.username = "bluefox";
  p.condition_agent_id = AgentId("agent-a");
  CHECK_THROWS_AS(store.create_participant(p), Error);
}

TEST_CASE("finishing is idempotent and closes the session") {
  Store store;
  const auto open = populate(store);
  store.finish_session(open, {{"Post_q1", 1}}, at(9000));
  store.finish_session(open, {{"Post_q1", 5}}, at(9999));
  const auto s = store.session(open);
  CHECK_FALSE(s->is_open());
  CHECK(*s->finished_at == at(9000));
  CHECK(s->post_form_answers.at("Post_q1") == 1);
  CHECK_THROWS_AS(store.append_message(open, msg(Author::kUser, "late", 9100)), Error);
}

TEST_CASE("summary counts") {
  Store store;
  populate(store);
  const auto summary = store.summarize_experiment(ExperimentId("e1"));
  CHECK(summary.participants_count == 2);
  CHECK(summary.sessions_count == 2);
  CHECK(summary.open_sessions_count == 1);
  CHECK(summary.launch_date == at(1000));
  CHECK(summary.status == ExperimentStatus::kActive);
}

TEST_CASE("stale sessions can be closed") {
  Store store;
  const auto open = populate(store);
  CHECK(store.close_stale_sessions(at(5000 + 60'000), std::chrono::minutes(5)) == 0);
  CHECK(store.close_stale_sessions(at(5000 + 600'000), std::chrono::minutes(5)) == 1);
  CHECK_FALSE(store.session(open)->is_open());
}

TEST_CASE("removing an experiment cascades") {
  Store store;
  const auto open = populate(store);
  store.remove_experiment(ExperimentId("e1"));
  CHECK_FALSE(store.experiment(ExperimentId("e1")));
  CHECK_FALSE(store.session(open));
  CHECK_FALSE(store.participant(ExperimentId("e1"), "bluefox"));
  CHECK(store.agent(AgentId("agent-a")));
}

TEST_CASE("journal-backed store survives a restart unchanged") {
  const auto path = temp_path("restart.jsonl");
  std::string before_json;
  ExperimentSummary before_summary;
  {
    Store store(std::make_shared<JournalDocumentStore>(path), 5);
    const auto open = populate(store);
    store.append_message(open, msg(Author::kUser, "after restart?", 5500));
    before_json = to_json_document(build_export(store.snapshot(ExperimentId("e1"))));
    before_summary = store.summarize_experiment(ExperimentId("e1"));
  }
  Store reopened(std::make_shared<JournalDocumentStore>(path), 5);
  CHECK(reopened.summarize_experiment(ExperimentId("e1")) == before_summary);
  CHECK(to_json_document(build_export(reopened.snapshot(ExperimentId("e1")))) == before_json);

  // A second reopen reads the compacted journal the same way.
  Store again(std::make_shared<JournalDocumentStore>(path), 5);
  CHECK(to_json_document(build_export(again.snapshot(ExperimentId("e1")))) == before_json);
}

TEST_CASE("a torn final journal line is dropped") {
  const auto path = temp_path("torn.jsonl");
  {
    Store store(std::make_shared<JournalDocumentStore>(path), 5);
    populate(store);
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"op":"put","collection":"agents","id":"agent-z","doc":{"id":"age)";
  }
  Store reopened(std::make_shared<JournalDocumentStore>(path), 5);
  CHECK(reopened.summarize_experiment(ExperimentId("e1")).participants_count == 2);
  CHECK_FALSE(reopened.agent(AgentId("agent-z")));
}

TEST_CASE("removals persist") {
  const auto path = temp_path("remove.jsonl");
  {
    Store store(std::make_shared<JournalDocumentStore>(path), 5);
    populate(store);
    store.remove_experiment(ExperimentId("e1"));
  }
  Store reopened(std::make_shared<JournalDocumentStore>(path), 5);
  CHECK(reopened.experiments().empty());
  CHECK(reopened.agents().size() == 2);
}
