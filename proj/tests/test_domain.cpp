#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "chatlab/domain.hpp"
#include "chatlab/service.hpp"
#include "support.hpp"

using namespace chatlab;

namespace {

bool has_rule(const Violations& violations, std::string_view rule) {
  for (const auto& v : violations) {
    if (v.rule.find(rule) != std::string::npos) return true;
  }
  return false;
}

const std::set<AgentId> kAgents = {AgentId("agent-a"), AgentId("agent-b"), AgentId("agent-c")};
const std::set<FormId> kForms = {FormId("pre")};

}  // namespace

TEST_CASE("timestamps format as ISO-8601 UTC with milliseconds and parse back") {
  const Timestamp t{std::chrono::milliseconds(1'700'000'000'123)};
  CHECK(format_timestamp(t) == "2023-11-14T22:13:20.123Z");
  CHECK(parse_timestamp("2023-11-14T22:13:20.123Z") == t);
  CHECK(format_timestamp(Timestamp{}) == "1970-01-01T00:00:00.000Z");
  CHECK_THROWS_AS(parse_timestamp("2023-11-14 22:13:20"), Error);
  CHECK_THROWS_AS(parse_timestamp("2023-11-14T22:13:20.123Zjunk"), Error);
}

TEST_CASE("id generator is reproducible under a seed") {
  IdGenerator a(7);
  IdGenerator b(7);
  for (int i = 0; i < 5; ++i) CHECK(a.next("ses") == b.next("ses"));
  const auto id = IdGenerator(7).next("msg");
  CHECK(id.rfind("msg_", 0) == 0);
  CHECK(id.size() == 4 + 16);
}

TEST_CASE("experiment validation") {
  auto config = testing::make_experiment("e1");
  CHECK(validate_experiment(config, kAgents, kForms).empty());

  SUBCASE("weights must sum to 100") {
    config.agents[1].weight_percent = 40;
    CHECK(has_rule(validate_experiment(config, kAgents, kForms), "weights must sum to 100"));
  }
  SUBCASE("one or two agents") {
    config.agents.push_back({AgentId("agent-c"), 0});
    CHECK(has_rule(validate_experiment(config, kAgents, kForms), "1 or 2 agents"));
    config.agents.clear();
    CHECK(has_rule(validate_experiment(config, kAgents, kForms), "1 or 2 agents"));
  }
  SUBCASE("single agent takes every participant") {
    config.agents = {{AgentId("agent-a"), 100}};
    CHECK(validate_experiment(config, kAgents, kForms).empty());
  }
  SUBCASE("unknown agent and form") {
    config.agents[0].agent_id = AgentId("ghost");
    config.forms.before_conversation = FormId("nope");
    const auto v = validate_experiment(config, kAgents, kForms);
    CHECK(has_rule(v, "unknown agent"));
    CHECK(has_rule(v, "unknown form"));
  }
  SUBCASE("duplicate agent") {
    config.agents[1].agent_id = AgentId("agent-a");
    CHECK(has_rule(validate_experiment(config, kAgents, kForms), "duplicate agent"));
  }
  SUBCASE("boundaries at least 1") {
    config.boundaries.max_participants = 0;
    CHECK(!validate_experiment(config, kAgents, kForms).empty());
    config.boundaries.max_participants = 1;
    CHECK(validate_experiment(config, kAgents, kForms).empty());
  }
  SUBCASE("weight 0 is valid but warned about") {
    config.agents[0].weight_percent = 0;
    config.agents[1].weight_percent = 100;
    CHECK(validate_experiment(config, kAgents, kForms).empty());
    CHECK(experiment_warnings(config).size() == 1);
  }
}

TEST_CASE("agent validation") {
  auto agent = testing::make_agent("a");
  CHECK(validate_agent(agent).empty());

  SUBCASE("temperature range") {
    agent.sampling.temperature = 2.5;
    CHECK(has_rule(validate_agent(agent), "temperature outside [0,2]"));
    agent.sampling.temperature = 2.0;
    CHECK(validate_agent(agent).empty());
  }
  SUBCASE("top_p range") {
    agent.sampling.top_p = 0.0;
    CHECK(has_rule(validate_agent(agent), "top_p outside (0,1]"));
  }
  SUBCASE("penalties and max tokens") {
    agent.sampling.frequency_penalty = -2.1;
    agent.sampling.presence_penalty = 2.1;
    agent.sampling.max_tokens = 0;
    CHECK(validate_agent(agent).size() == 3);
  }
  SUBCASE("stop sequences") {
    agent.sampling.stop_sequences = {"a", "b", "c", "d", "e"};
    CHECK(has_rule(validate_agent(agent), "at most 4"));
  }
  SUBCASE("required prompts") {
    agent.first_chat_sentence.clear();
    agent.system_starter_prompt.clear();
    CHECK(validate_agent(agent).size() == 2);
  }
}

TEST_CASE("condition labels follow agent order") {
  const auto config = testing::make_experiment("e1");
  CHECK(condition_label(config, AgentId("agent-a")) == "A");
  CHECK(condition_label(config, AgentId("agent-b")) == "B");
}

TEST_CASE("role alternation predicate") {
  auto msg = [](Author a) {
    MessageRecord m;
    m.author = a;
    return m;
  };
  CHECK(roles_alternate({}));
  CHECK(roles_alternate({msg(Author::kAgent), msg(Author::kUser), msg(Author::kAgent)}));
  CHECK_FALSE(roles_alternate({msg(Author::kUser)}));
  CHECK_FALSE(roles_alternate({msg(Author::kAgent), msg(Author::kAgent)}));
}

TEST_CASE("experiment config survives a JSON round trip") {
  auto config = testing::make_experiment("e1", 70);
  config.forms.before_conversation = FormId("pre");
  config.boundaries.max_messages_per_interaction = 5;
  config.main_page_updated_at = Timestamp{std::chrono::milliseconds(1000)};
  config.post_interaction.survey_url_template = "https://x/?u={username}";
  config.demographics.collect_gender = false;
  const nlohmann::json j = config;
  CHECK(j.get<ExperimentConfig>() == config);

  auto agent = testing::make_agent("a", "before", "after");
  agent.sampling.stop_sequences = {"END"};
  CHECK(nlohmann::json(agent).get<AgentConfig>() == agent);
}

TEST_CASE("experiment slugs are stable, URL-safe and injective") {
  const std::vector<std::string> ids = {"exp1", "exp.1", "exp_1", "exp-1", "exp 1", "exp/1", "exp.2e1", "Ünï"};
  std::set<std::string> slugs;
  for (const auto& raw : ids) {
    const ExperimentId id(raw);
    const auto slug = experiment_slug(id);
    CHECK(slug == experiment_slug(id));
    for (unsigned char c : slug) CHECK((std::isalnum(c) || c == '_' || c == '-' || c == '.'));
    CHECK(experiment_id_from_slug(slug) == id);
    slugs.insert(slug);
  }
  CHECK(slugs.size() == ids.size());
  CHECK_FALSE(experiment_id_from_slug("exp.2").has_value());
  CHECK_FALSE(experiment_id_from_slug("a.61").has_value());  // 'a' needs no escape
  CHECK_FALSE(experiment_id_from_slug("").has_value());
}

TEST_CASE("survey URL substitution") {
  CHECK(substitute_survey_url("https://survey?u={username}&s={session}&c={condition}", "bluefox", "ses_1", "A") ==
        "https://survey?u=bluefox&s=ses_1&c=A");
  CHECK(substitute_survey_url("https://s/?u={username}", "a b&c", "s", "B") == "https://s/?u=a%20b%26c");
  CHECK(substitute_survey_url("https://s/{other}", "u", "s", "A") == "https://s/{other}");
  CHECK(substitute_survey_url("no placeholders", "u", "s", "A") == "no placeholders");
}
