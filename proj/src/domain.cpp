#include "chatlab/domain.hpp"

#include <algorithm>

#include "json_util.hpp"

namespace chatlab {

using nlohmann::json;

std::string_view to_string(ExperimentStatus status) {
  return status == ExperimentStatus::kActive ? "active" : "inactive";
}

std::string_view to_string(Author author) { return author == Author::kAgent ? "agent" : "user"; }

std::string_view to_string(MessageStatus status) {
  switch (status) {
    case MessageStatus::kComplete: return "complete";
    case MessageStatus::kPartial: return "partial";
    case MessageStatus::kError: return "error";
  }
  return "complete";
}

int ConversationSession::count_messages(Author author) const noexcept {
  return static_cast<int>(std::count_if(messages.begin(), messages.end(),
                                        [author](const MessageRecord& m) { return m.author == author; }));
}

namespace {

void check_limit(const Limit& limit, const char* field, Violations& out) {
  if (limit && *limit < 1) out.push_back({std::string("boundaries.") + field, "must be >= 1 or unlimited"});
}

bool within(double value, double lo, double hi) { return value >= lo && value <= hi; }

}  // namespace

Violations validate_boundaries(const Boundaries& b) {
  Violations out;
  check_limit(b.max_participants, "max_participants", out);
  check_limit(b.max_conversations_per_participant, "max_conversations_per_participant", out);
  check_limit(b.max_messages_per_interaction, "max_messages_per_interaction", out);
  return out;
}

Violations validate_experiment(const ExperimentConfig& config, const std::set<AgentId>& known_agents,
                               const std::set<FormId>& known_forms) {
  Violations out;
  if (config.title.empty()) out.push_back({"title", "must not be empty"});

  if (config.agents.empty() || config.agents.size() > 2) {
    out.push_back({"agents", "experiment must have 1 or 2 agents"});
  }
  int total = 0;
  std::set<AgentId> seen;
  for (std::size_t i = 0; i < config.agents.size(); ++i) {
    const auto& entry = config.agents[i];
    const std::string field = "agents[" + std::to_string(i) + "]";
    if (entry.weight_percent < 0 || entry.weight_percent > 100) {
      out.push_back({field + ".weight_percent", "must be within [0,100]"});
    }
    total += entry.weight_percent;
    if (!seen.insert(entry.agent_id).second) out.push_back({field + ".agent_id", "duplicate agent"});
    if (!known_agents.contains(entry.agent_id)) {
      out.push_back({field + ".agent_id", "unknown agent '" + entry.agent_id.str() + "'"});
    }
  }
  if (!config.agents.empty() && total != 100) out.push_back({"agents", "weights must sum to 100"});

  auto check_form = [&](const std::optional<FormId>& id, const char* field) {
    if (id && !known_forms.contains(*id)) {
      out.push_back({std::string("forms.") + field, "unknown form '" + id->str() + "'"});
    }
  };
  check_form(config.forms.registration, "registration");
  check_form(config.forms.before_conversation, "before_conversation");
  check_form(config.forms.after_conversation, "after_conversation");

  auto boundary_violations = validate_boundaries(config.boundaries);
  out.insert(out.end(), boundary_violations.begin(), boundary_violations.end());
  return out;
}

std::vector<std::string> experiment_warnings(const ExperimentConfig& config) {
  std::vector<std::string> out;
  if (config.agents.size() == 2) {
    for (const auto& entry : config.agents) {
      if (entry.weight_percent == 0) {
        out.push_back("agent '" + entry.agent_id.str() +
                      "' has weight 0 and will never be assigned; the study is effectively single-condition");
      }
    }
  }
  return out;
}

Violations validate_agent(const AgentConfig& config) {
  Violations out;
  if (config.model_id.empty()) out.push_back({"model_id", "must not be empty"});
  if (config.first_chat_sentence.empty()) out.push_back({"first_chat_sentence", "must not be empty"});
  if (config.system_starter_prompt.empty()) out.push_back({"system_starter_prompt", "must not be empty"});

  const auto& s = config.sampling;
  if (!within(s.temperature, 0.0, 2.0)) out.push_back({"sampling.temperature", "temperature outside [0,2]"});
  if (s.max_tokens < 1) out.push_back({"sampling.max_tokens", "max_tokens must be >= 1"});
  if (!(s.top_p > 0.0 && s.top_p <= 1.0)) out.push_back({"sampling.top_p", "top_p outside (0,1]"});
  if (!within(s.frequency_penalty, -2.0, 2.0)) {
    out.push_back({"sampling.frequency_penalty", "frequency_penalty outside [-2,2]"});
  }
  if (!within(s.presence_penalty, -2.0, 2.0)) {
    out.push_back({"sampling.presence_penalty", "presence_penalty outside [-2,2]"});
  }
  if (s.stop_sequences.size() > 4) out.push_back({"sampling.stop_sequences", "at most 4 stop sequences"});
  for (const auto& stop : s.stop_sequences) {
    if (stop.empty()) {
      out.push_back({"sampling.stop_sequences", "stop sequences must not be empty"});
      break;
    }
  }
  return out;
}

std::string condition_label(const ExperimentConfig& config, const AgentId& agent_id) {
  for (std::size_t i = 0; i < config.agents.size(); ++i) {
    if (config.agents[i].agent_id == agent_id) return std::string(1, static_cast<char>('A' + i));
  }
  return "?";
}

bool roles_alternate(const std::vector<MessageRecord>& messages) {
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const Author expected = i % 2 == 0 ? Author::kAgent : Author::kUser;
    if (messages[i].author != expected) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, ExperimentStatus s) { j = std::string(to_string(s)); }

void from_json(const json& j, ExperimentStatus& s) {
  const auto text = j.get<std::string>();
  if (text == "active") s = ExperimentStatus::kActive;
  else if (text == "inactive") s = ExperimentStatus::kInactive;
  else throw Error(ErrorCode::kInvalidArgument, "status must be 'active' or 'inactive'");
}

void to_json(json& j, Author a) { j = std::string(to_string(a)); }

void from_json(const json& j, Author& a) {
  const auto text = j.get<std::string>();
  if (text == "agent") a = Author::kAgent;
  else if (text == "user") a = Author::kUser;
  else throw Error(ErrorCode::kInvalidArgument, "author must be 'agent' or 'user'");
}

void to_json(json& j, MessageStatus s) { j = std::string(to_string(s)); }

void from_json(const json& j, MessageStatus& s) {
  const auto text = j.get<std::string>();
  if (text == "complete") s = MessageStatus::kComplete;
  else if (text == "partial") s = MessageStatus::kPartial;
  else if (text == "error") s = MessageStatus::kError;
  else throw Error(ErrorCode::kInvalidArgument, "unknown message status '" + text + "'");
}

void to_json(json& j, const Boundaries& v) {
  j = json{{"max_participants", detail::optional_to_json(v.max_participants)},
           {"max_conversations_per_participant", detail::optional_to_json(v.max_conversations_per_participant)},
           {"max_messages_per_interaction", detail::optional_to_json(v.max_messages_per_interaction)}};
}

void from_json(const json& j, Boundaries& v) {
  v.max_participants = detail::optional_from_json<int>(j, "max_participants");
  v.max_conversations_per_participant = detail::optional_from_json<int>(j, "max_conversations_per_participant");
  v.max_messages_per_interaction = detail::optional_from_json<int>(j, "max_messages_per_interaction");
}

void to_json(json& j, const ConditionWeight& v) {
  j = json{{"agent_id", v.agent_id}, {"weight_percent", v.weight_percent}};
}

void from_json(const json& j, ConditionWeight& v) {
  v.agent_id = j.at("agent_id").get<AgentId>();
  v.weight_percent = j.at("weight_percent").get<int>();
}

void to_json(json& j, const Features& v) {
  j = json{{"stream_message", v.stream_message}, {"user_annotation", v.user_annotation}};
}

void from_json(const json& j, Features& v) {
  v.stream_message = j.value("stream_message", false);
  v.user_annotation = j.value("user_annotation", false);
}

void to_json(json& j, const LinkedForms& v) {
  j = json{{"registration", detail::optional_to_json(v.registration)},
           {"before_conversation", detail::optional_to_json(v.before_conversation)},
           {"after_conversation", detail::optional_to_json(v.after_conversation)}};
}

void from_json(const json& j, LinkedForms& v) {
  v.registration = detail::optional_from_json<FormId>(j, "registration");
  v.before_conversation = detail::optional_from_json<FormId>(j, "before_conversation");
  v.after_conversation = detail::optional_from_json<FormId>(j, "after_conversation");
}

void to_json(json& j, const MainPage& v) { j = json{{"title", v.title}, {"body", v.body}}; }

void from_json(const json& j, MainPage& v) {
  v.title = j.value("title", "");
  v.body = j.value("body", "");
}

void to_json(json& j, const Demographics& v) {
  j = json{{"collect_age", v.collect_age}, {"collect_gender", v.collect_gender}};
}

void from_json(const json& j, Demographics& v) {
  v.collect_age = j.value("collect_age", true);
  v.collect_gender = j.value("collect_gender", true);
}

void to_json(json& j, const PostInteractionMessage& v) {
  j = json{{"text", v.text}, {"survey_url_template", v.survey_url_template}};
}

void from_json(const json& j, PostInteractionMessage& v) {
  v.text = j.value("text", PostInteractionMessage{}.text);
  v.survey_url_template = j.value("survey_url_template", "");
}

void to_json(json& j, const ExperimentConfig& v) {
  j = json{{"id", v.id},
           {"title", v.title},
           {"description", v.description},
           {"agents", v.agents},
           {"features", v.features},
           {"forms", v.forms},
           {"boundaries", v.boundaries},
           {"status", v.status},
           {"launch_date", detail::timestamp_to_json(v.launch_date)},
           {"main_page", v.main_page},
           {"main_page_updated_at", detail::optional_timestamp_to_json(v.main_page_updated_at)},
           {"post_interaction_message", v.post_interaction},
           {"demographics", v.demographics}};
}

void from_json(const json& j, ExperimentConfig& v) {
  v.id = ExperimentId(j.value("id", ""));
  v.title = j.value("title", "");
  v.description = j.value("description", "");
  v.agents = j.value("agents", std::vector<ConditionWeight>{});
  v.features = j.value("features", Features{});
  v.forms = j.value("forms", LinkedForms{});
  v.boundaries = j.value("boundaries", Boundaries{});
  v.status = j.value("status", ExperimentStatus::kInactive);
  v.launch_date = detail::timestamp_from_json(j, "launch_date");
  v.main_page = j.value("main_page", MainPage{});
  v.main_page_updated_at = detail::optional_timestamp_from_json(j, "main_page_updated_at");
  v.post_interaction = j.value("post_interaction_message", PostInteractionMessage{});
  v.demographics = j.value("demographics", Demographics{});
}

void to_json(json& j, const SamplingParams& v) {
  j = json{{"temperature", v.temperature},
           {"max_tokens", v.max_tokens},
           {"top_p", v.top_p},
           {"frequency_penalty", v.frequency_penalty},
           {"presence_penalty", v.presence_penalty},
           {"stop_sequences", v.stop_sequences}};
}

void from_json(const json& j, SamplingParams& v) {
  const SamplingParams defaults;
  v.temperature = j.value("temperature", defaults.temperature);
  v.max_tokens = j.value("max_tokens", defaults.max_tokens);
  v.top_p = j.value("top_p", defaults.top_p);
  v.frequency_penalty = j.value("frequency_penalty", defaults.frequency_penalty);
  v.presence_penalty = j.value("presence_penalty", defaults.presence_penalty);
  v.stop_sequences = j.value("stop_sequences", std::vector<std::string>{});
}

void to_json(json& j, const AgentConfig& v) {
  j = json{{"id", v.id},
           {"title", v.title},
           {"description", v.description},
           {"model_id", v.model_id},
           {"first_chat_sentence", v.first_chat_sentence},
           {"system_starter_prompt", v.system_starter_prompt},
           {"before_user_sentence_prompt", v.before_user_sentence_prompt},
           {"after_user_sentence_prompt", v.after_user_sentence_prompt},
           {"sampling", v.sampling}};
}

void from_json(const json& j, AgentConfig& v) {
  v.id = AgentId(j.value("id", ""));
  v.title = j.value("title", "");
  v.description = j.value("description", "");
  v.model_id = j.value("model_id", "");
  v.first_chat_sentence = j.value("first_chat_sentence", "");
  v.system_starter_prompt = j.value("system_starter_prompt", "");
  v.before_user_sentence_prompt = j.value("before_user_sentence_prompt", "");
  v.after_user_sentence_prompt = j.value("after_user_sentence_prompt", "");
  v.sampling = j.value("sampling", SamplingParams{});
}

void to_json(json& j, const ParticipantRecord& v) {
  j = json{{"username", v.username},
           {"experiment_id", v.experiment_id},
           {"condition_agent_id", v.condition_agent_id},
           {"age", detail::optional_to_json(v.age)},
           {"gender", detail::optional_to_json(v.gender)},
           {"registration_answers", v.registration_answers},
           {"registered_at", detail::timestamp_to_json(v.registered_at)}};
}

void from_json(const json& j, ParticipantRecord& v) {
  v.username = j.at("username").get<std::string>();
  v.experiment_id = j.at("experiment_id").get<ExperimentId>();
  v.condition_agent_id = j.at("condition_agent_id").get<AgentId>();
  v.age = detail::optional_from_json<int>(j, "age");
  v.gender = detail::optional_from_json<std::string>(j, "gender");
  v.registration_answers = j.value("registration_answers", Answers{});
  v.registered_at = detail::timestamp_from_json(j, "registered_at");
}

void to_json(json& j, const MessageRecord& v) {
  j = json{{"id", v.id},
           {"session_id", v.session_id},
           {"position", v.position},
           {"author", v.author},
           {"text", v.text},
           {"sent_at", detail::timestamp_to_json(v.sent_at)},
           {"annotation", detail::optional_to_json(v.annotation)},
           {"status", v.status}};
}

void from_json(const json& j, MessageRecord& v) {
  v.id = j.at("id").get<MessageId>();
  v.session_id = j.at("session_id").get<SessionId>();
  v.position = j.value("position", 0);
  v.author = j.at("author").get<Author>();
  v.text = j.at("text").get<std::string>();
  v.sent_at = detail::timestamp_from_json(j, "sent_at");
  v.annotation = detail::optional_from_json<int>(j, "annotation");
  v.status = j.value("status", MessageStatus::kComplete);
}

void to_json(json& j, const ConversationSession& v) {
  j = json{{"id", v.id},
           {"username", v.username},
           {"experiment_id", v.experiment_id},
           {"agent_id", v.agent_id},
           {"started_at", detail::timestamp_to_json(v.started_at)},
           {"finished_at", detail::optional_timestamp_to_json(v.finished_at)},
           {"messages", v.messages},
           {"pre_form_answers", v.pre_form_answers},
           {"post_form_answers", v.post_form_answers}};
}

void from_json(const json& j, ConversationSession& v) {
  v.id = j.at("id").get<SessionId>();
  v.username = j.at("username").get<std::string>();
  v.experiment_id = j.at("experiment_id").get<ExperimentId>();
  v.agent_id = j.at("agent_id").get<AgentId>();
  v.started_at = detail::timestamp_from_json(j, "started_at");
  v.finished_at = detail::optional_timestamp_from_json(j, "finished_at");
  v.messages = j.value("messages", std::vector<MessageRecord>{});
  v.pre_form_answers = j.value("pre_form_answers", Answers{});
  v.post_form_answers = j.value("post_form_answers", Answers{});
}

}  // namespace chatlab
