#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chatlab/error.hpp"
#include "chatlab/ids.hpp"
#include "chatlab/time.hpp"

namespace chatlab {

/// Questionnaire answers keyed by question key (or by dataset key once phase-prefixed).
/// Values are JSON numbers or strings.
using Answers = std::map<std::string, nlohmann::json>;

/// nullopt means unlimited.
using Limit = std::optional<int>;

enum class ExperimentStatus { kActive, kInactive };
enum class Author { kAgent, kUser };

/// How an agent message came to be: a full reply, a stream cut short, or an error notice.
enum class MessageStatus { kComplete, kPartial, kError };

std::string_view to_string(ExperimentStatus status);
std::string_view to_string(Author author);
std::string_view to_string(MessageStatus status);

struct Boundaries {
  Limit max_participants;
  Limit max_conversations_per_participant;
  Limit max_messages_per_interaction;

  bool operator==(const Boundaries&) const = default;
};

struct ConditionWeight {
  AgentId agent_id;
  int weight_percent = 0;

  bool operator==(const ConditionWeight&) const = default;
};

struct Features {
  bool stream_message = false;
  bool user_annotation = false;

  bool operator==(const Features&) const = default;
};

struct LinkedForms {
  std::optional<FormId> registration;
  std::optional<FormId> before_conversation;
  std::optional<FormId> after_conversation;

  bool operator==(const LinkedForms&) const = default;
};

struct MainPage {
  std::string title;
  std::string body;

  bool operator==(const MainPage&) const = default;
};

/// Which built-in demographic fields the registration page asks for.
struct Demographics {
  bool collect_age = true;
  bool collect_gender = true;

  bool operator==(const Demographics&) const = default;
};

/// Shown after the last form. survey_url_template may contain {username},
/// {session} and {condition}; empty means no external survey link.
struct PostInteractionMessage {
  std::string text = "Thank you for your participation.";
  std::string survey_url_template;

  bool operator==(const PostInteractionMessage&) const = default;
};

struct ExperimentConfig {
  ExperimentId id;
  std::string title;
  std::string description;
  std::vector<ConditionWeight> agents;
  Features features;
  LinkedForms forms;
  Boundaries boundaries;
  ExperimentStatus status = ExperimentStatus::kInactive;
  Timestamp launch_date{};
  MainPage main_page;
  std::optional<Timestamp> main_page_updated_at;
  PostInteractionMessage post_interaction;
  Demographics demographics;

  bool operator==(const ExperimentConfig&) const = default;
};

struct SamplingParams {
  double temperature = 1.0;
  int max_tokens = 256;
  double top_p = 1.0;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  std::vector<std::string> stop_sequences;

  bool operator==(const SamplingParams&) const = default;
};

struct AgentConfig {
  AgentId id;
  std::string title;
  std::string description;
  std::string model_id;
  std::string first_chat_sentence;
  std::string system_starter_prompt;
  std::string before_user_sentence_prompt;
  std::string after_user_sentence_prompt;
  SamplingParams sampling;

  bool operator==(const AgentConfig&) const = default;
};

struct ParticipantRecord {
  std::string username;
  ExperimentId experiment_id;
  AgentId condition_agent_id;
  std::optional<int> age;
  std::optional<std::string> gender;
  Answers registration_answers;
  Timestamp registered_at{};

  bool operator==(const ParticipantRecord&) const = default;
};

struct MessageRecord {
  MessageId id;
  SessionId session_id;
  int position = 0;  // 1-based order within the session
  Author author = Author::kAgent;
  std::string text;
  Timestamp sent_at{};
  std::optional<int> annotation;
  MessageStatus status = MessageStatus::kComplete;

  bool operator==(const MessageRecord&) const = default;
};

struct ConversationSession {
  SessionId id;
  std::string username;
  ExperimentId experiment_id;
  AgentId agent_id;
  Timestamp started_at{};
  std::optional<Timestamp> finished_at;
  std::vector<MessageRecord> messages;
  Answers pre_form_answers;   // keys carry the Pre_ prefix
  Answers post_form_answers;  // keys carry the Post_ prefix

  bool is_open() const noexcept { return !finished_at.has_value(); }
  int count_messages(Author author) const noexcept;

  bool operator==(const ConversationSession&) const = default;
};

/// Checks every ExperimentConfig invariant plus that referenced agents and forms exist.
Violations validate_experiment(const ExperimentConfig& config, const std::set<AgentId>& known_agents,
                               const std::set<FormId>& known_forms);

/// Non-fatal observations about a valid config, e.g. a condition weighted 0.
std::vector<std::string> experiment_warnings(const ExperimentConfig& config);

Violations validate_agent(const AgentConfig& config);
Violations validate_boundaries(const Boundaries& boundaries);

/// Opaque condition label ("A", "B") used wherever a participant might see the condition.
std::string condition_label(const ExperimentConfig& config, const AgentId& agent_id);

/// True iff messages open with an agent message and authors strictly alternate afterwards.
bool roles_alternate(const std::vector<MessageRecord>& messages);

void to_json(nlohmann::json& j, ExperimentStatus s);
void from_json(const nlohmann::json& j, ExperimentStatus& s);
void to_json(nlohmann::json& j, Author a);
void from_json(const nlohmann::json& j, Author& a);
void to_json(nlohmann::json& j, MessageStatus s);
void from_json(const nlohmann::json& j, MessageStatus& s);

void to_json(nlohmann::json& j, const Boundaries& v);
void from_json(const nlohmann::json& j, Boundaries& v);
void to_json(nlohmann::json& j, const ConditionWeight& v);
void from_json(const nlohmann::json& j, ConditionWeight& v);
void to_json(nlohmann::json& j, const Features& v);
void from_json(const nlohmann::json& j, Features& v);
void to_json(nlohmann::json& j, const LinkedForms& v);
void from_json(const nlohmann::json& j, LinkedForms& v);
void to_json(nlohmann::json& j, const MainPage& v);
void from_json(const nlohmann::json& j, MainPage& v);
void to_json(nlohmann::json& j, const Demographics& v);
void from_json(const nlohmann::json& j, Demographics& v);
void to_json(nlohmann::json& j, const PostInteractionMessage& v);
void from_json(const nlohmann::json& j, PostInteractionMessage& v);
void to_json(nlohmann::json& j, const ExperimentConfig& v);
void from_json(const nlohmann::json& j, ExperimentConfig& v);
void to_json(nlohmann::json& j, const SamplingParams& v);
void from_json(const nlohmann::json& j, SamplingParams& v);
void to_json(nlohmann::json& j, const AgentConfig& v);
void from_json(const nlohmann::json& j, AgentConfig& v);
void to_json(nlohmann::json& j, const ParticipantRecord& v);
void from_json(const nlohmann::json& j, ParticipantRecord& v);
void to_json(nlohmann::json& j, const MessageRecord& v);
void from_json(const nlohmann::json& j, MessageRecord& v);
void to_json(nlohmann::json& j, const ConversationSession& v);
void from_json(const nlohmann::json& j, ConversationSession& v);

}  // namespace chatlab
