#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "chatlab/agent_runtime.hpp"
#include "chatlab/allocation.hpp"
#include "chatlab/auth.hpp"
#include "chatlab/export.hpp"
#include "chatlab/forms.hpp"
#include "chatlab/store.hpp"

namespace chatlab {

struct ServiceConfig {
  AdminCredentials admin;
  std::chrono::milliseconds admin_token_ttl = std::chrono::hours(8);
  std::chrono::milliseconds participant_token_ttl = std::chrono::hours(12);
  std::optional<std::uint64_t> seed;  // allocation and id generation; entropy when absent
  std::string public_base_url;        // prepended to experiment addresses when set
  RetryPolicy retry;
  int login_max_failures = 10;
  std::chrono::milliseconds login_window = std::chrono::minutes(1);
  std::chrono::milliseconds login_lockout = std::chrono::minutes(1);
  std::optional<std::chrono::milliseconds> session_auto_close;  // none: open sessions stay open
  std::size_t max_message_chars = 4000;
  std::string provider_error_notice = "Sorry, I could not respond just now. Please try sending your message again.";
  Clock clock = now;
};

/// URL-safe, injective encoding of an experiment id: [A-Za-z0-9_-] pass through,
/// every other byte becomes '.' followed by two hex digits.
std::string experiment_slug(const ExperimentId& id);
std::optional<ExperimentId> experiment_id_from_slug(std::string_view slug);

/// Replaces {username}, {session} and {condition} with percent-encoded values.
std::string substitute_survey_url(std::string_view url_template, std::string_view username, std::string_view session,
                                  std::string_view condition);

struct TokenIssue {
  std::string token;
  Timestamp expires_at{};
};

struct RegistrationRequest {
  std::string username;
  std::optional<int> age;
  std::optional<std::string> gender;
  Answers answers;
};

struct ConversationStart {
  SessionId session_id;
  MessageRecord first_message;
};

struct TurnResult {
  MessageRecord user_message;
  MessageRecord agent_message;
  bool force_finish = false;  // the message quota is now spent; show the finish flow
};

struct FinishResult {
  std::string message;
  std::optional<std::string> survey_url;
};

class StudyService;

/// A user message that has been stored and is waiting for its agent reply. If it is
/// dropped without completing, an error notice is appended so no user turn dangles.
class PendingTurn {
 public:
  PendingTurn(PendingTurn&& other) noexcept;
  PendingTurn& operator=(PendingTurn&&) = delete;
  PendingTurn(const PendingTurn&) = delete;
  ~PendingTurn();

  const MessageRecord& user_message() const { return user_message_; }
  bool streaming_enabled() const { return stream_; }

 private:
  friend class StudyService;
  PendingTurn() = default;

  StudyService* service_ = nullptr;
  SessionId session_id_;
  AgentConfig agent_;
  std::vector<MessageRecord> history_;
  MessageRecord user_message_;
  QuotaDecision quota_ = QuotaDecision::kAllowed;
  bool stream_ = false;
  bool done_ = false;
};

/// Admin and participant operations, independent of the transport.
class StudyService {
 public:
  StudyService(Store& store, ChatProvider& provider, ServiceConfig config);

  // -- admin ---------------------------------------------------------------
  TokenIssue admin_login(std::string_view username, std::string_view password, const std::string& client);
  /// Throws kUnauthorized unless `token` is a live admin token.
  void require_admin(std::string_view token) const;

  AgentConfig create_agent(AgentConfig agent);
  AgentConfig update_agent(const AgentId& id, AgentConfig agent);
  void delete_agent(const AgentId& id);

  FormDefinition create_form(FormDefinition form);
  FormDefinition update_form(const FormId& id, FormDefinition form);
  void delete_form(const FormId& id);

  ExperimentConfig create_experiment(ExperimentConfig experiment);
  ExperimentConfig update_experiment(const ExperimentId& id, ExperimentConfig experiment);
  void delete_experiment(const ExperimentId& id);
  ExperimentConfig set_status(const ExperimentId& id, ExperimentStatus status);
  ExperimentConfig update_main_page(const ExperimentId& id, MainPage page);

  ExperimentConfig experiment(const ExperimentId& id) const;
  ExperimentSummary summary(const ExperimentId& id);
  /// Stable public path /e/{slug}.
  std::string experiment_address(const ExperimentId& id) const;
  /// public_base_url + experiment_address.
  std::string experiment_url(const ExperimentId& id) const;
  /// Builds the export and refuses to return one that fails its integrity checks.
  ExportBundle export_experiment(const ExperimentId& id);
  ExperimentId import_experiment(const nlohmann::json& document);

  // -- participant ---------------------------------------------------------
  /// The study a slug addresses, if it exists and is active.
  ExperimentConfig open_study(std::string_view slug) const;
  std::vector<FormDefinition> study_forms(const ExperimentConfig& config) const;

  TokenIssue register_participant(std::string_view slug, const RegistrationRequest& request);
  TokenIssue login_returning(std::string_view slug, std::string_view username);
  ConversationStart start_conversation(std::string_view slug, std::string_view token,
                                       const std::optional<Answers>& pre_answers);

  /// Validates and stores the user message and reserves the session's generation slot.
  PendingTurn begin_turn(std::string_view slug, std::string_view token, const SessionId& session,
                         std::string_view text);
  /// Obtains the reply (streamed into `sink` when given and the study streams) and stores it.
  TurnResult complete_turn(PendingTurn& turn, const ChunkSink* sink = nullptr);
  TurnResult send_message(std::string_view slug, std::string_view token, const SessionId& session,
                          std::string_view text, const ChunkSink* sink = nullptr);

  MessageRecord annotate(std::string_view slug, std::string_view token, const MessageId& message, int value);
  FinishResult finish_conversation(std::string_view slug, std::string_view token, const SessionId& session,
                                   const std::optional<Answers>& post_answers);

  ConversationSession participant_session(std::string_view slug, std::string_view token,
                                          const SessionId& session) const;
  std::vector<ConversationSession> participant_sessions(std::string_view slug, std::string_view token) const;

  const ServiceConfig& config() const { return config_; }
  Store& store() { return store_; }
  AllocationEngine& allocation() { return allocation_; }

 private:
  friend class PendingTurn;

  struct ParticipantContext {
    ExperimentConfig experiment;
    ParticipantRecord participant;
  };

  ParticipantContext authorize(std::string_view slug, std::string_view token) const;
  ConversationSession owned_session(const ParticipantContext& ctx, const SessionId& id) const;
  void check_experiment(const ExperimentConfig& experiment, bool activating) const;
  void restore_allocation(const ExperimentId& id);
  void maybe_auto_close();
  bool acquire_generation(const SessionId& id);
  void release_generation(const SessionId& id);
  bool generating(const SessionId& id) const;
  void abandon_turn(PendingTurn& turn) noexcept;
  MessageRecord store_reply(PendingTurn& turn, const ProviderReply& reply);

  Store& store_;
  ChatProvider& provider_;
  ServiceConfig config_;
  AllocationEngine allocation_;
  IdGenerator ids_;
  TokenRegistry tokens_;
  LoginRateLimiter login_limiter_;
  mutable std::mutex generation_mutex_;
  std::set<SessionId> generating_;
  std::mutex definitions_mutex_;
};

}  // namespace chatlab
