#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chatlab/domain.hpp"
#include "chatlab/forms.hpp"

namespace chatlab {

struct StoredDocument {
  std::string collection;
  std::string id;
  nlohmann::json doc;
};

/// Narrow persistence interface the store writes through: collections of JSON
/// documents keyed by id. A deployment can back it with a document database.
class DocumentStore {
 public:
  virtual ~DocumentStore() = default;

  virtual void upsert(std::string_view collection, std::string_view id, const nlohmann::json& doc) = 0;
  virtual void remove(std::string_view collection, std::string_view id) = 0;

  /// Every live document, in first-insertion order.
  virtual std::vector<StoredDocument> load() = 0;
};

/// Keeps nothing; for tests and throwaway instances.
class NullDocumentStore : public DocumentStore {
 public:
  void upsert(std::string_view, std::string_view, const nlohmann::json&) override {}
  void remove(std::string_view, std::string_view) override {}
  std::vector<StoredDocument> load() override { return {}; }
};

/// Append-only JSON-lines journal. Opening replays the journal and rewrites it
/// compacted; a torn final line from a crash is dropped.
class JournalDocumentStore : public DocumentStore {
 public:
  explicit JournalDocumentStore(std::filesystem::path path, bool sync_every_write = false);

  void upsert(std::string_view collection, std::string_view id, const nlohmann::json& doc) override;
  void remove(std::string_view collection, std::string_view id) override;
  std::vector<StoredDocument> load() override;

 private:
  void append(const nlohmann::json& record);

  std::filesystem::path path_;
  bool sync_;
  std::mutex mutex_;
  std::ofstream out_;
};

struct ExperimentSummary {
  int participants_count = 0;
  int sessions_count = 0;
  int open_sessions_count = 0;
  Timestamp launch_date{};
  ExperimentStatus status = ExperimentStatus::kInactive;

  bool operator==(const ExperimentSummary&) const = default;
};

void to_json(nlohmann::json& j, const ExperimentSummary& v);

/// Everything recorded for one experiment, read at a single point in time.
struct ExperimentSnapshot {
  ExperimentConfig experiment;
  std::vector<AgentConfig> agents;
  std::vector<FormDefinition> forms;
  std::vector<ParticipantRecord> participants;   // registration order
  std::vector<ConversationSession> sessions;     // start order, messages by position
};

/// Persists definitions, participants, sessions, messages, annotations and form
/// answers. Writes are serialized; reads share a lock and see a consistent state.
class Store {
 public:
  explicit Store(std::shared_ptr<DocumentStore> backend = std::make_shared<NullDocumentStore>(),
                 std::optional<std::uint64_t> id_seed = std::nullopt);

  // Definitions.
  void put_agent(const AgentConfig& agent);
  std::optional<AgentConfig> agent(const AgentId& id) const;
  std::vector<AgentConfig> agents() const;
  void remove_agent(const AgentId& id);

  void put_form(const FormDefinition& form);
  std::optional<FormDefinition> form(const FormId& id) const;
  std::vector<FormDefinition> forms() const;
  void remove_form(const FormId& id);

  void put_experiment(const ExperimentConfig& experiment);
  std::optional<ExperimentConfig> experiment(const ExperimentId& id) const;
  std::vector<ExperimentConfig> experiments() const;
  /// Removes the experiment and all of its participants, sessions and messages.
  void remove_experiment(const ExperimentId& id);

  // Participants. Throws kConflict("username taken") on a duplicate within the experiment.
  void create_participant(const ParticipantRecord& record);
  std::optional<ParticipantRecord> participant(const ExperimentId& experiment, std::string_view username) const;
  std::vector<ParticipantRecord> participants(const ExperimentId& experiment) const;

  // Sessions. A session id is generated when empty.
  ConversationSession create_session(ConversationSession session);
  std::optional<ConversationSession> session(const SessionId& id) const;
  std::vector<ConversationSession> sessions(const ExperimentId& experiment) const;

  /// Appends at the next position; assigns an id when empty and clamps sent_at so
  /// timestamps never decrease. Throws on a finished session or a role-alternation violation.
  MessageRecord append_message(const SessionId& session, MessageRecord message);
  std::optional<MessageRecord> message(const MessageId& id) const;

  /// Last write wins. Only agent messages; value must be 1 or -1.
  MessageRecord set_annotation(const MessageId& id, int value);

  /// Closes an open session and stores its post-form answers. A second call is a no-op.
  void finish_session(const SessionId& id, const Answers& post_answers = {}, std::optional<Timestamp> at = {});

  /// Finishes open sessions whose last activity is older than max_age. Returns how many.
  int close_stale_sessions(Timestamp current, std::chrono::milliseconds max_age);

  ExperimentSummary summarize_experiment(const ExperimentId& experiment) const;
  ExperimentSnapshot snapshot(const ExperimentId& experiment) const;

  /// Loads a complete snapshot (e.g. a parsed export). Fails if any id already exists.
  void import_snapshot(const ExperimentSnapshot& snapshot);

 private:
  struct ParticipantKey {
    ExperimentId experiment;
    std::string username;
    auto operator<=>(const ParticipantKey&) const = default;
  };

  struct ExperimentData {
    std::vector<std::string> participant_order;
    std::vector<SessionId> session_order;
  };

  void load_locked();
  ExperimentData& data_for(const ExperimentId& id);
  ConversationSession& session_locked(const SessionId& id);
  void persist_session_header(const ConversationSession& session);
  void persist_message(const MessageRecord& message);
  void insert_participant_locked(const ParticipantRecord& record);
  void insert_session_locked(ConversationSession session);

  std::shared_ptr<DocumentStore> backend_;
  IdGenerator ids_;
  mutable std::shared_mutex mutex_;

  std::map<AgentId, AgentConfig> agents_;
  std::map<FormId, FormDefinition> forms_;
  std::map<ExperimentId, ExperimentConfig> experiments_;
  std::map<ExperimentId, ExperimentData> experiment_data_;
  std::map<ParticipantKey, ParticipantRecord> participants_;
  std::unordered_map<SessionId, ConversationSession> sessions_;
  std::unordered_map<MessageId, SessionId> message_index_;
};

}  // namespace chatlab
