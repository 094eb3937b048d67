#include "chatlab/store.hpp"

#include <algorithm>
#include <cstdio>
#include <unistd.h>

#include "json_util.hpp"

namespace chatlab {

using nlohmann::json;

namespace {

constexpr const char* kAgents = "agents";
constexpr const char* kForms = "forms";
constexpr const char* kExperiments = "experiments";
constexpr const char* kParticipants = "participants";
constexpr const char* kSessions = "sessions";
constexpr const char* kMessages = "messages";

std::string participant_doc_id(const ExperimentId& experiment, std::string_view username) {
  return experiment.str() + "/" + std::string(username);
}

json session_header(const ConversationSession& session) {
  json doc = session;
  doc.erase("messages");
  return doc;
}

}  // namespace

// ---------------------------------------------------------------------------
// JournalDocumentStore

JournalDocumentStore::JournalDocumentStore(std::filesystem::path path, bool sync_every_write)
    : path_(std::move(path)), sync_(sync_every_write) {}

void JournalDocumentStore::append(const json& record) {
  std::lock_guard lock(mutex_);
  if (!out_.is_open()) {
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) throw Error(ErrorCode::kIo, "cannot open journal " + path_.string());
  }
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::kIo, "journal write failed: " + path_.string());
  if (sync_) {
    // ofstream exposes no descriptor; fsync through a second one flushes the same inode.
    if (FILE* f = std::fopen(path_.c_str(), "a")) {
      ::fsync(fileno(f));
      std::fclose(f);
    }
  }
}

void JournalDocumentStore::upsert(std::string_view collection, std::string_view id, const json& doc) {
  append(json{{"op", "put"}, {"c", collection}, {"id", id}, {"doc", doc}});
}

void JournalDocumentStore::remove(std::string_view collection, std::string_view id) {
  append(json{{"op", "del"}, {"c", collection}, {"id", id}});
}

std::vector<StoredDocument> JournalDocumentStore::load() {
  std::lock_guard lock(mutex_);
  out_.close();

  std::vector<StoredDocument> live;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::vector<bool> removed;

  if (std::ifstream in(path_, std::ios::binary); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json record;
      try {
        record = json::parse(line);
      } catch (const json::exception&) {
        break;  // torn tail
      }
      auto key = std::make_pair(record.at("c").get<std::string>(), record.at("id").get<std::string>());
      const bool is_put = record.at("op") == "put";
      auto it = index.find(key);
      if (is_put) {
        if (it != index.end() && !removed[it->second]) {
          live[it->second].doc = std::move(record.at("doc"));
        } else {
          index[key] = live.size();
          live.push_back({key.first, key.second, std::move(record.at("doc"))});
          removed.push_back(false);
        }
      } else if (it != index.end()) {
        removed[it->second] = true;
        index.erase(it);
      }
    }
  }

  std::vector<StoredDocument> out;
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (!removed[i]) out.push_back(std::move(live[i]));
  }

  // Compact: write the live set to a temp file and swap it in.
  const auto tmp = path_.string() + ".compact";
  {
    std::ofstream compact(tmp, std::ios::trunc | std::ios::binary);
    if (!compact) throw Error(ErrorCode::kIo, "cannot write " + tmp);
    for (const auto& d : out) {
      compact << json{{"op", "put"}, {"c", d.collection}, {"id", d.id}, {"doc", d.doc}}.dump() << '\n';
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path_, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot replace journal: " + ec.message());
  return out;
}

// ---------------------------------------------------------------------------
// Store

void to_json(json& j, const ExperimentSummary& v) {
  j = json{{"participants_count", v.participants_count},
           {"sessions_count", v.sessions_count},
           {"open_sessions_count", v.open_sessions_count},
           {"launch_date", format_timestamp(v.launch_date)},
           {"status", v.status}};
}

Store::Store(std::shared_ptr<DocumentStore> backend, std::optional<std::uint64_t> id_seed)
    : backend_(std::move(backend)), ids_(id_seed ? IdGenerator(*id_seed ^ 0x5eed5eed5eedULL) : IdGenerator()) {
  std::unique_lock lock(mutex_);
  load_locked();
}

void Store::load_locked() {
  std::map<std::string, std::vector<StoredDocument>> by_collection;
  for (auto& doc : backend_->load()) by_collection[doc.collection].push_back(std::move(doc));

  for (const auto& d : by_collection[kAgents]) {
    auto agent = d.doc.get<AgentConfig>();
    agents_[agent.id] = agent;
  }
  for (const auto& d : by_collection[kForms]) {
    auto form = d.doc.get<FormDefinition>();
    forms_[form.id] = form;
  }
  for (const auto& d : by_collection[kExperiments]) {
    auto experiment = d.doc.get<ExperimentConfig>();
    experiment_data_[experiment.id];
    experiments_[experiment.id] = experiment;
  }
  for (const auto& d : by_collection[kParticipants]) insert_participant_locked(d.doc.get<ParticipantRecord>());
  for (const auto& d : by_collection[kSessions]) insert_session_locked(d.doc.get<ConversationSession>());
  for (const auto& d : by_collection[kMessages]) {
    auto message = d.doc.get<MessageRecord>();
    auto it = sessions_.find(message.session_id);
    if (it == sessions_.end()) continue;
    message_index_[message.id] = message.session_id;
    it->second.messages.push_back(std::move(message));
  }
  for (auto& [id, session] : sessions_) {
    std::sort(session.messages.begin(), session.messages.end(),
              [](const MessageRecord& a, const MessageRecord& b) { return a.position < b.position; });
  }
}

Store::ExperimentData& Store::data_for(const ExperimentId& id) { return experiment_data_[id]; }

void Store::put_agent(const AgentConfig& agent) {
  std::unique_lock lock(mutex_);
  backend_->upsert(kAgents, agent.id.str(), agent);
  agents_[agent.id] = agent;
}

std::optional<AgentConfig> Store::agent(const AgentId& id) const {
  std::shared_lock lock(mutex_);
  auto it = agents_.find(id);
  if (it == agents_.end()) return std::nullopt;
  return it->second;
}

std::vector<AgentConfig> Store::agents() const {
  std::shared_lock lock(mutex_);
  std::vector<AgentConfig> out;
  for (const auto& [id, agent] : agents_) out.push_back(agent);
  return out;
}

void Store::remove_agent(const AgentId& id) {
  std::unique_lock lock(mutex_);
  if (agents_.erase(id) == 0) throw Error(ErrorCode::kNotFound, "unknown agent '" + id.str() + "'");
  backend_->remove(kAgents, id.str());
}

void Store::put_form(const FormDefinition& form) {
  std::unique_lock lock(mutex_);
  backend_->upsert(kForms, form.id.str(), form);
  forms_[form.id] = form;
}

std::optional<FormDefinition> Store::form(const FormId& id) const {
  std::shared_lock lock(mutex_);
  auto it = forms_.find(id);
  if (it == forms_.end()) return std::nullopt;
  return it->second;
}

std::vector<FormDefinition> Store::forms() const {
  std::shared_lock lock(mutex_);
  std::vector<FormDefinition> out;
  for (const auto& [id, form] : forms_) out.push_back(form);
  return out;
}

void Store::remove_form(const FormId& id) {
  std::unique_lock lock(mutex_);
  if (forms_.erase(id) == 0) throw Error(ErrorCode::kNotFound, "unknown form '" + id.str() + "'");
  backend_->remove(kForms, id.str());
}

void Store::put_experiment(const ExperimentConfig& experiment) {
  std::unique_lock lock(mutex_);
  backend_->upsert(kExperiments, experiment.id.str(), experiment);
  experiments_[experiment.id] = experiment;
  data_for(experiment.id);
}

std::optional<ExperimentConfig> Store::experiment(const ExperimentId& id) const {
  std::shared_lock lock(mutex_);
  auto it = experiments_.find(id);
  if (it == experiments_.end()) return std::nullopt;
  return it->second;
}

std::vector<ExperimentConfig> Store::experiments() const {
  std::shared_lock lock(mutex_);
  std::vector<ExperimentConfig> out;
  for (const auto& [id, experiment] : experiments_) out.push_back(experiment);
  return out;
}

void Store::remove_experiment(const ExperimentId& id) {
  std::unique_lock lock(mutex_);
  if (!experiments_.contains(id)) throw Error(ErrorCode::kNotFound, "unknown experiment '" + id.str() + "'");
  auto& data = data_for(id);
  for (const auto& session_id : data.session_order) {
    auto& session = sessions_.at(session_id);
    for (const auto& message : session.messages) {
      backend_->remove(kMessages, message.id.str());
      message_index_.erase(message.id);
    }
    backend_->remove(kSessions, session_id.str());
    sessions_.erase(session_id);
  }
  for (const auto& username : data.participant_order) {
    backend_->remove(kParticipants, participant_doc_id(id, username));
    participants_.erase(ParticipantKey{id, username});
  }
  backend_->remove(kExperiments, id.str());
  experiments_.erase(id);
  experiment_data_.erase(id);
}

void Store::insert_participant_locked(const ParticipantRecord& record) {
  ParticipantKey key{record.experiment_id, record.username};
  participants_.emplace(key, record);
  data_for(record.experiment_id).participant_order.push_back(record.username);
}

void Store::create_participant(const ParticipantRecord& record) {
  std::unique_lock lock(mutex_);
  if (participants_.contains(ParticipantKey{record.experiment_id, record.username})) {
    throw Error(ErrorCode::kConflict, "username taken");
  }
  backend_->upsert(kParticipants, participant_doc_id(record.experiment_id, record.username), record);
  insert_participant_locked(record);
}

std::optional<ParticipantRecord> Store::participant(const ExperimentId& experiment, std::string_view username) const {
  std::shared_lock lock(mutex_);
  auto it = participants_.find(ParticipantKey{experiment, std::string(username)});
  if (it == participants_.end()) return std::nullopt;
  return it->second;
}

std::vector<ParticipantRecord> Store::participants(const ExperimentId& experiment) const {
  std::shared_lock lock(mutex_);
  std::vector<ParticipantRecord> out;
  auto it = experiment_data_.find(experiment);
  if (it == experiment_data_.end()) return out;
  for (const auto& username : it->second.participant_order) {
    out.push_back(participants_.at(ParticipantKey{experiment, username}));
  }
  return out;
}

void Store::insert_session_locked(ConversationSession session) {
  data_for(session.experiment_id).session_order.push_back(session.id);
  for (const auto& message : session.messages) message_index_[message.id] = session.id;
  sessions_.emplace(session.id, std::move(session));
}

ConversationSession Store::create_session(ConversationSession session) {
  std::unique_lock lock(mutex_);
  if (session.id.empty()) session.id = ids_.next_id<SessionId>("ses");
  if (sessions_.contains(session.id)) throw Error(ErrorCode::kConflict, "session id exists");
  if (!participants_.contains(ParticipantKey{session.experiment_id, session.username})) {
    throw Error(ErrorCode::kNotFound, "unknown participant '" + session.username + "'");
  }
  session.messages.clear();
  persist_session_header(session);
  insert_session_locked(session);
  return session;
}

std::optional<ConversationSession> Store::session(const SessionId& id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

std::vector<ConversationSession> Store::sessions(const ExperimentId& experiment) const {
  std::shared_lock lock(mutex_);
  std::vector<ConversationSession> out;
  auto it = experiment_data_.find(experiment);
  if (it == experiment_data_.end()) return out;
  for (const auto& id : it->second.session_order) out.push_back(sessions_.at(id));
  return out;
}

ConversationSession& Store::session_locked(const SessionId& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown session '" + id.str() + "'");
  return it->second;
}

void Store::persist_session_header(const ConversationSession& session) {
  backend_->upsert(kSessions, session.id.str(), session_header(session));
}

void Store::persist_message(const MessageRecord& message) { backend_->upsert(kMessages, message.id.str(), message); }

MessageRecord Store::append_message(const SessionId& session_id, MessageRecord message) {
  std::unique_lock lock(mutex_);
  auto& session = session_locked(session_id);
  if (!session.is_open()) throw Error(ErrorCode::kConflict, "session is finished");
  const Author expected =
      session.messages.empty() || session.messages.back().author == Author::kUser ? Author::kAgent : Author::kUser;
  if (message.author != expected) {
    throw Error(ErrorCode::kInvalidArgument, std::string("role alternation violated: expected ") +
                                                 std::string(to_string(expected)) + " message");
  }
  if (message.author == Author::kUser && message.annotation) {
    throw Error(ErrorCode::kInvalidArgument, "only agent messages can be annotated");
  }
  if (message.id.empty()) message.id = ids_.next_id<MessageId>("msg");
  if (message_index_.contains(message.id)) throw Error(ErrorCode::kConflict, "message id exists");
  message.session_id = session_id;
  message.position = static_cast<int>(session.messages.size()) + 1;
  if (!session.messages.empty()) message.sent_at = std::max(message.sent_at, session.messages.back().sent_at);
  message.sent_at = std::max(message.sent_at, session.started_at);

  persist_message(message);
  message_index_[message.id] = session_id;
  session.messages.push_back(message);
  return message;
}

std::optional<MessageRecord> Store::message(const MessageId& id) const {
  std::shared_lock lock(mutex_);
  auto it = message_index_.find(id);
  if (it == message_index_.end()) return std::nullopt;
  for (const auto& m : sessions_.at(it->second).messages) {
    if (m.id == id) return m;
  }
  return std::nullopt;
}

MessageRecord Store::set_annotation(const MessageId& id, int value) {
  if (value != 1 && value != -1) throw Error(ErrorCode::kInvalidArgument, "annotation must be 1 or -1");
  std::unique_lock lock(mutex_);
  auto it = message_index_.find(id);
  if (it == message_index_.end()) throw Error(ErrorCode::kNotFound, "unknown message '" + id.str() + "'");
  for (auto& m : sessions_.at(it->second).messages) {
    if (m.id != id) continue;
    if (m.author != Author::kAgent) {
      throw Error(ErrorCode::kInvalidArgument, "only agent messages can be annotated");
    }
    m.annotation = value;
    persist_message(m);
    return m;
  }
  throw Error(ErrorCode::kNotFound, "unknown message '" + id.str() + "'");
}

void Store::finish_session(const SessionId& id, const Answers& post_answers, std::optional<Timestamp> at) {
  std::unique_lock lock(mutex_);
  auto& session = session_locked(id);
  if (!session.is_open()) return;
  Timestamp finished = at.value_or(now());
  finished = std::max(finished, session.started_at);
  if (!session.messages.empty()) finished = std::max(finished, session.messages.back().sent_at);
  session.finished_at = finished;
  session.post_form_answers = post_answers;
  persist_session_header(session);
}

int Store::close_stale_sessions(Timestamp current, std::chrono::milliseconds max_age) {
  std::unique_lock lock(mutex_);
  int closed = 0;
  for (auto& [id, session] : sessions_) {
    if (!session.is_open()) continue;
    const Timestamp last = session.messages.empty() ? session.started_at : session.messages.back().sent_at;
    if (current - last < max_age) continue;
    session.finished_at = std::max(current, last);
    persist_session_header(session);
    ++closed;
  }
  return closed;
}

ExperimentSummary Store::summarize_experiment(const ExperimentId& experiment) const {
  std::shared_lock lock(mutex_);
  auto config = experiments_.find(experiment);
  if (config == experiments_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown experiment '" + experiment.str() + "'");
  }
  const auto& data = experiment_data_.at(experiment);
  ExperimentSummary summary;
  summary.participants_count = static_cast<int>(data.participant_order.size());
  summary.sessions_count = static_cast<int>(data.session_order.size());
  for (const auto& id : data.session_order) {
    if (sessions_.at(id).is_open()) ++summary.open_sessions_count;
  }
  summary.launch_date = config->second.launch_date;
  summary.status = config->second.status;
  return summary;
}

ExperimentSnapshot Store::snapshot(const ExperimentId& experiment) const {
  std::shared_lock lock(mutex_);
  auto config = experiments_.find(experiment);
  if (config == experiments_.end()) {
    throw Error(ErrorCode::kNotFound, "unknown experiment '" + experiment.str() + "'");
  }
  ExperimentSnapshot snap;
  snap.experiment = config->second;
  for (const auto& entry : snap.experiment.agents) {
    if (auto it = agents_.find(entry.agent_id); it != agents_.end()) snap.agents.push_back(it->second);
  }
  for (const auto& id : {snap.experiment.forms.registration, snap.experiment.forms.before_conversation,
                         snap.experiment.forms.after_conversation}) {
    if (!id) continue;
    auto it = forms_.find(*id);
    if (it == forms_.end()) continue;
    const bool seen = std::any_of(snap.forms.begin(), snap.forms.end(),
                                  [&](const FormDefinition& f) { return f.id == *id; });
    if (!seen) snap.forms.push_back(it->second);
  }
  const auto& data = experiment_data_.at(experiment);
  for (const auto& username : data.participant_order) {
    snap.participants.push_back(participants_.at(ParticipantKey{experiment, username}));
  }
  for (const auto& id : data.session_order) snap.sessions.push_back(sessions_.at(id));
  return snap;
}

void Store::import_snapshot(const ExperimentSnapshot& snap) {
  std::unique_lock lock(mutex_);
  const auto& id = snap.experiment.id;
  if (experiments_.contains(id)) throw Error(ErrorCode::kConflict, "experiment '" + id.str() + "' already exists");
  for (const auto& agent : snap.agents) {
    if (auto it = agents_.find(agent.id); it != agents_.end() && !(it->second == agent)) {
      throw Error(ErrorCode::kConflict, "a different agent '" + agent.id.str() + "' already exists");
    }
  }
  for (const auto& form : snap.forms) {
    if (auto it = forms_.find(form.id); it != forms_.end() && !(it->second == form)) {
      throw Error(ErrorCode::kConflict, "a different form '" + form.id.str() + "' already exists");
    }
  }
  for (const auto& session : snap.sessions) {
    if (sessions_.contains(session.id)) throw Error(ErrorCode::kConflict, "session '" + session.id.str() + "' exists");
    for (const auto& m : session.messages) {
      if (message_index_.contains(m.id)) throw Error(ErrorCode::kConflict, "message '" + m.id.str() + "' exists");
    }
  }

  for (const auto& agent : snap.agents) {
    backend_->upsert(kAgents, agent.id.str(), agent);
    agents_[agent.id] = agent;
  }
  for (const auto& form : snap.forms) {
    backend_->upsert(kForms, form.id.str(), form);
    forms_[form.id] = form;
  }
  backend_->upsert(kExperiments, id.str(), snap.experiment);
  experiments_[id] = snap.experiment;
  data_for(id);
  for (const auto& record : snap.participants) {
    backend_->upsert(kParticipants, participant_doc_id(record.experiment_id, record.username), record);
    insert_participant_locked(record);
  }
  for (const auto& session : snap.sessions) {
    persist_session_header(session);
    for (const auto& m : session.messages) persist_message(m);
    insert_session_locked(session);
  }
}

}  // namespace chatlab
