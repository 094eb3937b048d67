#include "chatlab/export.hpp"

#include <algorithm>
#include <set>

#include "chatlab/csv.hpp"
#include "json_util.hpp"

namespace chatlab {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

const std::vector<std::string> kParticipantColumns = {"experiment_id", "username",   "condition",    "agent_id",
                                                      "age",           "gender",     "registered_at"};
const std::vector<std::string> kSessionColumns = {"experiment_id", "session_id",  "username", "condition",
                                                  "agent_id",      "started_at",  "finished_at", "status",
                                                  "user_messages", "agent_messages"};
const std::vector<std::string> kMessageColumns = {"experiment_id", "username", "condition", "agent_id",
                                                  "session_id",    "message_id", "position", "author",
                                                  "text",          "sent_at",  "annotation", "status"};
const std::vector<std::string> kResponseColumns = {"experiment_id", "username", "condition", "agent_id",
                                                   "session_id"};

const FormDefinition* find_form(const ExperimentSnapshot& snap, const std::optional<FormId>& id) {
  if (!id) return nullptr;
  for (const auto& form : snap.forms) {
    if (form.id == *id) return &form;
  }
  return nullptr;
}

// Form keys (mapped into the phase namespace) in question order, followed by any
// other keys present in the data, sorted.
std::vector<std::string> answer_columns(const FormDefinition* form, FormPhase phase,
                                        const std::set<std::string>& present) {
  std::vector<std::string> out;
  std::set<std::string> listed;
  if (form) {
    for (const auto& q : form->questions) {
      auto key = dataset_key(q.key, phase);
      listed.insert(key);
      out.push_back(std::move(key));
    }
  }
  for (const auto& key : present) {
    if (!listed.contains(key)) out.push_back(key);
  }
  return out;
}

json row_from(const std::vector<std::string>& columns, json values) {
  json row = json::object();
  for (const auto& column : columns) {
    auto it = values.find(column);
    row[column] = it == values.end() ? json(nullptr) : std::move(*it);
  }
  return row;
}

std::string cell(const json& value) {
  if (value.is_null()) return "";
  if (value.is_string()) return value.get<std::string>();
  return value.dump();
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

ExportTable table_from_json(const std::string& name, const json& doc) {
  ExportTable table;
  table.name = name;
  table.columns = doc.at("columns").get<std::vector<std::string>>();
  for (const auto& row : doc.at("rows")) table.rows.push_back(row);
  return table;
}

json table_to_json(const ExportTable& table) {
  return json{{"columns", table.columns}, {"rows", table.rows}};
}

}  // namespace

const std::vector<std::string>& participant_columns() { return kParticipantColumns; }

ExportBundle build_export(const ExperimentSnapshot& snap) {
  const auto& config = snap.experiment;
  const std::string experiment_id = config.id.str();
  std::map<std::string, AgentId> condition_of;
  for (const auto& p : snap.participants) condition_of[p.username] = p.condition_agent_id;

  ExportBundle bundle;

  ExperimentSummary summary;
  summary.participants_count = static_cast<int>(snap.participants.size());
  summary.sessions_count = static_cast<int>(snap.sessions.size());
  summary.open_sessions_count = static_cast<int>(
      std::count_if(snap.sessions.begin(), snap.sessions.end(), [](const auto& s) { return s.is_open(); }));
  summary.launch_date = config.launch_date;
  summary.status = config.status;
  bundle.metadata = json{{"schema_version", kSchemaVersion},
                         {"experiment", config},
                         {"agents", snap.agents},
                         {"forms", snap.forms},
                         {"summary", summary}};

  // participants
  std::set<std::string> registration_keys;
  for (const auto& p : snap.participants) {
    for (const auto& [key, value] : p.registration_answers) registration_keys.insert(key);
  }
  bundle.participants.name = "participants";
  bundle.participants.columns = kParticipantColumns;
  for (auto& column : answer_columns(find_form(snap, config.forms.registration), FormPhase::kRegistration,
                                     registration_keys)) {
    bundle.participants.columns.push_back(std::move(column));
  }
  for (const auto& p : snap.participants) {
    json values = {{"experiment_id", experiment_id},
                   {"username", p.username},
                   {"condition", condition_label(config, p.condition_agent_id)},
                   {"agent_id", p.condition_agent_id},
                   {"age", detail::optional_to_json(p.age)},
                   {"gender", detail::optional_to_json(p.gender)},
                   {"registered_at", format_timestamp(p.registered_at)}};
    for (const auto& [key, value] : p.registration_answers) values[key] = value;
    bundle.participants.rows.push_back(row_from(bundle.participants.columns, std::move(values)));
  }

  // sessions + messages
  bundle.sessions.name = "sessions";
  bundle.sessions.columns = kSessionColumns;
  bundle.messages.name = "messages";
  bundle.messages.columns = kMessageColumns;
  std::set<std::string> pre_keys;
  std::set<std::string> post_keys;
  for (const auto& s : snap.sessions) {
    const auto agent = condition_of.contains(s.username) ? condition_of[s.username] : s.agent_id;
    const auto label = condition_label(config, agent);
    bundle.sessions.rows.push_back(row_from(bundle.sessions.columns,
                                            json{{"experiment_id", experiment_id},
                                                 {"session_id", s.id},
                                                 {"username", s.username},
                                                 {"condition", condition_label(config, s.agent_id)},
                                                 {"agent_id", s.agent_id},
                                                 {"started_at", format_timestamp(s.started_at)},
                                                 {"finished_at", detail::optional_timestamp_to_json(s.finished_at)},
                                                 {"status", s.is_open() ? "open" : "finished"},
                                                 {"user_messages", s.count_messages(Author::kUser)},
                                                 {"agent_messages", s.count_messages(Author::kAgent)}}));
    for (const auto& m : s.messages) {
      bundle.messages.rows.push_back(row_from(bundle.messages.columns,
                                              json{{"experiment_id", experiment_id},
                                                   {"username", s.username},
                                                   {"condition", label},
                                                   {"agent_id", agent},
                                                   {"session_id", s.id},
                                                   {"message_id", m.id},
                                                   {"position", m.position},
                                                   {"author", m.author},
                                                   {"text", m.text},
                                                   {"sent_at", format_timestamp(m.sent_at)},
                                                   {"annotation", detail::optional_to_json(m.annotation)},
                                                   {"status", m.status}}));
    }
    for (const auto& [key, value] : s.pre_form_answers) pre_keys.insert(key);
    for (const auto& [key, value] : s.post_form_answers) post_keys.insert(key);
  }

  // responses: one row per session
  bundle.responses.name = "responses";
  bundle.responses.columns = kResponseColumns;
  for (auto& column : answer_columns(find_form(snap, config.forms.before_conversation), FormPhase::kBefore, pre_keys)) {
    bundle.responses.columns.push_back(std::move(column));
  }
  for (auto& column : answer_columns(find_form(snap, config.forms.after_conversation), FormPhase::kAfter, post_keys)) {
    bundle.responses.columns.push_back(std::move(column));
  }
  for (const auto& s : snap.sessions) {
    json values = {{"experiment_id", experiment_id},
                   {"username", s.username},
                   {"condition", condition_label(config, s.agent_id)},
                   {"agent_id", s.agent_id},
                   {"session_id", s.id}};
    for (const auto& [key, value] : s.pre_form_answers) values[key] = value;
    for (const auto& [key, value] : s.post_form_answers) values[key] = value;
    bundle.responses.rows.push_back(row_from(bundle.responses.columns, std::move(values)));
  }
  return bundle;
}

Violations check_integrity(const ExportBundle& bundle) {
  Violations out;
  for (const ExportTable* table : bundle.tables()) {
    for (std::size_t i = 0; i < table->rows.size(); ++i) {
      if (table->rows[i].size() != table->columns.size()) {
        out.push_back({table->name + "[" + std::to_string(i) + "]", "row does not match column set"});
      }
    }
  }

  std::map<std::string, std::string> participant_agent;
  for (const auto& row : bundle.participants.rows) {
    const auto username = row.value("username", "");
    if (!participant_agent.emplace(username, cell(row["agent_id"])).second) {
      out.push_back({"participants", "duplicate username '" + username + "'"});
    }
  }

  struct SessionInfo {
    std::string username;
    int user_messages = 0;
    int agent_messages = 0;
    int seen_user = 0;
    int seen_agent = 0;
    int last_position = 0;
    std::string last_sent_at;
    bool has_response = false;
  };
  std::map<std::string, SessionInfo> sessions;
  int open_sessions = 0;
  for (const auto& row : bundle.sessions.rows) {
    const auto id = cell(row["session_id"]);
    const auto username = cell(row["username"]);
    auto p = participant_agent.find(username);
    if (p == participant_agent.end()) {
      out.push_back({"sessions", "session '" + id + "' references unknown participant '" + username + "'"});
    } else if (p->second != cell(row["agent_id"])) {
      out.push_back({"sessions", "session '" + id + "' agent differs from the participant's condition"});
    }
    if (row["status"] == "open") ++open_sessions;
    SessionInfo info;
    info.username = username;
    info.user_messages = row["user_messages"].is_number() ? row["user_messages"].get<int>() : -1;
    info.agent_messages = row["agent_messages"].is_number() ? row["agent_messages"].get<int>() : -1;
    if (!sessions.emplace(id, info).second) out.push_back({"sessions", "duplicate session '" + id + "'"});
  }

  for (const auto& row : bundle.messages.rows) {
    const auto session_id = cell(row["session_id"]);
    auto it = sessions.find(session_id);
    if (it == sessions.end()) {
      out.push_back({"messages", "message '" + cell(row["message_id"]) + "' references unknown session"});
      continue;
    }
    auto& info = it->second;
    if (cell(row["username"]) != info.username) {
      out.push_back({"messages", "message '" + cell(row["message_id"]) + "' username differs from its session"});
    }
    const int position = row["position"].is_number() ? row["position"].get<int>() : -1;
    if (position != info.last_position + 1) {
      out.push_back({"messages", "session '" + session_id + "' positions are not contiguous"});
    }
    info.last_position = position;
    const bool agent = row["author"] == "agent";
    const bool expected_agent = position % 2 == 1;
    if (agent != expected_agent) out.push_back({"messages", "session '" + session_id + "' roles do not alternate"});
    (agent ? info.seen_agent : info.seen_user) += 1;
    const auto& annotation = row["annotation"];
    if (!annotation.is_null()) {
      if (!agent) out.push_back({"messages", "annotation on a user message"});
      if (!(annotation == 1 || annotation == -1)) out.push_back({"messages", "annotation outside {1,-1}"});
    }
    const auto sent_at = cell(row["sent_at"]);
    if (sent_at < info.last_sent_at) out.push_back({"messages", "session '" + session_id + "' timestamps decrease"});
    info.last_sent_at = sent_at;
  }

  for (const auto& row : bundle.responses.rows) {
    auto it = sessions.find(cell(row["session_id"]));
    if (it == sessions.end()) {
      out.push_back({"responses", "response references unknown session '" + cell(row["session_id"]) + "'"});
    } else if (it->second.has_response) {
      out.push_back({"responses", "more than one response row for session '" + it->first + "'"});
    } else {
      it->second.has_response = true;
    }
  }

  for (const auto& [id, info] : sessions) {
    if (info.seen_user != info.user_messages || info.seen_agent != info.agent_messages) {
      out.push_back({"sessions", "session '" + id + "' message counts disagree with the messages table"});
    }
    if (!info.has_response) out.push_back({"responses", "no response row for session '" + id + "'"});
  }

  if (bundle.metadata.contains("summary")) {
    const auto& summary = bundle.metadata["summary"];
    if (summary.value("participants_count", -1) != static_cast<int>(bundle.participants.rows.size()) ||
        summary.value("sessions_count", -1) != static_cast<int>(bundle.sessions.rows.size()) ||
        summary.value("open_sessions_count", -1) != open_sessions) {
      out.push_back({"summary", "summary counts disagree with the tables"});
    }
  }
  return out;
}

std::string to_json_document(const ExportBundle& bundle) {
  json doc = bundle.metadata;
  json tables = json::object();
  for (const ExportTable* table : bundle.tables()) tables[table->name] = table_to_json(*table);
  doc["tables"] = std::move(tables);
  return doc.dump(2) + "\n";
}

std::string to_csv(const ExportTable& table) {
  std::string out = csv::format_row(table.columns);
  std::vector<std::string> fields(table.columns.size());
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      auto it = row.find(table.columns[i]);
      fields[i] = it == row.end() ? "" : cell(*it);
    }
    out += csv::format_row(fields);
  }
  return out;
}

std::map<std::string, std::string> export_files(const ExportBundle& bundle, ExportFormat format) {
  const auto id = bundle.metadata.at("experiment").at("id").get<std::string>();
  std::map<std::string, std::string> files;
  if (format == ExportFormat::kJson) {
    files[id + ".json"] = to_json_document(bundle);
  } else {
    for (const ExportTable* table : bundle.tables()) files[id + "_" + table->name + ".csv"] = to_csv(*table);
  }
  return files;
}

ExportBundle bundle_from_json(const json& document) {
  ExportBundle bundle;
  bundle.metadata = document;
  bundle.metadata.erase("tables");
  const auto& tables = document.at("tables");
  bundle.participants = table_from_json("participants", tables.at("participants"));
  bundle.sessions = table_from_json("sessions", tables.at("sessions"));
  bundle.messages = table_from_json("messages", tables.at("messages"));
  bundle.responses = table_from_json("responses", tables.at("responses"));
  return bundle;
}

ExperimentSnapshot snapshot_from_export(const json& document) {
  if (document.value("schema_version", 0) != kSchemaVersion) {
    throw Error(ErrorCode::kInvalidArgument, "unsupported export schema version");
  }
  const auto bundle = bundle_from_json(document);
  if (auto violations = check_integrity(bundle); !violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "export fails integrity checks", violations);
  }

  ExperimentSnapshot snap;
  snap.experiment = document.at("experiment").get<ExperimentConfig>();
  snap.agents = document.at("agents").get<std::vector<AgentConfig>>();
  snap.forms = document.at("forms").get<std::vector<FormDefinition>>();

  const std::set<std::string> fixed(kParticipantColumns.begin(), kParticipantColumns.end());
  for (const auto& row : bundle.participants.rows) {
    ParticipantRecord p;
    p.username = row.at("username").get<std::string>();
    p.experiment_id = snap.experiment.id;
    p.condition_agent_id = row.at("agent_id").get<AgentId>();
    p.age = detail::optional_from_json<int>(row, "age");
    p.gender = detail::optional_from_json<std::string>(row, "gender");
    p.registered_at = detail::timestamp_from_json(row, "registered_at");
    for (const auto& [key, value] : row.items()) {
      if (!fixed.contains(key) && !value.is_null()) p.registration_answers[key] = value;
    }
    snap.participants.push_back(std::move(p));
  }

  std::map<std::string, std::size_t> session_index;
  for (const auto& row : bundle.sessions.rows) {
    ConversationSession s;
    s.id = row.at("session_id").get<SessionId>();
    s.username = row.at("username").get<std::string>();
    s.experiment_id = snap.experiment.id;
    s.agent_id = row.at("agent_id").get<AgentId>();
    s.started_at = detail::timestamp_from_json(row, "started_at");
    s.finished_at = detail::optional_timestamp_from_json(row, "finished_at");
    session_index[s.id.str()] = snap.sessions.size();
    snap.sessions.push_back(std::move(s));
  }
  for (const auto& row : bundle.messages.rows) {
    MessageRecord m;
    m.id = row.at("message_id").get<MessageId>();
    m.session_id = row.at("session_id").get<SessionId>();
    m.position = row.at("position").get<int>();
    m.author = row.at("author").get<Author>();
    m.text = row.at("text").get<std::string>();
    m.sent_at = detail::timestamp_from_json(row, "sent_at");
    m.annotation = detail::optional_from_json<int>(row, "annotation");
    m.status = row.at("status").get<MessageStatus>();
    snap.sessions[session_index.at(m.session_id.str())].messages.push_back(std::move(m));
  }
  for (const auto& row : bundle.responses.rows) {
    auto& s = snap.sessions[session_index.at(row.at("session_id").get<std::string>())];
    for (const auto& [key, value] : row.items()) {
      if (value.is_null()) continue;
      if (starts_with(key, kPrePrefix)) s.pre_form_answers[key] = value;
      else if (starts_with(key, kPostPrefix)) s.post_form_answers[key] = value;
    }
  }
  return snap;
}

}  // namespace chatlab
