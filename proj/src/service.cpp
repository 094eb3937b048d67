#include "chatlab/service.hpp"

#include <algorithm>
#include <cctype>
#include <utility>

namespace chatlab {

namespace {

constexpr char kHex[] = "0123456789ABCDEF";

bool slug_safe(unsigned char c) { return std::isalnum(c) || c == '_' || c == '-'; }

bool valid_username(std::string_view name) {
  if (name.empty() || name.size() > 64) return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.' || c == '@';
  });
}

std::string percent_encode(std::string_view text) {
  std::string out;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0xF];
    }
  }
  return out;
}

bool blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
}

Error admission_error(const std::string& reason) {
  if (reason == "experiment full") return Error(ErrorCode::kExperimentFull, reason);
  if (reason == "experiment inactive") return Error(ErrorCode::kExperimentInactive, reason);
  return Error(ErrorCode::kConflict, reason);
}

std::vector<AgentId> agent_ids(const ExperimentConfig& config) {
  std::vector<AgentId> out;
  for (const auto& entry : config.agents) out.push_back(entry.agent_id);
  return out;
}

bool references_form(const ExperimentConfig& config, const FormId& id) {
  return config.forms.registration == id || config.forms.before_conversation == id ||
         config.forms.after_conversation == id;
}

}  // namespace

std::string experiment_slug(const ExperimentId& id) {
  std::string out;
  for (unsigned char c : id.str()) {
    if (slug_safe(c)) {
      out += static_cast<char>(c);
    } else {
      out += '.';
      out += static_cast<char>(std::tolower(kHex[c >> 4]));
      out += static_cast<char>(std::tolower(kHex[c & 0xF]));
    }
  }
  return out;
}

std::optional<ExperimentId> experiment_id_from_slug(std::string_view slug) {
  std::string out;
  for (std::size_t i = 0; i < slug.size(); ++i) {
    const auto c = static_cast<unsigned char>(slug[i]);
    if (slug_safe(c)) {
      out += static_cast<char>(c);
      continue;
    }
    if (c != '.' || i + 2 >= slug.size()) return std::nullopt;
    auto nibble = [](char h) -> int {
      if (h >= '0' && h <= '9') return h - '0';
      if (h >= 'a' && h <= 'f') return h - 'a' + 10;
      return -1;
    };
    const int hi = nibble(slug[i + 1]);
    const int lo = nibble(slug[i + 2]);
    if (hi < 0 || lo < 0) return std::nullopt;
    const auto decoded = static_cast<unsigned char>(hi * 16 + lo);
    if (slug_safe(decoded)) return std::nullopt;  // non-canonical
    out += static_cast<char>(decoded);
    i += 2;
  }
  if (out.empty()) return std::nullopt;
  return ExperimentId(out);
}

std::string substitute_survey_url(std::string_view url_template, std::string_view username,
                                  std::string_view session, std::string_view condition) {
  std::string out;
  std::size_t pos = 0;
  while (pos < url_template.size()) {
    const auto open = url_template.find('{', pos);
    if (open == std::string_view::npos) break;
    const auto close = url_template.find('}', open);
    if (close == std::string_view::npos) break;
    out.append(url_template.substr(pos, open - pos));
    const auto name = url_template.substr(open + 1, close - open - 1);
    if (name == "username") out += percent_encode(username);
    else if (name == "session") out += percent_encode(session);
    else if (name == "condition") out += percent_encode(condition);
    else out.append(url_template.substr(open, close - open + 1));
    pos = close + 1;
  }
  out.append(url_template.substr(pos));
  return out;
}

// ---------------------------------------------------------------------------
// PendingTurn

PendingTurn::PendingTurn(PendingTurn&& other) noexcept
    : service_(std::exchange(other.service_, nullptr)),
      session_id_(std::move(other.session_id_)),
      agent_(std::move(other.agent_)),
      history_(std::move(other.history_)),
      user_message_(std::move(other.user_message_)),
      quota_(other.quota_),
      stream_(other.stream_),
      done_(std::exchange(other.done_, true)) {}

PendingTurn::~PendingTurn() {
  if (service_ && !done_) service_->abandon_turn(*this);
}

// ---------------------------------------------------------------------------
// StudyService

StudyService::StudyService(Store& store, ChatProvider& provider, ServiceConfig config)
    : store_(store),
      provider_(provider),
      config_(std::move(config)),
      allocation_(config_.seed),
      ids_(config_.seed ? IdGenerator(*config_.seed) : IdGenerator()),
      login_limiter_(config_.login_max_failures, config_.login_window, config_.login_lockout) {
  if (!config_.clock) config_.clock = now;
  for (const auto& experiment : store_.experiments()) restore_allocation(experiment.id);
}

void StudyService::restore_allocation(const ExperimentId& id) {
  std::vector<std::pair<std::string, AgentId>> participants;
  for (const auto& p : store_.participants(id)) participants.emplace_back(p.username, p.condition_agent_id);
  std::map<std::string, int> conversations;
  for (const auto& s : store_.sessions(id)) conversations[s.username] += 1;
  allocation_.restore(id, participants, conversations);
}

TokenIssue StudyService::admin_login(std::string_view username, std::string_view password,
                                     const std::string& client) {
  const auto at = config_.clock();
  if (login_limiter_.blocked(client, at)) {
    throw Error(ErrorCode::kRateLimited, "too many failed logins; try again later");
  }
  const bool user_ok = constant_time_equals(username, config_.admin.username);
  const bool password_ok = verify_password(password, config_.admin.password_hash);
  if (!(user_ok && password_ok)) {
    login_limiter_.record_failure(client, at);
    throw Error(ErrorCode::kUnauthorized, "invalid credentials");
  }
  login_limiter_.record_success(client);
  TokenGrant grant;
  grant.kind = TokenKind::kAdmin;
  grant.username = config_.admin.username;
  grant.expires_at = at + config_.admin_token_ttl;
  return {tokens_.issue(grant), grant.expires_at};
}

void StudyService::require_admin(std::string_view token) const {
  auto grant = tokens_.resolve(token, config_.clock());
  if (!grant || grant->kind != TokenKind::kAdmin) throw Error(ErrorCode::kUnauthorized, "admin login required");
}

// -- definitions --------------------------------------------------------------

AgentConfig StudyService::create_agent(AgentConfig agent) {
  if (agent.id.empty()) agent.id = ids_.next_id<AgentId>("agt");
  if (auto violations = validate_agent(agent); !violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid agent", violations);
  }
  std::lock_guard lock(definitions_mutex_);
  if (store_.agent(agent.id)) throw Error(ErrorCode::kConflict, "agent '" + agent.id.str() + "' already exists");
  store_.put_agent(agent);
  return agent;
}

AgentConfig StudyService::update_agent(const AgentId& id, AgentConfig agent) {
  agent.id = id;
  if (auto violations = validate_agent(agent); !violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid agent", violations);
  }
  std::lock_guard lock(definitions_mutex_);
  if (!store_.agent(id)) throw Error(ErrorCode::kNotFound, "unknown agent '" + id.str() + "'");
  store_.put_agent(agent);
  return agent;
}

void StudyService::delete_agent(const AgentId& id) {
  std::lock_guard lock(definitions_mutex_);
  for (const auto& experiment : store_.experiments()) {
    const auto ids = agent_ids(experiment);
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) {
      throw Error(ErrorCode::kConflict, "agent is used by experiment '" + experiment.id.str() + "'");
    }
  }
  store_.remove_agent(id);
}

FormDefinition StudyService::create_form(FormDefinition form) {
  if (form.id.empty()) form.id = ids_.next_id<FormId>("frm");
  if (auto violations = validate_form_definition(form); !violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid form", violations);
  }
  std::lock_guard lock(definitions_mutex_);
  if (store_.form(form.id)) throw Error(ErrorCode::kConflict, "form '" + form.id.str() + "' already exists");
  store_.put_form(form);
  return form;
}

FormDefinition StudyService::update_form(const FormId& id, FormDefinition form) {
  form.id = id;
  if (auto violations = validate_form_definition(form); !violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid form", violations);
  }
  std::lock_guard lock(definitions_mutex_);
  if (!store_.form(id)) throw Error(ErrorCode::kNotFound, "unknown form '" + id.str() + "'");
  for (const auto& experiment : store_.experiments()) {
    if (experiment.forms.registration == id) {
      for (const auto& column : participant_columns()) {
        if (form.find(column)) {
          throw Error(ErrorCode::kInvalidArgument, "invalid form",
                      {{"questions", "registration key '" + column + "' collides with a participant column"}});
        }
      }
    }
  }
  store_.put_form(form);
  return form;
}

void StudyService::delete_form(const FormId& id) {
  std::lock_guard lock(definitions_mutex_);
  for (const auto& experiment : store_.experiments()) {
    if (references_form(experiment, id)) {
      throw Error(ErrorCode::kConflict, "form is used by experiment '" + experiment.id.str() + "'");
    }
  }
  store_.remove_form(id);
}

void StudyService::check_experiment(const ExperimentConfig& experiment, bool activating) const {
  std::set<AgentId> agents;
  for (const auto& agent : store_.agents()) agents.insert(agent.id);
  std::set<FormId> forms;
  for (const auto& form : store_.forms()) forms.insert(form.id);
  auto violations = validate_experiment(experiment, agents, forms);
  if (experiment.forms.registration) {
    if (auto form = store_.form(*experiment.forms.registration)) {
      for (const auto& column : participant_columns()) {
        if (form->find(column)) {
          violations.push_back({"forms.registration", "question key '" + column + "' collides with a participant column"});
        }
      }
    }
  }
  if (!violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, activating ? "experiment cannot be activated" : "invalid experiment",
                violations);
  }
}

ExperimentConfig StudyService::create_experiment(ExperimentConfig experiment) {
  if (experiment.id.empty()) experiment.id = ids_.next_id<ExperimentId>("exp");
  if (experiment.launch_date == Timestamp{}) experiment.launch_date = config_.clock();
  std::lock_guard lock(definitions_mutex_);
  check_experiment(experiment, experiment.status == ExperimentStatus::kActive);
  if (store_.experiment(experiment.id)) {
    throw Error(ErrorCode::kConflict, "experiment '" + experiment.id.str() + "' already exists");
  }
  store_.put_experiment(experiment);
  allocation_.forget(experiment.id);
  return experiment;
}

ExperimentConfig StudyService::update_experiment(const ExperimentId& id, ExperimentConfig experiment) {
  experiment.id = id;
  std::lock_guard lock(definitions_mutex_);
  auto current = store_.experiment(id);
  if (!current) throw Error(ErrorCode::kNotFound, "unknown experiment '" + id.str() + "'");
  if (experiment.launch_date == Timestamp{}) experiment.launch_date = current->launch_date;
  if (agent_ids(experiment) != agent_ids(*current) && !store_.participants(id).empty()) {
    throw Error(ErrorCode::kConflict, "agents cannot change once participants are registered");
  }
  if (experiment.main_page != current->main_page) experiment.main_page_updated_at = config_.clock();
  check_experiment(experiment, experiment.status == ExperimentStatus::kActive);
  store_.put_experiment(experiment);
  return experiment;
}

void StudyService::delete_experiment(const ExperimentId& id) {
  std::lock_guard lock(definitions_mutex_);
  store_.remove_experiment(id);
  allocation_.forget(id);
}

ExperimentConfig StudyService::set_status(const ExperimentId& id, ExperimentStatus status) {
  std::lock_guard lock(definitions_mutex_);
  auto experiment = store_.experiment(id);
  if (!experiment) throw Error(ErrorCode::kNotFound, "unknown experiment '" + id.str() + "'");
  if (status == ExperimentStatus::kActive) check_experiment(*experiment, true);
  experiment->status = status;
  store_.put_experiment(*experiment);
  return *experiment;
}

ExperimentConfig StudyService::update_main_page(const ExperimentId& id, MainPage page) {
  std::lock_guard lock(definitions_mutex_);
  auto experiment = store_.experiment(id);
  if (!experiment) throw Error(ErrorCode::kNotFound, "unknown experiment '" + id.str() + "'");
  experiment->main_page = std::move(page);
  experiment->main_page_updated_at = config_.clock();
  store_.put_experiment(*experiment);
  return *experiment;
}

ExperimentConfig StudyService::experiment(const ExperimentId& id) const {
  auto experiment = store_.experiment(id);
  if (!experiment) throw Error(ErrorCode::kNotFound, "unknown experiment '" + id.str() + "'");
  return *experiment;
}

void StudyService::maybe_auto_close() {
  if (config_.session_auto_close) store_.close_stale_sessions(config_.clock(), *config_.session_auto_close);
}

ExperimentSummary StudyService::summary(const ExperimentId& id) {
  maybe_auto_close();
  return store_.summarize_experiment(id);
}

std::string StudyService::experiment_address(const ExperimentId& id) const {
  if (!store_.experiment(id)) throw Error(ErrorCode::kNotFound, "unknown experiment '" + id.str() + "'");
  return "/e/" + experiment_slug(id);
}

std::string StudyService::experiment_url(const ExperimentId& id) const {
  auto base = config_.public_base_url;
  while (!base.empty() && base.back() == '/') base.pop_back();
  return base + experiment_address(id);
}

ExportBundle StudyService::export_experiment(const ExperimentId& id) {
  maybe_auto_close();
  auto bundle = build_export(store_.snapshot(id));
  if (auto violations = check_integrity(bundle); !violations.empty()) {
    throw Error(ErrorCode::kIo, "export failed integrity checks", violations);
  }
  return bundle;
}

ExperimentId StudyService::import_experiment(const nlohmann::json& document) {
  auto snapshot = snapshot_from_export(document);
  std::lock_guard lock(definitions_mutex_);
  store_.import_snapshot(snapshot);
  restore_allocation(snapshot.experiment.id);
  return snapshot.experiment.id;
}

// -- participant side ----------------------------------------------------------

ExperimentConfig StudyService::open_study(std::string_view slug) const {
  auto id = experiment_id_from_slug(slug);
  std::optional<ExperimentConfig> experiment = id ? store_.experiment(*id) : std::nullopt;
  if (!experiment) throw Error(ErrorCode::kNotFound, "unknown study");
  if (experiment->status != ExperimentStatus::kActive) {
    throw Error(ErrorCode::kExperimentInactive, "experiment inactive");
  }
  return *experiment;
}

std::vector<FormDefinition> StudyService::study_forms(const ExperimentConfig& config) const {
  std::vector<FormDefinition> out;
  for (const auto& id : {config.forms.registration, config.forms.before_conversation, config.forms.after_conversation}) {
    if (!id) continue;
    if (auto form = store_.form(*id)) out.push_back(*form);
  }
  return out;
}

StudyService::ParticipantContext StudyService::authorize(std::string_view slug, std::string_view token) const {
  auto experiment = open_study(slug);
  auto grant = tokens_.resolve(token, config_.clock());
  if (!grant || grant->kind != TokenKind::kParticipant) {
    throw Error(ErrorCode::kUnauthorized, "participant login required");
  }
  if (grant->experiment != experiment.id) throw Error(ErrorCode::kForbidden, "token belongs to another study");
  auto participant = store_.participant(experiment.id, grant->username);
  if (!participant) throw Error(ErrorCode::kUnauthorized, "participant no longer exists");
  return {std::move(experiment), std::move(*participant)};
}

ConversationSession StudyService::owned_session(const ParticipantContext& ctx, const SessionId& id) const {
  auto session = store_.session(id);
  if (!session) throw Error(ErrorCode::kNotFound, "unknown session");
  if (session->experiment_id != ctx.experiment.id || session->username != ctx.participant.username) {
    throw Error(ErrorCode::kForbidden, "session belongs to another participant");
  }
  return *session;
}

TokenIssue StudyService::register_participant(std::string_view slug, const RegistrationRequest& request) {
  const auto experiment = open_study(slug);

  Violations violations;
  if (!valid_username(request.username)) {
    violations.push_back({"username", "1-64 characters of letters, digits, '_', '-', '.', '@'"});
  }
  if (experiment.demographics.collect_age) {
    if (!request.age) violations.push_back({"age", "required"});
    else if (*request.age < 1 || *request.age > 130) violations.push_back({"age", "out of range"});
  } else if (request.age) {
    violations.push_back({"age", "not collected in this study"});
  }
  if (experiment.demographics.collect_gender) {
    if (!request.gender || blank(*request.gender)) violations.push_back({"gender", "required"});
  } else if (request.gender) {
    violations.push_back({"gender", "not collected in this study"});
  }
  Answers answers;
  if (experiment.forms.registration) {
    auto form = store_.form(*experiment.forms.registration);
    if (!form) throw Error(ErrorCode::kNotFound, "registration form missing");
    auto form_violations = validate_response(*form, request.answers);
    violations.insert(violations.end(), form_violations.begin(), form_violations.end());
    if (form_violations.empty()) answers = normalize_response(*form, request.answers);
  } else {
    for (const auto& [key, value] : request.answers) violations.push_back({key, "unknown key"});
  }
  if (!violations.empty()) throw Error(ErrorCode::kInvalidArgument, "invalid registration", violations);

  ParticipantRecord record;
  record.username = request.username;
  record.experiment_id = experiment.id;
  record.age = request.age;
  record.gender = request.gender;
  record.registration_answers = std::move(answers);
  record.registered_at = config_.clock();

  auto admission = allocation_.admit_participant(experiment, request.username, [&](const AgentId& agent) {
    record.condition_agent_id = agent;
    store_.create_participant(record);
  });
  if (!admission.admitted) throw admission_error(admission.reason);

  TokenGrant grant;
  grant.kind = TokenKind::kParticipant;
  grant.experiment = experiment.id;
  grant.username = request.username;
  grant.expires_at = config_.clock() + config_.participant_token_ttl;
  return {tokens_.issue(grant), grant.expires_at};
}

TokenIssue StudyService::login_returning(std::string_view slug, std::string_view username) {
  const auto experiment = open_study(slug);
  if (!store_.participant(experiment.id, username)) throw Error(ErrorCode::kNotFound, "unknown username");
  TokenGrant grant;
  grant.kind = TokenKind::kParticipant;
  grant.experiment = experiment.id;
  grant.username = std::string(username);
  grant.expires_at = config_.clock() + config_.participant_token_ttl;
  return {tokens_.issue(grant), grant.expires_at};
}

ConversationStart StudyService::start_conversation(std::string_view slug, std::string_view token,
                                                   const std::optional<Answers>& pre_answers) {
  const auto ctx = authorize(slug, token);
  const Answers submitted = pre_answers.value_or(Answers{});
  Answers stored;
  if (ctx.experiment.forms.before_conversation) {
    auto form = store_.form(*ctx.experiment.forms.before_conversation);
    if (!form) throw Error(ErrorCode::kNotFound, "before-conversation form missing");
    if (auto violations = validate_response(*form, submitted); !violations.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "invalid pre-conversation answers", violations);
    }
    stored = to_dataset_answers(normalize_response(*form, submitted), FormPhase::kBefore);
  } else if (!submitted.empty()) {
    Violations violations;
    for (const auto& [key, value] : submitted) violations.push_back({key, "unknown key"});
    throw Error(ErrorCode::kInvalidArgument, "this study has no pre-conversation form", violations);
  }

  auto agent = store_.agent(ctx.participant.condition_agent_id);
  if (!agent) throw Error(ErrorCode::kNotFound, "condition agent missing");

  if (allocation_.reserve_conversation(ctx.experiment, ctx.participant.username) == QuotaDecision::kDenied) {
    throw Error(ErrorCode::kQuotaExceeded, "conversation limit reached");
  }
  try {
    ConversationSession session;
    session.id = ids_.next_id<SessionId>("ses");
    session.username = ctx.participant.username;
    session.experiment_id = ctx.experiment.id;
    session.agent_id = ctx.participant.condition_agent_id;
    session.started_at = config_.clock();
    session.pre_form_answers = std::move(stored);
    session = store_.create_session(std::move(session));

    auto opener = first_message(*agent);
    opener.id = ids_.next_id<MessageId>("msg");
    opener.sent_at = config_.clock();
    opener = store_.append_message(session.id, std::move(opener));
    return {session.id, opener};
  } catch (...) {
    allocation_.release_conversation(ctx.experiment.id, ctx.participant.username);
    throw;
  }
}

bool StudyService::acquire_generation(const SessionId& id) {
  std::lock_guard lock(generation_mutex_);
  return generating_.insert(id).second;
}

void StudyService::release_generation(const SessionId& id) {
  std::lock_guard lock(generation_mutex_);
  generating_.erase(id);
}

bool StudyService::generating(const SessionId& id) const {
  std::lock_guard lock(generation_mutex_);
  return generating_.contains(id);
}

PendingTurn StudyService::begin_turn(std::string_view slug, std::string_view token, const SessionId& session_id,
                                     std::string_view text) {
  const auto ctx = authorize(slug, token);
  owned_session(ctx, session_id);
  if (blank(text)) throw Error(ErrorCode::kInvalidArgument, "message is empty", {{"text", "required"}});
  if (text.size() > config_.max_message_chars) {
    throw Error(ErrorCode::kInvalidArgument, "message too long",
                {{"text", "at most " + std::to_string(config_.max_message_chars) + " characters"}});
  }
  if (!acquire_generation(session_id)) {
    throw Error(ErrorCode::kBusy, "a reply is still being generated for this conversation");
  }

  PendingTurn turn;
  try {
    const auto session = owned_session(ctx, session_id);  // re-read under the generation slot
    if (!session.is_open()) throw Error(ErrorCode::kConflict, "session is finished");
    const auto quota = check_message_quota(session, ctx.experiment.boundaries.max_messages_per_interaction);
    if (quota == QuotaDecision::kDenied) throw Error(ErrorCode::kQuotaExceeded, "message limit reached");
    auto agent = store_.agent(session.agent_id);
    if (!agent) throw Error(ErrorCode::kNotFound, "condition agent missing");

    MessageRecord message;
    message.id = ids_.next_id<MessageId>("msg");
    message.author = Author::kUser;
    message.text = std::string(text);
    message.sent_at = config_.clock();
    turn.user_message_ = store_.append_message(session_id, std::move(message));
    turn.session_id_ = session_id;
    turn.agent_ = std::move(*agent);
    turn.history_ = session.messages;
    turn.quota_ = quota;
    turn.stream_ = ctx.experiment.features.stream_message;
    turn.service_ = this;
  } catch (...) {
    release_generation(session_id);
    throw;
  }
  return turn;
}

MessageRecord StudyService::store_reply(PendingTurn& turn, const ProviderReply& reply) {
  MessageRecord message;
  message.id = ids_.next_id<MessageId>("msg");
  message.author = Author::kAgent;
  message.sent_at = config_.clock();
  if (reply.finish_reason != FinishReason::kError && !reply.content.empty()) {
    message.text = reply.content;
    message.status = MessageStatus::kComplete;
  } else if (reply.finish_reason == FinishReason::kError && !reply.content.empty()) {
    message.text = reply.content;
    message.status = MessageStatus::kPartial;
  } else {
    message.text = config_.provider_error_notice;
    message.status = MessageStatus::kError;
  }
  return store_.append_message(turn.session_id_, std::move(message));
}

TurnResult StudyService::complete_turn(PendingTurn& turn, const ChunkSink* sink) {
  if (turn.done_ || turn.service_ != this) throw Error(ErrorCode::kConflict, "turn already completed");
  const auto request = assemble_request(turn.agent_, turn.history_, turn.user_message_.text);
  ProviderReply reply;
  if (sink && turn.stream_) {
    reply = stream_reply(request, provider_, *sink, config_.retry);
  } else {
    reply = generate_reply(request, provider_, config_.retry);
  }
  TurnResult result;
  result.user_message = turn.user_message_;
  try {
    result.agent_message = store_reply(turn, reply);
  } catch (...) {
    turn.done_ = true;
    release_generation(turn.session_id_);
    throw;
  }
  result.force_finish = turn.quota_ == QuotaDecision::kLastMessage;
  turn.done_ = true;
  release_generation(turn.session_id_);
  return result;
}

void StudyService::abandon_turn(PendingTurn& turn) noexcept {
  try {
    ProviderReply reply;
    reply.finish_reason = FinishReason::kError;
    reply.error = "reply abandoned";
    store_reply(turn, reply);
  } catch (...) {
  }
  turn.done_ = true;
  release_generation(turn.session_id_);
}

TurnResult StudyService::send_message(std::string_view slug, std::string_view token, const SessionId& session,
                                      std::string_view text, const ChunkSink* sink) {
  auto turn = begin_turn(slug, token, session, text);
  return complete_turn(turn, sink);
}

MessageRecord StudyService::annotate(std::string_view slug, std::string_view token, const MessageId& message_id,
                                     int value) {
  const auto ctx = authorize(slug, token);
  if (!ctx.experiment.features.user_annotation) throw Error(ErrorCode::kFeatureDisabled, "annotation disabled");
  auto message = store_.message(message_id);
  if (!message) throw Error(ErrorCode::kNotFound, "unknown message");
  owned_session(ctx, message->session_id);
  return store_.set_annotation(message_id, value);
}

FinishResult StudyService::finish_conversation(std::string_view slug, std::string_view token,
                                               const SessionId& session_id,
                                               const std::optional<Answers>& post_answers) {
  const auto ctx = authorize(slug, token);
  const auto session = owned_session(ctx, session_id);

  FinishResult result;
  result.message = ctx.experiment.post_interaction.text;
  if (!ctx.experiment.post_interaction.survey_url_template.empty()) {
    result.survey_url = substitute_survey_url(ctx.experiment.post_interaction.survey_url_template,
                                              ctx.participant.username, session_id.str(),
                                              condition_label(ctx.experiment, session.agent_id));
  }
  if (!session.is_open()) return result;
  if (generating(session_id)) throw Error(ErrorCode::kBusy, "a reply is still being generated for this conversation");

  const Answers submitted = post_answers.value_or(Answers{});
  Answers stored;
  if (ctx.experiment.forms.after_conversation) {
    auto form = store_.form(*ctx.experiment.forms.after_conversation);
    if (!form) throw Error(ErrorCode::kNotFound, "after-conversation form missing");
    if (auto violations = validate_response(*form, submitted); !violations.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "invalid post-conversation answers", violations);
    }
    stored = to_dataset_answers(normalize_response(*form, submitted), FormPhase::kAfter);
  } else if (!submitted.empty()) {
    Violations violations;
    for (const auto& [key, value] : submitted) violations.push_back({key, "unknown key"});
    throw Error(ErrorCode::kInvalidArgument, "this study has no post-conversation form", violations);
  }
  store_.finish_session(session_id, stored, config_.clock());
  return result;
}

ConversationSession StudyService::participant_session(std::string_view slug, std::string_view token,
                                                      const SessionId& session) const {
  const auto ctx = authorize(slug, token);
  return owned_session(ctx, session);
}

std::vector<ConversationSession> StudyService::participant_sessions(std::string_view slug,
                                                                    std::string_view token) const {
  const auto ctx = authorize(slug, token);
  std::vector<ConversationSession> out;
  for (auto& session : store_.sessions(ctx.experiment.id)) {
    if (session.username == ctx.participant.username) out.push_back(std::move(session));
  }
  return out;
}

}  // namespace chatlab
