#include "chatlab/sim.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "chatlab/csv.hpp"
#include "chatlab/service.hpp"
#include "chatlab/sse.hpp"

namespace chatlab::sim {

using nlohmann::json;

namespace {

const std::vector<std::string> kVocabulary = {
    "today", "I",     "feel",  "quite", "tired", "but",   "the",   "weather", "is",   "nice",
    "work",  "was",   "busy",  "and",   "my",    "plans", "for",   "evening", "are",  "simple",
    "maybe", "a",     "walk",  "then",  "some",  "music", "sleep", "early",   "tea",  "friends",
};

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

std::string_view policy_name(AnswerPolicy p) {
  switch (p) {
    case AnswerPolicy::kRandom: return "random";
    case AnswerPolicy::kMin: return "min";
    case AnswerPolicy::kMax: return "max";
    case AnswerPolicy::kFixed: return "fixed";
  }
  return "random";
}

PhaseAnswers phase_from_json(const json& j) {
  PhaseAnswers out;
  const auto policy = j.value("policy", "random");
  if (policy == "random") out.policy = AnswerPolicy::kRandom;
  else if (policy == "min") out.policy = AnswerPolicy::kMin;
  else if (policy == "max") out.policy = AnswerPolicy::kMax;
  else if (policy == "fixed") out.policy = AnswerPolicy::kFixed;
  else throw Error(ErrorCode::kInvalidArgument, "unknown answer policy '" + policy + "'");
  if (j.contains("values")) out.values = j.at("values").get<Answers>();
  return out;
}

json phase_to_json(const PhaseAnswers& p) {
  json out = {{"policy", policy_name(p.policy)}};
  if (!p.values.empty()) out["values"] = p.values;
  return out;
}

std::optional<double> numeric(const json& value) {
  if (value.is_number()) return value.get<double>();
  if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    if (s.empty()) return std::nullopt;
    try {
      std::size_t used = 0;
      const double d = std::stod(s, &used);
      if (used == s.size()) return d;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

std::string text_of(const json& value) {
  if (value.is_null()) return "";
  if (value.is_string()) return value.get<std::string>();
  return value.dump();
}

int word_count(std::string_view text) {
  std::istringstream in{std::string(text)};
  int n = 0;
  std::string word;
  while (in >> word) ++n;
  return n;
}

const FormDefinition* linked_form(const std::vector<FormDefinition>& forms, const json& id) {
  if (!id.is_string()) return nullptr;
  for (const auto& form : forms) {
    if (form.id.str() == id.get<std::string>()) return &form;
  }
  return nullptr;
}

std::optional<double> mean_of(const json& row, const std::vector<std::string>& keys) {
  if (keys.empty()) return std::nullopt;
  double sum = 0;
  for (const auto& key : keys) {
    auto it = row.find(key);
    if (it == row.end()) return std::nullopt;
    auto v = numeric(*it);
    if (!v) return std::nullopt;
    sum += *v;
  }
  return sum / static_cast<double>(keys.size());
}

std::vector<std::string> prefixed(const std::vector<std::string>& keys, std::string_view prefix) {
  std::vector<std::string> out;
  for (const auto& key : keys) {
    out.push_back(key.compare(0, prefix.size(), prefix) == 0 ? key : std::string(prefix) + key);
  }
  return out;
}

// -- HTTP client ---------------------------------------------------------------

struct Reply {
  int status = 0;
  json body;

  bool ok() const { return status >= 200 && status < 300; }
  std::string error_code() const {
    if (status == 0) return "transport";
    if (body.is_object() && body.contains("error")) return body["error"].get<std::string>();
    return "http_" + std::to_string(status);
  }
};

class Api {
 public:
  explicit Api(const std::string& base_url) : client_(base_url) {
    client_.set_read_timeout(120, 0);
    client_.set_keep_alive(true);
    client_.set_tcp_nodelay(true);
  }

  Reply call(const std::string& method, const std::string& path, const json& body = nullptr,
             const std::string& token = {}) {
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    httplib::Result res;
    const auto payload = body.is_null() ? std::string() : body.dump();
    if (method == "GET") res = client_.Get(path, headers);
    else if (method == "POST") res = client_.Post(path, headers, payload, "application/json");
    else if (method == "PUT") res = client_.Put(path, headers, payload, "application/json");
    else res = client_.Delete(path, headers);
    Reply reply;
    if (!res) return reply;
    reply.status = res->status;
    reply.body = json::parse(res->body, nullptr, false);
    if (reply.body.is_discarded()) reply.body = res->body;
    return reply;
  }

  // Sends a message over the event stream; `body` receives the done event's payload.
  Reply stream_message(const std::string& path, const json& body, const std::string& token) {
    httplib::Request req;
    req.method = "POST";
    req.path = path + "?stream=1";
    req.set_header("Content-Type", "application/json");
    req.set_header("Accept", "text/event-stream");
    req.set_header("Authorization", "Bearer " + token);
    req.body = body.dump();

    Reply reply;
    std::string raw;
    std::string deltas;
    bool event_stream = false;
    SseParser parser;
    req.response_handler = [&](const httplib::Response& res) {
      reply.status = res.status;
      event_stream = res.get_header_value("Content-Type").rfind("text/event-stream", 0) == 0;
      return true;
    };
    req.content_receiver = [&](const char* data, std::size_t length, std::uint64_t, std::uint64_t) {
      if (!event_stream) {
        raw.append(data, length);
        return true;
      }
      for (const auto& event : parser.feed(std::string_view(data, length))) {
        auto payload = json::parse(event.data, nullptr, false);
        if (event.event == "delta") deltas += payload.value("text", "");
        else if (event.event == "done") reply.body = payload;
        else if (event.event == "error") {
          reply.status = 500;
          reply.body = payload;
        }
      }
      return true;
    };
    httplib::Response res;
    httplib::Error error = httplib::Error::Success;
    if (!client_.send(req, res, error)) return Reply{};
    if (!event_stream) {
      reply.body = json::parse(raw, nullptr, false);
      return reply;
    }
    if (reply.ok() && reply.body.is_object()) {
      const auto& agent = reply.body["agent_message"];
      if (agent.value("status", "") == "complete" && agent.value("text", "") != deltas) {
        reply.status = 0;
        reply.body = {{"error", "stream_mismatch"}};
      }
    }
    return reply;
  }

 private:
  httplib::Client client_;
};

struct ParticipantOutcome {
  bool registered = false;
  std::vector<std::string> rejections;
};

ParticipantOutcome run_participant(Api& api, const SimOptions& options, const json& study, int index) {
  const auto& script = options.script;
  std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ParticipantOutcome outcome;
  const std::string base = "/api/e/" + options.slug;
  auto form_of = [&](const char* phase) -> std::optional<FormDefinition> {
    const auto& f = study["forms"][phase];
    if (f.is_null()) return std::nullopt;
    return f.get<FormDefinition>();
  };
  auto answers_for = [&](const char* phase, const PhaseAnswers& policy) -> json {
    auto form = form_of(phase);
    if (!form) return nullptr;
    return synthesize_answers(*form, policy, rng);
  };

  json registration = {{"username", username_for(script, options.seed, index)}};
  if (study["demographics"].value("collect_age", true)) registration["age"] = script.age;
  if (study["demographics"].value("collect_gender", true)) registration["gender"] = script.gender;
  if (auto answers = answers_for("registration", script.registration); !answers.is_null()) {
    registration["answers"] = answers;
  }
  auto reply = api.call("POST", base + "/register", registration);
  if (!reply.ok()) {
    outcome.rejections.push_back(reply.error_code());
    return outcome;
  }
  outcome.registered = true;
  const auto token = reply.body["token"].get<std::string>();

  for (int c = 0; c < script.conversations; ++c) {
    json start = json::object();
    if (auto answers = answers_for("before_conversation", script.before); !answers.is_null()) start["answers"] = answers;
    reply = api.call("POST", base + "/conversations", start, token);
    if (!reply.ok()) {
      outcome.rejections.push_back(reply.error_code());
      break;
    }
    const auto session = reply.body["session_id"].get<std::string>();

    std::vector<std::string> texts = script.messages;
    if (script.generator) {
      texts.clear();
      std::uniform_int_distribution<int> words(script.generator->min_words, script.generator->max_words);
      std::uniform_int_distribution<std::size_t> pick(0, kVocabulary.size() - 1);
      for (int m = 0; m < script.generator->count; ++m) {
        std::string text;
        for (int w = words(rng); w > 0; --w) {
          if (!text.empty()) text += ' ';
          text += kVocabulary[pick(rng)];
        }
        texts.push_back(text);
      }
    }

    for (const auto& text : texts) {
      const auto path = base + "/conversations/" + session + "/messages";
      reply = script.stream ? api.stream_message(path, {{"text", text}}, token)
                            : api.call("POST", path, {{"text", text}}, token);
      if (!reply.ok()) {
        outcome.rejections.push_back(reply.error_code());
        break;
      }
      const auto message_id = reply.body["agent_message"]["id"].get<std::string>();
      int value = 0;
      if (script.annotation == AnnotationPolicy::kAlwaysLike) value = 1;
      else if (script.annotation == AnnotationPolicy::kRandom && unit(rng) < script.annotation_p) {
        value = unit(rng) < 0.5 ? 1 : -1;
      }
      if (value != 0) {
        auto annotated = api.call("PUT", base + "/messages/" + message_id + "/annotation", {{"value", value}}, token);
        if (!annotated.ok()) outcome.rejections.push_back(annotated.error_code());
      }
      if (reply.body.value("force_finish", false)) break;
    }

    json finish = json::object();
    if (auto answers = answers_for("after_conversation", script.after); !answers.is_null()) finish["answers"] = answers;
    reply = api.call("POST", base + "/conversations/" + session + "/finish", finish, token);
    if (!reply.ok()) outcome.rejections.push_back(reply.error_code());
  }
  return outcome;
}

ExportTable table_from_csv(const std::string& name, const std::string& text) {
  ExportTable table;
  table.name = name;
  auto rows = csv::parse(text);
  if (rows.empty()) return table;
  table.columns = rows.front();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    json row = json::object();
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      const auto& cell = c < rows[r].size() ? rows[r][c] : std::string();
      row[table.columns[c]] = cell.empty() ? json(nullptr) : json(cell);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

// -- scripts ---------------------------------------------------------------------

ParticipantScript script_from_json(const json& j) {
  ParticipantScript s;
  s.username_pattern = j.value("username_pattern", s.username_pattern);
  if (j.contains("messages")) s.messages = j.at("messages").get<std::vector<std::string>>();
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    MessageGenerator gen;
    gen.count = g.value("count", gen.count);
    gen.min_words = g.value("min_words", gen.min_words);
    gen.max_words = g.value("max_words", gen.max_words);
    s.generator = gen;
  }
  if (j.contains("annotation")) {
    const auto& a = j.at("annotation");
    if (a.is_object() && a.contains("random")) {
      s.annotation = AnnotationPolicy::kRandom;
      s.annotation_p = a.at("random").get<double>();
    } else if (a == "never") {
      s.annotation = AnnotationPolicy::kNever;
    } else if (a == "always_like") {
      s.annotation = AnnotationPolicy::kAlwaysLike;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "annotation must be never, always_like or {\"random\": p}");
    }
  }
  s.conversations = j.value("conversations", s.conversations);
  s.stream = j.value("stream", s.stream);
  s.age = j.value("age", s.age);
  s.gender = j.value("gender", s.gender);
  if (j.contains("answers")) {
    const auto& a = j.at("answers");
    if (a.contains("registration")) s.registration = phase_from_json(a.at("registration"));
    if (a.contains("before")) s.before = phase_from_json(a.at("before"));
    if (a.contains("after")) s.after = phase_from_json(a.at("after"));
  }
  if (auto violations = validate_script(s); !violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid participant script", violations);
  }
  return s;
}

json script_to_json(const ParticipantScript& s) {
  json out = {{"username_pattern", s.username_pattern},
              {"conversations", s.conversations},
              {"stream", s.stream},
              {"age", s.age},
              {"gender", s.gender},
              {"answers",
               {{"registration", phase_to_json(s.registration)},
                {"before", phase_to_json(s.before)},
                {"after", phase_to_json(s.after)}}}};
  if (s.generator) {
    out["generator"] = {{"count", s.generator->count},
                        {"min_words", s.generator->min_words},
                        {"max_words", s.generator->max_words}};
  } else {
    out["messages"] = s.messages;
  }
  switch (s.annotation) {
    case AnnotationPolicy::kNever: out["annotation"] = "never"; break;
    case AnnotationPolicy::kAlwaysLike: out["annotation"] = "always_like"; break;
    case AnnotationPolicy::kRandom: out["annotation"] = {{"random", s.annotation_p}}; break;
  }
  return out;
}

Violations validate_script(const ParticipantScript& s) {
  Violations out;
  const int count = s.generator ? s.generator->count : static_cast<int>(s.messages.size());
  if (count < 1) out.push_back({"messages", "a script sends at least one message"});
  if (s.generator && (s.generator->min_words < 1 || s.generator->max_words < s.generator->min_words)) {
    out.push_back({"generator", "need 1 <= min_words <= max_words"});
  }
  if (s.annotation_p < 0 || s.annotation_p > 1) out.push_back({"annotation", "probability outside [0,1]"});
  if (s.conversations < 1) out.push_back({"conversations", "at least 1"});
  if (s.username_pattern.find("{i}") == std::string::npos) {
    out.push_back({"username_pattern", "must contain {i}"});
  }
  return out;
}

std::string username_for(const ParticipantScript& script, std::uint64_t seed, int index) {
  return replace_all(replace_all(script.username_pattern, "{i}", std::to_string(index)), "{seed}",
                     std::to_string(seed));
}

Answers synthesize_answers(const FormDefinition& form, const PhaseAnswers& policy, std::mt19937_64& rng) {
  Answers out;
  for (const auto& q : form.questions) {
    if (policy.policy == AnswerPolicy::kFixed) {
      if (auto it = policy.values.find(q.key); it != policy.values.end()) {
        out[q.key] = it->second;
        continue;
      }
    }
    const bool low = policy.policy == AnswerPolicy::kMin;
    const bool high = policy.policy == AnswerPolicy::kMax;
    switch (q.kind) {
      case QuestionKind::kShortText:
      case QuestionKind::kLongText: {
        std::uniform_int_distribution<std::size_t> pick(0, kVocabulary.size() - 1);
        out[q.key] = low ? kVocabulary.front() : high ? kVocabulary.back() : kVocabulary[pick(rng)];
        break;
      }
      case QuestionKind::kNumber: {
        std::uniform_int_distribution<int> pick(0, 100);
        out[q.key] = low ? 0 : high ? 100 : pick(rng);
        break;
      }
      case QuestionKind::kSingleChoice: {
        std::uniform_int_distribution<std::size_t> pick(0, q.options.size() - 1);
        const auto& option = low ? q.options.front() : high ? q.options.back() : q.options[pick(rng)];
        out[q.key] = option.value;
        break;
      }
      case QuestionKind::kScale: {
        const auto scale = q.scale.value_or(ScaleSpec{});
        std::uniform_int_distribution<int> pick(scale.min, scale.max);
        out[q.key] = low ? scale.min : high ? scale.max : pick(rng);
        break;
      }
    }
  }
  return out;
}

// -- reports ---------------------------------------------------------------------

json to_json(const SimReport& r) {
  json conditions = json::object();
  for (const auto& [label, c] : r.conditions) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    conditions[label] = {{"participants", c.participants},
                         {"sessions", c.sessions},
                         {"user_messages", c.user_messages},
                         {"agent_messages", c.agent_messages},
                         {"mean_words_per_user_message", c.mean_words_per_user_message},
                         {"pre_mean", opt(c.pre_mean)},
                         {"post_mean", opt(c.post_mean)},
                         {"mood_delta", opt(c.mood_delta)},
                         {"likes", c.likes},
                         {"dislikes", c.dislikes}};
  }
  return {{"attempted", r.attempted},   {"registered", r.registered},     {"rejections", r.rejections},
          {"conditions", conditions},   {"open_sessions", r.open_sessions}, {"reconciled", r.reconciled},
          {"discrepancies", r.discrepancies}};
}

SimReport report_from_export(const ExportBundle& bundle) {
  SimReport report;
  std::vector<FormDefinition> forms;
  if (bundle.metadata.contains("forms")) forms = bundle.metadata["forms"].get<std::vector<FormDefinition>>();
  json linked = bundle.metadata.contains("experiment") ? bundle.metadata["experiment"].value("forms", json::object())
                                                       : json::object();
  std::vector<std::string> pre_keys;
  std::vector<std::string> post_keys;
  if (auto form = linked_form(forms, linked.value("before_conversation", json()))) {
    pre_keys = prefixed(scale_keys(*form), kPrePrefix);
  }
  if (auto form = linked_form(forms, linked.value("after_conversation", json()))) {
    post_keys = prefixed(scale_keys(*form), kPostPrefix);
  }

  for (const auto& row : bundle.participants.rows) report.conditions[text_of(row["condition"])].participants += 1;
  for (const auto& row : bundle.sessions.rows) {
    report.conditions[text_of(row["condition"])].sessions += 1;
    if (text_of(row["status"]) == "open") ++report.open_sessions;
  }
  std::map<std::string, long> words;
  for (const auto& row : bundle.messages.rows) {
    const auto label = text_of(row["condition"]);
    auto& c = report.conditions[label];
    if (text_of(row["author"]) == "user") {
      c.user_messages += 1;
      words[label] += word_count(text_of(row["text"]));
    } else {
      c.agent_messages += 1;
    }
    if (auto v = numeric(row["annotation"])) {
      if (*v == 1) c.likes += 1;
      else if (*v == -1) c.dislikes += 1;
    }
  }
  struct Acc {
    double sum = 0;
    int n = 0;
    void add(double v) { sum += v, ++n; }
    std::optional<double> mean() const { return n ? std::optional<double>(sum / n) : std::nullopt; }
  };
  std::map<std::string, Acc> pre, post, delta;
  for (const auto& row : bundle.responses.rows) {
    const auto label = text_of(row["condition"]);
    const auto p = mean_of(row, pre_keys);
    const auto q = mean_of(row, post_keys);
    if (p) pre[label].add(*p);
    if (q) post[label].add(*q);
    if (p && q) delta[label].add(*q - *p);
  }
  for (auto& [label, c] : report.conditions) {
    c.mean_words_per_user_message = c.user_messages ? static_cast<double>(words[label]) / c.user_messages : 0.0;
    c.pre_mean = pre[label].mean();
    c.post_mean = post[label].mean();
    c.mood_delta = delta[label].mean();
  }
  return report;
}

std::vector<std::string> reconcile_with_csv(const SimReport& report, const std::map<std::string, std::string>& files) {
  std::map<std::string, std::vector<std::vector<std::string>>> tables;
  for (const auto& [name, text] : files) {
    for (const char* table : {"participants", "sessions", "messages", "responses"}) {
      const std::string suffix = std::string("_") + table + ".csv";
      if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        tables[table] = csv::parse(text);
      }
    }
  }
  auto column = [&](const std::string& table, const std::string& name) -> int {
    const auto& rows = tables[table];
    if (rows.empty()) return -1;
    auto it = std::find(rows.front().begin(), rows.front().end(), name);
    return it == rows.front().end() ? -1 : static_cast<int>(it - rows.front().begin());
  };

  std::map<std::string, ConditionStats> recount;
  int open_sessions = 0;
  const int pc = column("participants", "condition");
  const int sc = column("sessions", "condition");
  const int ss = column("sessions", "status");
  const int mc = column("messages", "condition");
  const int ma = column("messages", "author");
  const int mn = column("messages", "annotation");
  std::vector<std::string> out;
  if (pc < 0 || sc < 0 || ss < 0 || mc < 0 || ma < 0 || mn < 0) {
    out.push_back("CSV export is missing tables or columns");
    return out;
  }
  for (std::size_t r = 1; r < tables["participants"].size(); ++r) recount[tables["participants"][r][pc]].participants += 1;
  for (std::size_t r = 1; r < tables["sessions"].size(); ++r) {
    const auto& row = tables["sessions"][r];
    recount[row[sc]].sessions += 1;
    if (row[ss] == "open") ++open_sessions;
  }
  for (std::size_t r = 1; r < tables["messages"].size(); ++r) {
    const auto& row = tables["messages"][r];
    auto& c = recount[row[mc]];
    (row[ma] == "user" ? c.user_messages : c.agent_messages) += 1;
    if (row[mn] == "1") c.likes += 1;
    if (row[mn] == "-1") c.dislikes += 1;
  }

  if (open_sessions != report.open_sessions) out.push_back("open sessions differ from the CSV recount");
  std::set<std::string> labels;
  for (const auto& [label, c] : recount) labels.insert(label);
  for (const auto& [label, c] : report.conditions) labels.insert(label);
  for (const auto& label : labels) {
    const auto a = report.conditions.contains(label) ? report.conditions.at(label) : ConditionStats{};
    const auto& b = recount[label];
    auto check = [&](const char* what, int x, int y) {
      if (x != y) {
        out.push_back("condition " + label + ": " + what + " " + std::to_string(x) + " vs CSV " + std::to_string(y));
      }
    };
    check("participants", a.participants, b.participants);
    check("sessions", a.sessions, b.sessions);
    check("user_messages", a.user_messages, b.user_messages);
    check("agent_messages", a.agent_messages, b.agent_messages);
    check("likes", a.likes, b.likes);
    check("dislikes", a.dislikes, b.dislikes);
  }
  return out;
}

std::map<std::string, double> report_mood_delta(const ExportBundle& bundle, const std::vector<std::string>& pre_keys,
                                                const std::vector<std::string>& post_keys) {
  const auto pre = prefixed(pre_keys, kPrePrefix);
  const auto post = prefixed(post_keys, kPostPrefix);
  for (const auto& key : pre) {
    if (std::find(bundle.responses.columns.begin(), bundle.responses.columns.end(), key) ==
        bundle.responses.columns.end()) {
      throw Error(ErrorCode::kInvalidArgument, "export has no column '" + key + "'");
    }
  }
  for (const auto& key : post) {
    if (std::find(bundle.responses.columns.begin(), bundle.responses.columns.end(), key) ==
        bundle.responses.columns.end()) {
      throw Error(ErrorCode::kInvalidArgument, "export has no column '" + key + "'");
    }
  }
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& row : bundle.responses.rows) {
    const auto p = mean_of(row, pre);
    const auto q = mean_of(row, post);
    if (!p || !q) continue;
    auto& [sum, n] = acc[text_of(row["condition"])];
    sum += *q - *p;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [label, a] : acc) out[label] = a.first / a.second;
  return out;
}

ExportBundle load_export_dir(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> csvs;
  std::optional<std::filesystem::path> document;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() == ".json") document = entry.path();
    for (const char* table : {"participants", "sessions", "messages", "responses"}) {
      const std::string suffix = std::string("_") + table + ".csv";
      if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        csvs[table] = entry.path();
      }
    }
  }
  if (document) return bundle_from_json(json::parse(read_file(*document)));
  if (csvs.size() != 4) throw Error(ErrorCode::kNotFound, "no export found in " + dir.string());
  ExportBundle bundle;
  bundle.metadata = json::object();
  bundle.participants = table_from_csv("participants", read_file(csvs["participants"]));
  bundle.sessions = table_from_csv("sessions", read_file(csvs["sessions"]));
  bundle.messages = table_from_csv("messages", read_file(csvs["messages"]));
  bundle.responses = table_from_csv("responses", read_file(csvs["responses"]));
  return bundle;
}

// -- driver ----------------------------------------------------------------------

SimReport run_simulation(const SimOptions& options) {
  if (auto violations = validate_script(options.script); !violations.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid participant script", violations);
  }
  auto id = experiment_id_from_slug(options.slug);
  if (!id) throw Error(ErrorCode::kInvalidArgument, "malformed slug '" + options.slug + "'");

  Api setup(options.base_url);
  auto study = setup.call("GET", "/api/e/" + options.slug);
  if (!study.ok()) {
    throw Error(ErrorCode::kInvalidArgument, "study unavailable: " + study.error_code());
  }

  std::atomic<int> next{0};
  std::mutex mutex;
  SimReport report;
  report.attempted = options.participants;
  std::vector<ParticipantOutcome> outcomes(static_cast<std::size_t>(std::max(0, options.participants)));
  const int workers = std::clamp(options.concurrency, 1, std::max(1, options.participants));
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      Api api(options.base_url);
      for (int i = next++; i < options.participants; i = next++) {
        outcomes[static_cast<std::size_t>(i)] = run_participant(api, options, study.body, i);
      }
    });
  }
  for (auto& t : threads) t.join();

  // Downloads happen after every client has finished.
  auto login = setup.call("POST", "/api/admin/login",
                          {{"username", options.admin_username}, {"password", options.admin_password}});
  if (!login.ok()) throw Error(ErrorCode::kUnauthorized, "admin login failed: " + login.error_code());
  const auto token = login.body["token"].get<std::string>();
  const auto path = "/api/admin/experiments/" + id->str() + "/export";
  auto document = setup.call("GET", path + "?format=json", nullptr, token);
  auto csv_files = setup.call("GET", path + "?format=csv", nullptr, token);
  if (!document.ok() || !csv_files.ok()) throw Error(ErrorCode::kIo, "export download failed");

  const auto bundle = bundle_from_json(document.body);
  auto stats = report_from_export(bundle);
  report.conditions = std::move(stats.conditions);
  report.open_sessions = stats.open_sessions;
  for (const auto& outcome : outcomes) {
    if (outcome.registered) ++report.registered;
    for (const auto& code : outcome.rejections) report.rejections[code] += 1;
  }

  const auto files = csv_files.body.get<std::map<std::string, std::string>>();
  report.discrepancies = reconcile_with_csv(report, files);
  int exported = 0;
  for (const auto& [label, c] : report.conditions) exported += c.participants;
  if (exported < report.registered) report.discrepancies.push_back("export holds fewer participants than registered");
  report.reconciled = report.discrepancies.empty();

  if (!options.export_dir.empty()) {
    std::filesystem::create_directories(options.export_dir);
    auto write = [&](const std::string& name, const std::string& content) {
      std::ofstream out(options.export_dir / name, std::ios::binary);
      out << content;
    };
    write(id->str() + ".json", to_json_document(bundle));
    for (const auto& [name, content] : files) write(name, content);
  }
  return report;
}

}  // namespace chatlab::sim
