#include "chatlab/http_server.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>

#include "chatlab/sse.hpp"
#include "json_util.hpp"

namespace chatlab {

using nlohmann::json;

namespace {

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

json error_body(ErrorCode code, const std::string& message, const Violations& violations = {}) {
  json out = {{"error", to_string(code)}, {"message", message}};
  if (!violations.empty()) {
    json list = json::array();
    for (const auto& v : violations) list.push_back({{"field", v.field}, {"rule", v.rule}});
    out["violations"] = std::move(list);
  }
  return out;
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message, const Violations& violations = {}) {
  send_json(res, error_body(code, message, violations), http_status(code));
}

Handler guarded(Handler handler) {
  return [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what(), e.violations());
    } catch (const json::exception& e) {
      send_error(res, ErrorCode::kInvalidArgument, std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorCode::kIo, e.what());
    }
  };
}

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto parsed = json::parse(req.body, nullptr, false);
  if (parsed.is_discarded()) throw Error(ErrorCode::kInvalidArgument, "request body is not valid JSON");
  if (!parsed.is_object()) throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  return parsed;
}

std::string bearer(const httplib::Request& req) {
  const auto header = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (header.size() > prefix.size() && header.compare(0, prefix.size(), prefix) == 0) {
    return header.substr(prefix.size());
  }
  return {};
}

const std::string& param(const httplib::Request& req, const char* name) { return req.path_params.at(name); }

std::optional<Answers> answers_of(const json& body) {
  auto it = body.find("answers");
  if (it == body.end() || it->is_null()) return std::nullopt;
  if (!it->is_object()) throw Error(ErrorCode::kInvalidArgument, "answers must be an object");
  return it->get<Answers>();
}

json token_json(const TokenIssue& issue) {
  return {{"token", issue.token}, {"expires_at", format_timestamp(issue.expires_at)}};
}

ExperimentStatus status_from(const json& body) {
  return body.at("status").get<ExperimentStatus>();
}

// Participant-facing view of a study. Carries no agent ids or condition labels.
json study_view(StudyService& service, const ExperimentConfig& config) {
  auto form = [&](const std::optional<FormId>& id) -> json {
    if (!id) return nullptr;
    auto found = service.store().form(*id);
    return found ? json(*found) : json(nullptr);
  };
  json limits = {{"max_conversations_per_participant",
                  detail::optional_to_json(config.boundaries.max_conversations_per_participant)},
                 {"max_messages_per_interaction", detail::optional_to_json(config.boundaries.max_messages_per_interaction)}};
  return {{"slug", experiment_slug(config.id)},
          {"title", config.title},
          {"description", config.description},
          {"main_page", config.main_page},
          {"features", config.features},
          {"demographics", config.demographics},
          {"forms",
           {{"registration", form(config.forms.registration)},
            {"before_conversation", form(config.forms.before_conversation)},
            {"after_conversation", form(config.forms.after_conversation)}}},
          {"limits", std::move(limits)}};
}

json session_view(const ConversationSession& session) {
  return {{"session_id", session.id},
          {"started_at", format_timestamp(session.started_at)},
          {"finished_at", detail::optional_timestamp_to_json(session.finished_at)},
          {"status", session.is_open() ? "open" : "finished"},
          {"messages", session.messages}};
}

json turn_view(const TurnResult& turn) {
  return {{"user_message", turn.user_message},
          {"agent_message", turn.agent_message},
          {"force_finish", turn.force_finish}};
}

json experiment_view(StudyService& service, const ExperimentConfig& config) {
  return {{"experiment", config},
          {"summary", service.summary(config.id)},
          {"address", service.experiment_address(config.id)},
          {"warnings", experiment_warnings(config)}};
}

bool wants_stream(const httplib::Request& req) {
  if (req.has_param("stream")) {
    const auto v = req.get_param_value("stream");
    return v == "1" || v == "true";
  }
  return req.get_header_value("Accept").find("text/event-stream") != std::string::npos;
}

std::string html_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string page(std::string_view title, std::string_view body) {
  std::ostringstream out;
  out << "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>" << html_escape(title)
      << "</title></head>\n<body>\n" << body << "\n</body></html>\n";
  return out.str();
}

std::optional<std::string> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

HttpServer::HttpServer(StudyService& service, ServerOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  const int threads = std::max(1, options_.threads);
  server_->set_tcp_nodelay(true);
  server_->set_keep_alive_max_count(1000);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<size_t>(threads)); };
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  if (port_ >= 0) return port_;
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else {
    port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ < 0) throw Error(ErrorCode::kIo, "cannot bind " + options_.host + ":" + std::to_string(options_.port));
  return port_;
}

void HttpServer::listen() {
  bind();
  server_->listen_after_bind();
}

int HttpServer::start() {
  const int port = bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void HttpServer::install_routes() {
  auto& svr = *server_;
  StudyService& svc = service_;

  auto admin = [&svc](Handler handler) {
    return guarded([&svc, handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
      svc.require_admin(bearer(req));
      handler(req, res);
    });
  };

  // -- admin ----------------------------------------------------------------

  svr.Post("/api/admin/login", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = body_of(req);
             send_json(res, token_json(svc.admin_login(body.value("username", ""), body.value("password", ""),
                                                       req.remote_addr)));
           }));

  svr.Get("/api/admin/agents", admin([&svc](const httplib::Request&, httplib::Response& res) {
            send_json(res, svc.store().agents());
          }));
  svr.Post("/api/admin/agents", admin([&svc](const httplib::Request& req, httplib::Response& res) {
             send_json(res, svc.create_agent(body_of(req).get<AgentConfig>()), 201);
           }));
  svr.Get("/api/admin/agents/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            auto agent = svc.store().agent(AgentId(param(req, "id")));
            if (!agent) throw Error(ErrorCode::kNotFound, "unknown agent");
            send_json(res, *agent);
          }));
  svr.Put("/api/admin/agents/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, svc.update_agent(AgentId(param(req, "id")), body_of(req).get<AgentConfig>()));
          }));
  svr.Delete("/api/admin/agents/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
               svc.delete_agent(AgentId(param(req, "id")));
               res.status = 204;
             }));

  svr.Get("/api/admin/forms", admin([&svc](const httplib::Request&, httplib::Response& res) {
            send_json(res, svc.store().forms());
          }));
  svr.Post("/api/admin/forms", admin([&svc](const httplib::Request& req, httplib::Response& res) {
             send_json(res, svc.create_form(body_of(req).get<FormDefinition>()), 201);
           }));
  svr.Get("/api/admin/forms/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            auto form = svc.store().form(FormId(param(req, "id")));
            if (!form) throw Error(ErrorCode::kNotFound, "unknown form");
            send_json(res, *form);
          }));
  svr.Put("/api/admin/forms/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, svc.update_form(FormId(param(req, "id")), body_of(req).get<FormDefinition>()));
          }));
  svr.Delete("/api/admin/forms/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
               svc.delete_form(FormId(param(req, "id")));
               res.status = 204;
             }));
  svr.Get("/api/admin/form-templates", admin([](const httplib::Request&, httplib::Response& res) {
            send_json(res, builtin_form_templates());
          }));

  svr.Get("/api/admin/experiments", admin([&svc](const httplib::Request&, httplib::Response& res) {
            json list = json::array();
            for (const auto& config : svc.store().experiments()) list.push_back(experiment_view(svc, config));
            send_json(res, list);
          }));
  svr.Post("/api/admin/experiments", admin([&svc](const httplib::Request& req, httplib::Response& res) {
             send_json(res, experiment_view(svc, svc.create_experiment(body_of(req).get<ExperimentConfig>())), 201);
           }));
  svr.Get("/api/admin/experiments/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, experiment_view(svc, svc.experiment(ExperimentId(param(req, "id")))));
          }));
  svr.Put("/api/admin/experiments/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            const ExperimentId id(param(req, "id"));
            send_json(res, experiment_view(svc, svc.update_experiment(id, body_of(req).get<ExperimentConfig>())));
          }));
  svr.Delete("/api/admin/experiments/:id", admin([&svc](const httplib::Request& req, httplib::Response& res) {
               svc.delete_experiment(ExperimentId(param(req, "id")));
               res.status = 204;
             }));
  svr.Put("/api/admin/experiments/:id/status", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            const ExperimentId id(param(req, "id"));
            send_json(res, experiment_view(svc, svc.set_status(id, status_from(body_of(req)))));
          }));
  svr.Put("/api/admin/experiments/:id/main-page", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            const ExperimentId id(param(req, "id"));
            send_json(res, experiment_view(svc, svc.update_main_page(id, body_of(req).get<MainPage>())));
          }));
  svr.Get("/api/admin/experiments/:id/summary", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, svc.summary(ExperimentId(param(req, "id"))));
          }));
  svr.Get("/api/admin/experiments/:id/address", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            const ExperimentId id(param(req, "id"));
            send_json(res, {{"slug", experiment_slug(id)},
                            {"path", svc.experiment_address(id)},
                            {"url", svc.experiment_url(id)}});
          }));
  svr.Get("/api/admin/experiments/:id/export", admin([&svc](const httplib::Request& req, httplib::Response& res) {
            const ExperimentId id(param(req, "id"));
            const auto format = req.has_param("format") ? req.get_param_value("format") : "json";
            auto bundle = svc.export_experiment(id);
            if (format == "json") {
              res.set_header("Content-Disposition", "attachment; filename=\"" + id.str() + ".json\"");
              res.set_content(to_json_document(bundle), "application/json");
            } else if (format == "csv") {
              const auto files = export_files(bundle, ExportFormat::kCsv);
              if (req.has_param("table")) {
                const auto name = id.str() + "_" + req.get_param_value("table") + ".csv";
                auto it = files.find(name);
                if (it == files.end()) throw Error(ErrorCode::kNotFound, "unknown export table");
                res.set_header("Content-Disposition", "attachment; filename=\"" + name + "\"");
                res.set_content(it->second, "text/csv; charset=utf-8");
              } else {
                send_json(res, files);
              }
            } else {
              throw Error(ErrorCode::kInvalidArgument, "format must be json or csv");
            }
          }));
  svr.Post("/api/admin/import", admin([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto id = svc.import_experiment(body_of(req));
             send_json(res, experiment_view(svc, svc.experiment(id)), 201);
           }));

  // -- participant -------------------------------------------------------------

  svr.Get("/api/e/:slug", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, study_view(svc, svc.open_study(param(req, "slug"))));
          }));
  svr.Post("/api/e/:slug/register", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = body_of(req);
             RegistrationRequest request;
             request.username = body.value("username", "");
             request.age = detail::optional_from_json<int>(body, "age");
             request.gender = detail::optional_from_json<std::string>(body, "gender");
             request.answers = answers_of(body).value_or(Answers{});
             send_json(res, token_json(svc.register_participant(param(req, "slug"), request)), 201);
           }));
  svr.Post("/api/e/:slug/login", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = body_of(req);
             send_json(res, token_json(svc.login_returning(param(req, "slug"), body.value("username", ""))));
           }));
  svr.Get("/api/e/:slug/conversations", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            json list = json::array();
            for (const auto& s : svc.participant_sessions(param(req, "slug"), bearer(req))) list.push_back(session_view(s));
            send_json(res, list);
          }));
  svr.Post("/api/e/:slug/conversations", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto start = svc.start_conversation(param(req, "slug"), bearer(req), answers_of(body_of(req)));
             send_json(res, {{"session_id", start.session_id}, {"first_message", start.first_message}}, 201);
           }));
  svr.Get("/api/e/:slug/conversations/:sid", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, session_view(svc.participant_session(param(req, "slug"), bearer(req),
                                                                SessionId(param(req, "sid")))));
          }));
  svr.Post("/api/e/:slug/conversations/:sid/messages",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = body_of(req);
             auto turn = std::make_shared<PendingTurn>(
                 svc.begin_turn(param(req, "slug"), bearer(req), SessionId(param(req, "sid")), body.value("text", "")));
             if (!(wants_stream(req) && turn->streaming_enabled())) {
               send_json(res, turn_view(svc.complete_turn(*turn)));
               return;
             }
             res.set_header("Cache-Control", "no-cache");
             res.set_chunked_content_provider("text/event-stream", [&svc, turn](size_t, httplib::DataSink& sink) {
               auto write = [&sink](std::string_view event, const json& data) {
                 const auto frame = format_sse(event, data.dump());
                 sink.write(frame.data(), frame.size());  // a gone client does not stop the turn
               };
               write("user_message", turn->user_message());
               const ChunkSink on_chunk = [&](const StreamChunk& chunk) {
                 if (!chunk.delta.empty()) write("delta", {{"text", chunk.delta}});
               };
               try {
                 write("done", turn_view(svc.complete_turn(*turn, &on_chunk)));
               } catch (const Error& e) {
                 write("error", error_body(e.code(), e.what()));
               }
               sink.done();
               return true;
             });
           }));
  svr.Put("/api/e/:slug/messages/:mid/annotation", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const auto body = body_of(req);
            if (!body.contains("value") || !body["value"].is_number_integer()) {
              throw Error(ErrorCode::kInvalidArgument, "annotation must be 1 or -1", {{"value", "must be 1 or -1"}});
            }
            send_json(res, svc.annotate(param(req, "slug"), bearer(req), MessageId(param(req, "mid")),
                                        body["value"].get<int>()));
          }));
  svr.Post("/api/e/:slug/conversations/:sid/finish",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto result = svc.finish_conversation(param(req, "slug"), bearer(req), SessionId(param(req, "sid")),
                                                         answers_of(body_of(req)));
             send_json(res, {{"message", result.message}, {"survey_url", detail::optional_to_json(result.survey_url)}});
           }));

  // -- landing page --------------------------------------------------------------

  const auto static_dir = options_.static_dir;
  svr.Get("/e/:slug", [&svc, static_dir](const httplib::Request& req, httplib::Response& res) {
    const auto& slug = param(req, "slug");
    try {
      const auto config = svc.open_study(slug);
      if (!static_dir.empty()) {
        if (auto index = read_file(static_dir / "index.html")) {
          res.set_content(*index, "text/html; charset=utf-8");
          return;
        }
      }
      std::string body = "<h1>" + html_escape(config.main_page.title.empty() ? config.title : config.main_page.title) +
                         "</h1>\n<div>" + html_escape(config.main_page.body) + "</div>\n<p data-study=\"" +
                         html_escape(slug) + "\">Participate through the study client.</p>";
      res.set_content(page(config.title, body), "text/html; charset=utf-8");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kExperimentInactive) {
        res.set_content(page("Study closed", "<h1>Study closed</h1>\n<p>This study is not accepting participants.</p>"),
                        "text/html; charset=utf-8");
      } else {
        res.status = 404;
        res.set_content(page("Not found", "<h1>Study not found</h1>"), "text/html; charset=utf-8");
      }
    }
  });

  if (!options_.static_dir.empty()) svr.set_mount_point("/", options_.static_dir.string());
}

}  // namespace chatlab
