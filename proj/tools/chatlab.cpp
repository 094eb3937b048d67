// chatlab: serve the platform, drive simulated participants, summarise exports.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "chatlab/config.hpp"
#include "chatlab/sim.hpp"

namespace {

chatlab::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

void print_error(const chatlab::Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  for (const auto& v : e.violations()) std::cerr << "  " << v.field << ": " << v.rule << "\n";
}

int serve() {
  auto config = chatlab::config_from_env();
  std::shared_ptr<chatlab::DocumentStore> backend = std::make_shared<chatlab::NullDocumentStore>();
  if (!config.storage.empty()) backend = std::make_shared<chatlab::JournalDocumentStore>(config.storage);
  chatlab::Store store(backend, config.service.seed);
  auto provider = chatlab::make_provider(config);
  chatlab::StudyService service(store, *provider, config.service);
  chatlab::HttpServer server(service, config.server);
  const int port = server.bind();
  std::cerr << "chatlab listening on " << config.server.host << ":" << port << " (provider " << config.provider
            << ", storage " << (config.storage.empty() ? "memory" : config.storage) << ")\n";
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chatlab: LLM chat-agent experiment platform"};
  app.require_subcommand(1);

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service (configured through CHATLAB_* variables)");

  chatlab::sim::SimOptions sim;
  std::string script_path;
  std::string out_path;
  std::string export_dir;
  sim.base_url = "http://127.0.0.1:8080";
  auto* simulate = app.add_subcommand("simulate", "drive scripted participants against a running instance");
  simulate->add_option("--slug", sim.slug, "experiment slug (the part after /e/)")->required();
  simulate->add_option("--n", sim.participants, "number of participants")->required()->check(CLI::NonNegativeNumber);
  simulate->add_option("--script", script_path, "participant script JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "seed for usernames, messages and answers")->capture_default_str();
  simulate->add_option("--concurrency", sim.concurrency, "concurrent participants")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  simulate->add_option("--out", out_path, "write the report JSON here (default stdout)");
  simulate->add_option("--base-url", sim.base_url, "service address")->capture_default_str();
  simulate->add_option("--admin-user", sim.admin_username, "admin username [CHATLAB_ADMIN_USER]");
  simulate->add_option("--admin-password", sim.admin_password, "admin password [CHATLAB_ADMIN_PASSWORD]");
  simulate->add_option("--export-dir", export_dir, "also save the downloaded export files here");

  std::string report_dir;
  std::vector<std::string> pre_keys;
  std::vector<std::string> post_keys;
  auto* report = app.add_subcommand("report", "descriptive report and mood deltas from an export directory");
  report->add_option("--export", report_dir, "directory holding {id}.json or the {id}_*.csv files")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--pre-keys", pre_keys, "Pre_ keys (prefix optional)")->delimiter(',');
  report->add_option("--post-keys", post_keys, "Post_ keys (prefix optional)")->delimiter(',');

  std::string password;
  int iterations = 200000;
  auto* hash = app.add_subcommand("hash-password", "print a value for CHATLAB_ADMIN_PASSWORD_HASH");
  hash->add_option("password", password, "password to hash")->required();
  hash->add_option("--iterations", iterations, "PBKDF2 iterations")->capture_default_str()->check(CLI::Range(1000, 10000000));

  std::string templates_dir;
  auto* templates = app.add_subcommand("templates", "write the built-in questionnaire templates as JSON");
  templates->add_option("--out", templates_dir, "directory to write into")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve();

    if (*simulate) {
      std::ifstream in(script_path);
      sim.script = chatlab::sim::script_from_json(nlohmann::json::parse(in));
      if (sim.admin_username.empty()) sim.admin_username = env_or("CHATLAB_ADMIN_USER", "admin");
      if (sim.admin_password.empty()) sim.admin_password = env_or("CHATLAB_ADMIN_PASSWORD", "");
      sim.export_dir = export_dir;
      const auto result = chatlab::sim::run_simulation(sim);
      const auto text = chatlab::sim::to_json(result).dump(2) + "\n";
      if (out_path.empty()) {
        std::cout << text;
      } else {
        std::ofstream(out_path) << text;
      }
      return result.reconciled ? 0 : 2;
    }

    if (*report) {
      const auto bundle = chatlab::sim::load_export_dir(report_dir);
      auto json = chatlab::sim::to_json(chatlab::sim::report_from_export(bundle));
      if (!pre_keys.empty() || !post_keys.empty()) {
        json["mood_delta"] = chatlab::sim::report_mood_delta(bundle, pre_keys, post_keys);
      }
      std::cout << json.dump(2) << "\n";
      return 0;
    }

    if (*hash) {
      std::cout << chatlab::hash_password(password, iterations) << "\n";
      return 0;
    }

    if (*templates) {
      std::filesystem::create_directories(templates_dir);
      for (const auto& form : chatlab::builtin_form_templates()) {
        const auto path = std::filesystem::path(templates_dir) / (form.id.str() + ".json");
        std::ofstream(path) << nlohmann::json(form).dump(2) << "\n";
        std::cout << path.string() << "\n";
      }
      return 0;
    }
  } catch (const chatlab::Error& e) {
    print_error(e);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
