#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "chatlab/service.hpp"

namespace httplib {
class Server;
}

namespace chatlab {

struct ServerOptions {
  std::string host = "0.0.0.0";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path static_dir;  // served under / when set
  int threads = 32;
};

/// JSON API over a StudyService:
///   /api/admin/*     researcher endpoints (bearer admin token)
///   /api/e/{slug}/*  participant endpoints (bearer participant token)
///   /e/{slug}        experiment landing page
class HttpServer {
 public:
  HttpServer(StudyService& service, ServerOptions options);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket and returns the bound port.
  int bind();
  /// Serves until stop(). bind() is called first if needed.
  void listen();
  /// bind() + listen() on a background thread.
  int start();
  void stop();

  int port() const { return port_; }

 private:
  void install_routes();

  StudyService& service_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace chatlab
