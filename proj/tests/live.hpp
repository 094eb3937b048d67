#pragma once

// A service plus HTTP server on a free loopback port.

#include <string>

#include <httplib.h>

#include "chatlab/http_server.hpp"
#include "support.hpp"

namespace testing {

struct Live {
  explicit Live(std::uint64_t seed = 42, int threads = 32) : rig(seed), server(rig.service, options(threads)) {
    port = server.start();
  }

  static chatlab::ServerOptions options(int threads) {
    chatlab::ServerOptions o;
    o.host = "127.0.0.1";
    o.port = 0;
    o.threads = threads;
    return o;
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port); }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_tcp_nodelay(true);
    c.set_read_timeout(30, 0);
    return c;
  }

  Rig rig;
  chatlab::HttpServer server;
  int port = 0;
};

inline httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

}  // namespace testing
