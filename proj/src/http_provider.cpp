#include "chatlab/http_provider.hpp"

#include <httplib.h>

#include "chatlab/sse.hpp"

namespace chatlab {

namespace {

ProviderError status_error(int status, const std::string& body) {
  const std::string what = "provider returned HTTP " + std::to_string(status) + ": " + body.substr(0, 200);
  if (status == 401 || status == 403) return ProviderError(ProviderError::Kind::kAuthentication, what);
  if (status == 408 || status == 429 || status >= 500) return ProviderError(ProviderError::Kind::kTransient, what);
  return ProviderError(ProviderError::Kind::kRejected, what);
}

FinishReason parse_finish(const nlohmann::json& value) {
  if (value.is_string() && value.get<std::string>() == "length") return FinishReason::kLength;
  return FinishReason::kStop;
}

httplib::Client make_client(const std::string& origin, std::chrono::seconds timeout) {
  httplib::Client client(origin);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  return client;
}

}  // namespace

HttpChatProvider::HttpChatProvider(Options options) : options_(std::move(options)) {
  const auto scheme_end = options_.base_url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = options_.base_url.find('/', host_start);
  origin_ = options_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : options_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

ProviderReply HttpChatProvider::parse_completion(const std::string& body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(ProviderError::Kind::kMalformed, std::string("unparseable completion: ") + e.what());
  }
  try {
    const auto& choice = doc.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    ProviderReply reply;
    reply.content = content.is_null() ? "" : content.get<std::string>();
    reply.finish_reason = parse_finish(choice.value("finish_reason", nlohmann::json()));
    if (auto usage = doc.find("usage"); usage != doc.end() && usage->is_object()) {
      reply.usage = TokenUsage{usage->value("prompt_tokens", 0), usage->value("completion_tokens", 0)};
    }
    return reply;
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(ProviderError::Kind::kMalformed, std::string("completion missing fields: ") + e.what());
  }
}

ProviderReply HttpChatProvider::complete(const ProviderRequest& request) {
  auto client = make_client(origin_, options_.timeout);
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);
  auto body = to_wire(request);
  body["stream"] = false;
  auto result = client.Post(path_prefix_ + options_.path, headers, body.dump(), "application/json");
  if (!result) {
    throw ProviderError(ProviderError::Kind::kTransient, "provider unreachable: " + httplib::to_string(result.error()));
  }
  if (result->status != 200) throw status_error(result->status, result->body);
  return parse_completion(result->body);
}

ProviderReply HttpChatProvider::stream(const ProviderRequest& request, const DeltaSink& on_delta) {
  auto client = make_client(origin_, options_.timeout);

  httplib::Request req;
  req.method = "POST";
  req.path = path_prefix_ + options_.path;
  req.set_header("Content-Type", "application/json");
  req.set_header("Accept", "text/event-stream");
  if (!options_.api_key.empty()) req.set_header("Authorization", "Bearer " + options_.api_key);
  auto body = to_wire(request);
  body["stream"] = true;
  req.body = body.dump();

  int status = 0;
  std::string error_body;
  SseParser parser;
  ProviderReply reply;
  bool done = false;
  std::optional<ProviderError> failure;

  req.response_handler = [&](const httplib::Response& res) {
    status = res.status;
    return true;
  };
  req.content_receiver = [&](const char* data, std::size_t length, std::uint64_t, std::uint64_t) {
    if (status != 200) {
      error_body.append(data, length);
      return true;
    }
    for (const auto& event : parser.feed(std::string_view(data, length))) {
      if (event.data == "[DONE]") {
        done = true;
        continue;
      }
      nlohmann::json chunk;
      try {
        chunk = nlohmann::json::parse(event.data);
        const auto& choice = chunk.at("choices").at(0);
        if (auto delta = choice.find("delta"); delta != choice.end()) {
          if (auto content = delta->find("content"); content != delta->end() && content->is_string()) {
            const auto& text = content->get_ref<const std::string&>();
            reply.content += text;
            on_delta(text);
          }
        }
        if (auto finish = choice.find("finish_reason"); finish != choice.end() && !finish->is_null()) {
          reply.finish_reason = parse_finish(*finish);
        }
      } catch (const nlohmann::json::exception& e) {
        failure = ProviderError(ProviderError::Kind::kMalformed, std::string("bad stream event: ") + e.what());
        return false;
      }
    }
    return true;
  };

  httplib::Response res;
  httplib::Error error = httplib::Error::Success;
  const bool sent = client.send(req, res, error);
  if (failure) throw *failure;
  if (status != 0 && status != 200) throw status_error(status, error_body);
  if (!sent) {
    throw ProviderError(ProviderError::Kind::kTransient, "stream failed: " + httplib::to_string(error));
  }
  if (!done) throw ProviderError(ProviderError::Kind::kTransient, "stream ended without done marker");
  return reply;
}

}  // namespace chatlab
