#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "chatlab/agent_runtime.hpp"
#include "chatlab/http_provider.hpp"
#include "chatlab/mock_provider.hpp"
#include "chatlab/sse.hpp"
#include "support.hpp"

using namespace chatlab;
using nlohmann::json;

namespace {

MessageRecord message(Author author, std::string text) {
  MessageRecord m;
  m.author = author;
  m.text = std::move(text);
  return m;
}

// A stand-in chat-completion server speaking the OpenAI wire format.
struct FakeCompletionServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> calls{0};
  std::atomic<int> fail_first{0};
  int fail_status = 500;
  json last_body;
  std::string last_auth;
  std::mutex mutex;
  bool drop_done = false;

  FakeCompletionServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      {
        std::lock_guard lock(mutex);
        last_body = json::parse(req.body);
        last_auth = req.get_header_value("Authorization");
      }
      if (fail_first > 0) {
        --fail_first;
        res.status = fail_status;
        res.set_content(R"({"error":{"message":"nope"}})", "application/json");
        return;
      }
      const auto body = json::parse(req.body);
      const std::string reply = "You said: " + body["messages"].back()["content"].get<std::string>();
      if (!body.value("stream", false)) {
        res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}},
                                           {"finish_reason", "stop"}}}},
                             {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 4}}}}
                            .dump(),
                        "application/json");
        return;
      }
      std::string stream;
      for (std::size_t i = 0; i < reply.size(); i += 5) {
        json chunk = {{"choices", {{{"delta", {{"content", reply.substr(i, 5)}}}, {"finish_reason", nullptr}}}}};
        stream += format_sse("", chunk.dump());
      }
      stream += format_sse("", json{{"choices", {{{"delta", json::object()}, {"finish_reason", "stop"}}}}}.dump());
      if (!drop_done) stream += "data: [DONE]\n\n";
      res.set_content(stream, "text/event-stream");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeCompletionServer() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST_CASE("first message is the scripted opener without a provider call") {
  const auto agent = testing::make_agent("a");
  const auto m = first_message(agent);
  CHECK(m.author == Author::kAgent);
  CHECK(m.text == agent.first_chat_sentence);
}

TEST_CASE("user text wrapping") {
  auto agent = testing::make_agent("a");
  CHECK(wrap_user_text(agent, "hi") == "hi");
  agent.before_user_sentence_prompt = "B";
  CHECK(wrap_user_text(agent, "hi") == "B\nhi");
  agent.after_user_sentence_prompt = "A";
  CHECK(wrap_user_text(agent, "hi") == "B\nhi\nA");
  agent.before_user_sentence_prompt.clear();
  CHECK(wrap_user_text(agent, "hi") == "hi\nA");
}

TEST_CASE("request assembly") {
  const auto agent = testing::make_agent("a", "[b]", "[a]");
  const std::vector<MessageRecord> history = {message(Author::kAgent, "Hello"), message(Author::kUser, "one"),
                                              message(Author::kAgent, "reply one")};
  const auto request = assemble_request(agent, history, "two");
  REQUIRE(request.turns.size() == 5);
  CHECK(request.turns[0] == Turn{TurnRole::kSystem, agent.system_starter_prompt});
  CHECK(request.turns[1] == Turn{TurnRole::kAssistant, "Hello"});
  CHECK(request.turns[2] == Turn{TurnRole::kUser, "[b]\none\n[a]"});
  CHECK(request.turns[3] == Turn{TurnRole::kAssistant, "reply one"});
  CHECK(request.turns[4] == Turn{TurnRole::kUser, "[b]\ntwo\n[a]"});
  CHECK(request.model_id == agent.model_id);
  CHECK(request.sampling == agent.sampling);
}

TEST_CASE("wire format") {
  auto agent = testing::make_agent("a");
  agent.sampling.temperature = 0.3;
  agent.sampling.stop_sequences = {"END"};
  const auto wire = to_wire(assemble_request(agent, {message(Author::kAgent, "Hi")}, "hey"));
  CHECK(wire["model"] == "mock-model");
  CHECK(wire["messages"][0]["role"] == "system");
  CHECK(wire["messages"][1]["role"] == "assistant");
  CHECK(wire["messages"][2] == json{{"role", "user"}, {"content", "hey"}});
  CHECK(wire["temperature"] == 0.3);
  CHECK(wire["stop"] == json::array({"END"}));
  for (const char* field : {"max_tokens", "top_p", "frequency_penalty", "presence_penalty", "stream"}) {
    CHECK(wire.contains(field));
  }
  agent.sampling.stop_sequences.clear();
  CHECK_FALSE(to_wire(assemble_request(agent, {}, "x")).contains("stop"));
}

TEST_CASE("retries transient failures with exponential backoff") {
  MockProvider provider;
  std::vector<long> waits;
  RetryPolicy policy;
  policy.sleep = [&](std::chrono::milliseconds d) { waits.push_back(d.count()); };
  const auto request = assemble_request(testing::make_agent("a"), {}, "hello");

  provider.fail_next(2);
  auto reply = generate_reply(request, provider, policy);
  CHECK(reply.finish_reason == FinishReason::kStop);
  CHECK(reply.content == "hello");
  CHECK(reply.attempts == 3);
  CHECK(waits == std::vector<long>{1000, 2000});

  provider.fail_next(3);
  reply = generate_reply(request, provider, policy);
  CHECK(reply.finish_reason == FinishReason::kError);
  CHECK(reply.attempts == 3);

  provider.fail_next(1, ProviderError::Kind::kAuthentication);
  const int before = provider.call_count();
  reply = generate_reply(request, provider, policy);
  CHECK(reply.finish_reason == FinishReason::kError);
  CHECK(provider.call_count() - before == 1);
}

TEST_CASE("streaming yields ordered deltas, one terminal chunk, and the same content") {
  MockProvider provider;
  const auto request = assemble_request(testing::make_agent("a"), {}, "the quick brown fox");
  std::vector<StreamChunk> chunks;
  const auto reply = stream_reply(request, provider, [&](const StreamChunk& c) { chunks.push_back(c); },
                                  RetryPolicy::immediate());
  REQUIRE(chunks.size() == 5);
  CHECK(chunks.back().terminal);
  CHECK(chunks.back().delta.empty());
  std::string joined;
  for (const auto& c : chunks) joined += c.delta;
  CHECK(joined == reply.content);
  CHECK(reply.content == generate_reply(request, provider, RetryPolicy::immediate()).content);
}

TEST_CASE("an interrupted stream keeps what was delivered") {
  MockProvider provider;
  provider.interrupt_next_stream_after(2);
  const auto request = assemble_request(testing::make_agent("a"), {}, "one two three four");
  std::string joined;
  int terminals = 0;
  const auto reply = stream_reply(
      request, provider,
      [&](const StreamChunk& c) {
        joined += c.delta;
        terminals += c.terminal;
      },
      RetryPolicy::immediate());
  CHECK(reply.finish_reason == FinishReason::kError);
  CHECK(reply.content == "one two ");
  CHECK(joined == reply.content);
  CHECK(terminals == 1);
}

TEST_CASE("a stream that fails before any delta is retried") {
  MockProvider provider;
  provider.fail_next(1);
  const auto request = assemble_request(testing::make_agent("a"), {}, "again");
  std::string joined;
  const auto reply =
      stream_reply(request, provider, [&](const StreamChunk& c) { joined += c.delta; }, RetryPolicy::immediate());
  CHECK(reply.finish_reason == FinishReason::kStop);
  CHECK(joined == "again");
  CHECK(reply.attempts == 2);
}

TEST_CASE("SSE parser handles split frames, CRLF and multi-line data") {
  SseParser parser;
  auto events = parser.feed("event: delta\r\ndata: hel");
  CHECK(events.empty());
  events = parser.feed("lo\r\n\r\n: comment\n\ndata: a\ndata: b\n\n");
  REQUIRE(events.size() == 2);
  CHECK(events[0].event == "delta");
  CHECK(events[0].data == "hello");
  CHECK(events[1].data == "a\nb");
  CHECK(format_sse("done", "x\ny") == "event: done\ndata: x\ndata: y\n\n");
}

TEST_CASE("HTTP provider against a chat-completion endpoint") {
  FakeCompletionServer fake;
  HttpChatProvider::Options options;
  options.base_url = "http://127.0.0.1:" + std::to_string(fake.port) + "/v1";
  options.api_key = "sk-test";
  HttpChatProvider provider(options);
  const auto request = assemble_request(testing::make_agent("a"), {}, "ping");

  SUBCASE("non-streaming") {
    const auto reply = provider.complete(request);
    CHECK(reply.content == "You said: ping");
    CHECK(reply.finish_reason == FinishReason::kStop);
    REQUIRE(reply.usage.has_value());
    CHECK(reply.usage->prompt_tokens == 11);
    CHECK(fake.last_auth == "Bearer sk-test");
    CHECK(fake.last_body["model"] == "mock-model");
    CHECK(fake.last_body["stream"] == false);
  }
  SUBCASE("streaming matches non-streaming") {
    std::string joined;
    const auto reply = provider.stream(request, [&](std::string_view d) { joined += d; });
    CHECK(joined == "You said: ping");
    CHECK(reply.content == joined);
    CHECK(fake.last_body["stream"] == true);
  }
  SUBCASE("server errors are retried") {
    fake.fail_first = 2;
    const auto reply = generate_reply(request, provider, RetryPolicy::immediate());
    CHECK(reply.content == "You said: ping");
    CHECK(fake.calls == 3);
  }
  SUBCASE("authentication failures are not retried") {
    fake.fail_first = 5;
    fake.fail_status = 401;
    const auto reply = generate_reply(request, provider, RetryPolicy::immediate());
    CHECK(reply.finish_reason == FinishReason::kError);
    CHECK(fake.calls == 1);
  }
  SUBCASE("a stream without the done marker is an error") {
    fake.drop_done = true;
    CHECK_THROWS_AS(provider.stream(request, [](std::string_view) {}), ProviderError);
  }
  SUBCASE("connection refused is transient") {
    HttpChatProvider::Options dead;
    dead.base_url = "http://127.0.0.1:1";
    dead.timeout = std::chrono::seconds(2);
    HttpChatProvider nowhere(dead);
    try {
      nowhere.complete(request);
      FAIL("expected an error");
    } catch (const ProviderError& e) {
      CHECK(e.retryable());
    }
  }
}
