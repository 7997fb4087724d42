#include <doctest.h>

#include <atomic>
#include <thread>

// Eigen must be parsed before httplib: resolv.h (pulled in by httplib)
// defines _res, which collides with Eigen internals.
#include "divgen/gateway.hpp"
#include "divgen/http_provider.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace divgen;
using nlohmann::json;

namespace {

/// In-process chat-completions server for exercising the wire format.
struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> chat_hits{0};
  std::atomic<int> fail_next{0};  // respond 500 this many times

  LocalServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                               httplib::Response& res) {
      ++chat_hits;
      if (fail_next > 0) {
        --fail_next;
        res.status = 500;
        return;
      }
      const json body = json::parse(req.body);
      const std::string user = body.at("messages").at(1).at("content");
      const json reply = {
          {"choices",
           json::array({{{"message",
                          {{"role", "assistant"},
                           {"content", "echo model=" + body.at("model").get<std::string>() +
                                           " temp=" + std::to_string(
                                               body.at("temperature").get<double>()) +
                                           "\n1. " + user}}}}})},
          {"usage", {{"total_tokens", 42}}}};
      res.set_content(reply.dump(), "application/json");
    });
    server.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      json data = json::array();
      int index = 0;
      for (const auto& text : body.at("input")) {
        const double h = static_cast<double>(
            1 + std::hash<std::string>{}(text.get<std::string>()) % 97);
        data.push_back({{"index", index++}, {"embedding", {h, 1.0, 2.0}}});
      }
      res.set_content(json{{"data", data}, {"usage", {{"total_tokens", 7}}}}.dump(),
                      "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~LocalServer() {
    server.stop();
    thread.join();
  }

  ProviderConfig config() const {
    ProviderConfig c;
    c.kind = "http";
    c.endpoint = "http://127.0.0.1:" + std::to_string(port);
    c.model = "test-model";
    c.api_key_env = "";
    c.max_retries = 3;
    c.timeout_ms = 5000;
    return c;
  }
};

}  // namespace

TEST_CASE("http provider speaks the chat-completions wire format") {
  LocalServer server;
  HttpProvider provider(server.config());

  ChatRequest req;
  req.system = "sys";
  req.user = "USER-TEXT";
  req.temperature = 0.5;
  req.model = "test-model";
  const std::string content = provider.chat(req);
  CHECK(content.find("model=test-model") != std::string::npos);
  CHECK(content.find("temp=0.5") != std::string::npos);
  CHECK(content.find("1. USER-TEXT") != std::string::npos);
  CHECK(provider.last_call_tokens() == 42);
}

TEST_CASE("http provider embeddings preserve order by index") {
  LocalServer server;
  HttpProvider provider(server.config());
  const auto vectors = provider.embed({"alpha", "beta"}, "embed-model");
  REQUIRE(vectors.size() == 2);
  CHECK(vectors[0].size() == 3);
  const auto again = provider.embed({"alpha", "beta"}, "embed-model");
  CHECK(vectors[0] == again[0]);
  CHECK(provider.last_call_tokens() == 7);
}

TEST_CASE("5xx responses are retryable and consumed by the gateway") {
  LocalServer server;
  auto provider = std::make_shared<HttpProvider>(server.config());
  Gateway gateway(provider, server.config());

  server.fail_next = 2;
  const GenerationBatch batch = gateway.generate_batch("sys", "payload", 1);
  CHECK(batch.instances == std::vector<std::string>{"payload"});
  CHECK(server.chat_hits == 3);            // two failures + one success
  CHECK(gateway.ledger().generate == 1);   // still one logical call
}

TEST_CASE("transport failure to a dead endpoint is a retryable ProviderError") {
  ProviderConfig config;
  config.kind = "http";
  config.endpoint = "http://127.0.0.1:1";  // nothing listens here
  config.api_key_env = "";
  config.timeout_ms = 300;
  HttpProvider provider(config);
  ChatRequest req;
  req.model = "m";
  try {
    provider.chat(req);
    FAIL("expected ProviderError");
  } catch (const ProviderError& err) {
    CHECK(err.retryable());
  }
}

TEST_CASE("gateway end-to-end over http matches the mock-driven flow") {
  LocalServer server;
  auto provider = std::make_shared<HttpProvider>(server.config());
  Gateway gateway(provider, server.config());
  const auto embeddings = gateway.embed({"a", "b", "c"});
  CHECK(embeddings.size() == 3);
  CHECK(gateway.ledger().embed == 1);
  CHECK(gateway.ledger().total_tokens > 0);
}
