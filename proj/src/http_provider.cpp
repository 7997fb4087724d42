#include "divgen/http_provider.hpp"

#include <cstdlib>
#include <semaphore>

// httplib must come after the Eigen-bearing project headers: resolv.h
// (pulled in by httplib) defines _res, which collides with Eigen internals.
#include <httplib.h>
#include <json.hpp>

namespace divgen {

using nlohmann::json;

struct HttpProvider::Impl {
  httplib::Client client;
  std::counting_semaphore<256> admission;

  Impl(const std::string& endpoint, int timeout_ms, int max_concurrent)
      : client(endpoint), admission(max_concurrent) {
    client.set_connection_timeout(0, timeout_ms * 1000LL);
    client.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
    client.set_write_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
  }
};

HttpProvider::HttpProvider(ProviderConfig config) : config_(std::move(config)) {
  config_.validate();
  impl_ = std::make_unique<Impl>(config_.endpoint, config_.timeout_ms,
                                 config_.max_concurrent_requests);
}

HttpProvider::~HttpProvider() = default;

std::string HttpProvider::post_json(const std::string& path, const std::string& body) {
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  impl_->admission.acquire();
  httplib::Result res = impl_->client.Post(path, headers, body, "application/json");
  impl_->admission.release();

  if (!res)
    throw ProviderError("transport failure: " + httplib::to_string(res.error()),
                        /*retryable=*/true);
  if (res->status == 429 || res->status >= 500)
    throw ProviderError("provider returned status " + std::to_string(res->status),
                        /*retryable=*/true);
  if (res->status != 200)
    throw ProviderError("provider returned status " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 400));
  return res->body;
}

std::string HttpProvider::chat(const ChatRequest& request) {
  const json body = {{"model", request.model.empty() ? config_.model : request.model},
                     {"temperature", request.temperature},
                     {"messages", json::array({{{"role", "system"}, {"content", request.system}},
                                               {{"role", "user"}, {"content", request.user}}})}};
  const std::string raw = post_json("/v1/chat/completions", body.dump());

  try {
    const json parsed = json::parse(raw);
    last_tokens_ = parsed.contains("usage")
                       ? parsed.at("usage").value("total_tokens", std::uint64_t{0})
                       : 0;
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& err) {
    throw ProviderError(std::string("malformed chat response: ") + err.what());
  }
}

std::vector<Eigen::VectorXd> HttpProvider::embed(const std::vector<std::string>& texts,
                                                 const std::string& model) {
  const json body = {{"model", model}, {"input", texts}};
  const std::string raw = post_json("/v1/embeddings", body.dump());

  try {
    const json parsed = json::parse(raw);
    last_tokens_ = parsed.contains("usage")
                       ? parsed.at("usage").value("total_tokens", std::uint64_t{0})
                       : 0;
    std::vector<Eigen::VectorXd> out(texts.size());
    for (const auto& entry : parsed.at("data")) {
      const std::size_t index = entry.at("index").get<std::size_t>();
      const auto& values = entry.at("embedding");
      Eigen::VectorXd v(values.size());
      for (std::size_t i = 0; i < values.size(); ++i)
        v(static_cast<int>(i)) = values[i].get<double>();
      if (index >= out.size()) throw ProviderError("embedding index out of range");
      out[index] = std::move(v);
    }
    for (const auto& v : out)
      if (v.size() == 0) throw ProviderError("embedding response missing entries");
    return out;
  } catch (const json::exception& err) {
    throw ProviderError(std::string("malformed embeddings response: ") + err.what());
  }
}

}  // namespace divgen
