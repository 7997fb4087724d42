#pragma once

#include <memory>
#include <string>

#include "divgen/gateway.hpp"

namespace divgen {

/// Chat-completions / embeddings HTTP client. Speaks the de-facto wire
/// format: POST {endpoint}/v1/chat/completions and /v1/embeddings with a
/// bearer token read from the environment variable named in the config.
/// 5xx, 429 and transport failures surface as retryable ProviderErrors;
/// other non-200 statuses are terminal. Concurrent callers are admitted up
/// to max_concurrent_requests.
class HttpProvider : public Provider {
 public:
  explicit HttpProvider(ProviderConfig config);
  ~HttpProvider() override;

  std::string chat(const ChatRequest& request) override;
  std::vector<Eigen::VectorXd> embed(const std::vector<std::string>& texts,
                                     const std::string& model) override;
  std::uint64_t last_call_tokens() const override { return last_tokens_; }

 private:
  struct Impl;
  std::string post_json(const std::string& path, const std::string& body);

  ProviderConfig config_;
  std::unique_ptr<Impl> impl_;
  std::uint64_t last_tokens_ = 0;
};

}  // namespace divgen
