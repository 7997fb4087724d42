#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "divgen/kernel.hpp"
#include "divgen/metrics.hpp"

namespace divgen {

class ProviderError : public std::runtime_error {
 public:
  ProviderError(const std::string& what, bool retryable = false)
      : std::runtime_error(what), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

struct ProviderConfig {
  std::string kind = "mock";  // "mock" or "http"
  std::string endpoint = "https://api.openai.com";
  std::string model = "gpt-4o-mini";
  std::string embedding_model = "text-embedding-3-small";
  double temperature = 1.0;
  int max_retries = 3;
  int timeout_ms = 30000;
  std::string api_key_env = "OPENAI_API_KEY";
  int max_concurrent_requests = 4;

  void validate() const;
};

struct ChatRequest {
  std::string system;
  std::string user;
  double temperature = 1.0;
  std::string model;
};

/// Transport seam: one chat completion or one embedding request.
/// Implementations: MockProvider (offline, deterministic), HttpProvider
/// (chat-completions wire format), plus scripted doubles in tests.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string chat(const ChatRequest& request) = 0;
  virtual std::vector<Eigen::VectorXd> embed(const std::vector<std::string>& texts,
                                             const std::string& model) = 0;
  virtual std::uint64_t last_call_tokens() const { return 0; }

  // Snapshot hooks so a resumed run replays identically.
  virtual nlohmann::json state() const;
  virtual void restore_state(const nlohmann::json& state);
};

struct GenerationBatch {
  std::vector<std::string> instances;
  std::string raw_response;
  std::vector<std::string> warnings;
};

/// Call counters, updated atomically; snapshot() gives the value struct
/// reports embed.
class CallLedger {
 public:
  enum class Category { generate, gradient_get, gradient_apply, judge, embed, probe };

  void add(Category cat, std::uint64_t n = 1);
  void add_tokens(std::uint64_t n) { total_tokens_ += n; }
  LedgerSnapshot snapshot() const;
  void restore(const LedgerSnapshot& snap);

 private:
  std::atomic<std::uint64_t> generate_{0}, gradient_get_{0}, gradient_apply_{0}, judge_{0},
      embed_{0}, probe_{0}, total_tokens_{0};
};

/// Batch protocol preamble: instructs numbered-line output of exactly
/// `batch_size` items for the given task. Shared by the engine, the
/// baselines and tests that replay their call sequences.
std::string batch_system_prompt(const std::string& task_prompt, int batch_size);

/// Variant for subtopic listing (the hierarchical baseline's first call).
std::string subtopic_system_prompt(const std::string& task_prompt, int count);

/// Splits a model response into instances. Accepts "1. text" / "1) text"
/// numbered lines; falls back to blank-line-separated blocks.
std::vector<std::string> parse_instance_list(const std::string& response);

/// All outermost <START>...<END> spans, trimmed. Nested tags stay inside
/// their outer span.
std::vector<std::string> parse_tagged_spans(const std::string& response);

/// First integer found inside any tagged span, e.g. "<START>22<END>" -> 22.
std::optional<int> parse_tagged_score(const std::string& response);

/// Provider facade used by the engine, baselines and judge: retries with
/// exponential backoff, keeps the call ledger, parses the batch and tag
/// protocols, and embeds in batched requests.
class Gateway {
 public:
  Gateway(std::shared_ptr<Provider> provider, ProviderConfig config);

  /// One chat call expected to yield `batch_size` instances as numbered
  /// lines. Under-delivery is tolerated and recorded as a warning; zero
  /// parseable instances is an error carrying the raw response.
  GenerationBatch generate_batch(const std::string& system_prompt, const std::string& user_prompt,
                                 int batch_size, std::optional<double> temperature = std::nullopt,
                                 CallLedger::Category category = CallLedger::Category::generate);

  /// One embedding per text, unit-normalized, constant dimension per run.
  std::vector<Embedding> embed(const std::vector<std::string>& texts);

  /// One critique call; returns up to num_feedbacks tagged gradient strings.
  std::vector<std::string> get_gradients(const std::string& task_prompt,
                                         const std::string& explorer_prompt,
                                         const std::vector<std::string>& rejected,
                                         const std::vector<std::string>& anchors,
                                         int num_feedbacks);

  /// One rewrite call; returns tagged successor prompts.
  std::vector<std::string> apply_gradients(const std::string& task_prompt,
                                           const std::string& explorer_prompt,
                                           const std::vector<std::string>& gradients);

  /// One judge call against a specific panel model. Returns the raw
  /// response; callers parse the tagged score.
  std::string judge(const std::string& filled_rubric, const std::string& model_id);

  LedgerSnapshot ledger() const { return ledger_.snapshot(); }
  void restore_ledger(const LedgerSnapshot& snap) { ledger_.restore(snap); }
  Provider& provider() { return *provider_; }
  const ProviderConfig& config() const { return config_; }

  int embed_batch_size = 64;

 private:
  std::string chat_with_retry(const ChatRequest& request);

  std::shared_ptr<Provider> provider_;
  ProviderConfig config_;
  CallLedger ledger_;
  int embedding_dim_ = 0;  // pinned by the first embed call
};

/// Judge sweep: every item scored by every panel model, consensus = mean
/// across judges per item, dataset mean +- stddev over item consensi.
/// Unparseable responses are retried once, then the item is skipped.
QualitySummary judge_quality(std::span<const DataInstance> items, const std::string& rubric_template,
                             int max_score, const std::vector<std::string>& panel, Gateway& gateway);

}  // namespace divgen
