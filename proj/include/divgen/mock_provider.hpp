#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "divgen/gateway.hpp"

namespace divgen {

/// Parameters of the synthetic text world served by MockProvider.
/// The world is a set of themed topic clusters; unrefined prompts collapse
/// onto cluster 0 with the given concentration, mirroring the mode-collapse
/// behavior of post-trained models that the pipeline is built to counter.
struct MockWorldConfig {
  int clusters = 12;        // >= 2, <= 16 (size of the built-in theme table)
  int embedding_dim = 32;   // must be >= clusters
  double concentration = 0.6;  // in [0,1]; extra probability mass on cluster 0
  double noise = 0.12;         // per-text embedding spread inside a subcluster
  std::uint64_t seed = 1;

  void validate() const;
};

/// Fully offline, deterministic provider. Responses are synthesized from
/// fixed per-cluster word banks; embeddings place each text near its
/// cluster's center. A fixed (config, prompt, seed) triple reproduces the
/// same bytes on every run. Per-prompt call counters advance the stream so
/// repeated calls return fresh batches; the counters are part of state()
/// so snapshots resume identically.
class MockProvider : public Provider {
 public:
  explicit MockProvider(MockWorldConfig config);

  std::string chat(const ChatRequest& request) override;
  std::vector<Eigen::VectorXd> embed(const std::vector<std::string>& texts,
                                     const std::string& model) override;

  nlohmann::json state() const override;
  void restore_state(const nlohmann::json& state) override;

  const MockWorldConfig& config() const { return config_; }
  /// Cluster index whose marker word occurs in the text, or -1.
  int cluster_of(const std::string& text) const;
  /// Marker word of a cluster, for tests that inspect steering.
  std::string marker(int cluster) const;

 private:
  std::string respond_batch(const ChatRequest& request);
  std::string respond_subtopics(const ChatRequest& request);
  std::string respond_gradients(const ChatRequest& request);
  std::string respond_apply(const ChatRequest& request);
  std::string respond_judge(const ChatRequest& request);

  std::vector<double> cluster_weights(const std::string& prompt, double temperature) const;
  std::string phrase(int cluster, std::mt19937_64& rng) const;

  MockWorldConfig config_;
  mutable std::mutex mutex_;
  std::map<std::uint64_t, std::uint64_t> prompt_calls_;  // fnv(prompt) -> count
};

}  // namespace divgen
