#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "divgen/dpp.hpp"
#include "divgen/gateway.hpp"
#include "divgen/kernel.hpp"
#include "divgen/metrics.hpp"

namespace divgen {

/// A prompt variant with lineage: the unit of search over the data manifold.
struct Explorer {
  std::string id;
  std::string prompt;
  std::optional<std::string> parent_id;
  int depth = 0;  // 0 for the seed explorer
  Embedding embedding;
};

/// Acceptance threshold over iterations: tau(i) = tau0 * exp(-i / T) in
/// decay mode, constant tau0 otherwise. tau0 itself comes from the probe
/// procedure, clipped into [tau_min, tau_max].
struct ThresholdSchedule {
  enum class Mode { constant, exponential_decay };

  double tau0 = 0.0;
  int max_iterations = 200;
  Mode mode = Mode::exponential_decay;

  double at(int iteration) const;
};

struct ScheduleConfig {
  double alpha = 0.5;
  double tau_min = 1e-6;
  double tau_max = 0.9;
  std::string mode = "exponential_decay";  // or "constant"
  std::optional<double> tau0_override;     // skip the probe procedure entirely

  void validate() const;
};

struct EngineConfig {
  std::string task_prompt;
  int target_size = 500;      // l
  int explorers = 3;          // b
  int anchor_capacity = 10;   // k
  int max_iterations = 200;   // T
  int batch_size = 10;        // |B|
  int gradients_per_call = 3; // m
  KernelConfig kernel;
  ScheduleConfig schedule;
  StopwordSet stopwords = default_stopwords();
  std::uint64_t seed = 42;
  bool refinement = true;                   // textual-gradient successors on/off
  std::string successor_selection = "dpp";  // "dpp" or "random"
  int snapshot_every = 0;                   // iterations between snapshots; 0 = off
  std::string snapshot_path;

  void validate() const;
};

enum class RunStatus { completed, budget_exhausted, failed };

struct TraceEvent {
  std::string kind;  // probe | generate | accept | reject | prune | beam_select
  int iteration = 0;
  std::string explorer_id;
  double gamma = 0.0;
  double tau = 0.0;
  std::string detail;
};

struct RunResult {
  std::vector<DataInstance> dataset;
  DiversityReport report;
  LedgerSnapshot ledger;
  RunStatus status = RunStatus::completed;
  double tau0 = 0.0;
  int iterations_used = 0;
  KernelConfig resolved_kernel;
  std::vector<double> rejection_trace;  // |R|/|B| per explore, execution order
  std::vector<TraceEvent> trace;        // populated when tracing is enabled
};

/// Per-explore rejection fractions in execution order, for plotting.
/// Throws when the run was executed without tracing.
std::vector<double> rejection_rate_trace(const RunResult& result);

/// The iterative generation loop: a beam of explorers generates batches,
/// instances are accepted by marginal volume gain against the anchor set,
/// the anchor set is pruned back to capacity by k-DPP sampling, and
/// explorers with rejections spawn refined successors that the next
/// iteration's beam is sampled from.
class Engine {
 public:
  Engine(EngineConfig config, Gateway& gateway);

  /// Probe procedure for tau0: generate 100 instances from the task
  /// prompt, k-DPP-select 10, tau0 = clip(alpha * det(kernel), bounds).
  /// Probe instances never enter the dataset; their calls land in the
  /// ledger's probe counter.
  double init_threshold();

  RunResult run();

  /// Serializes everything needed to continue at an iteration boundary.
  nlohmann::json snapshot() const;
  void restore(const nlohmann::json& snapshot);

  void enable_tracing(bool on) { tracing_ = on; }
  const EngineConfig& config() const { return config_; }

 private:
  struct ExploreOutcome {
    std::vector<DataInstance> accepted;
    std::vector<std::string> rejected_texts;
    std::vector<Explorer> successors;
    AnchorState augmented;
    int batch_size = 0;
  };

  ExploreOutcome explore(const Explorer& explorer, double tau, int max_accept);
  void prune_anchor(int iteration);
  std::vector<Explorer> select_beam(std::vector<Explorer> pool, int iteration);
  void resolve_bandwidth(std::span<const Embedding> embeddings);
  std::string system_prompt() const;
  std::string next_instance_id();
  std::string next_explorer_id();
  void record(TraceEvent event);
  void maybe_snapshot();

  EngineConfig config_;
  Gateway& gateway_;
  std::mt19937_64 rng_;

  std::vector<DataInstance> dataset_;
  AnchorState anchor_;
  std::vector<Explorer> beam_;
  ThresholdSchedule schedule_;
  int iteration_ = 0;
  std::uint64_t instance_counter_ = 0;
  std::uint64_t explorer_counter_ = 0;
  bool bandwidth_resolved_ = false;
  bool tau_initialized_ = false;

  bool tracing_ = false;
  std::vector<TraceEvent> trace_;
  std::vector<double> rejection_trace_;
};

}  // namespace divgen
