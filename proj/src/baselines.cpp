#include "divgen/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "divgen/dpp.hpp"
#include "divgen/rng.hpp"

namespace divgen {

void BaselineSpec::validate() const {
  static const char* kinds[] = {"default",      "temp",         "diverse",
                                "history",      "hierarchical", "subset_select"};
  if (std::find(std::begin(kinds), std::end(kinds), kind) == std::end(kinds))
    throw std::invalid_argument("unknown baseline kind: " + kind);
  if (temperature < 0.0) throw std::invalid_argument("baseline.temperature must be >= 0");
  if (history_window < 1) throw std::invalid_argument("baseline.history_window must be >= 1");
  if (subtopics < 1) throw std::invalid_argument("baseline.subtopics must be >= 1");
  if (universe_multiplier < 1)
    throw std::invalid_argument("baseline.universe_multiplier must be >= 1");
}

namespace {

struct Collector {
  const EngineConfig& config;
  Gateway& gateway;
  const std::string kind;
  std::vector<DataInstance> items;
  KernelConfig kernel;
  bool bandwidth_resolved;
  std::uint64_t counter = 0;

  Collector(const EngineConfig& cfg, Gateway& gw, std::string k)
      : config(cfg), gateway(gw), kind(std::move(k)), kernel(cfg.kernel),
        bandwidth_resolved(cfg.kernel.rbf_bandwidth.has_value()) {}

  std::string batch_system(int n) const { return batch_system_prompt(config.task_prompt, n); }

  /// Embeds, tokenizes and appends a batch of texts (up to `limit` items).
  void ingest(const std::vector<std::string>& texts, int iteration, int limit) {
    if (texts.empty()) return;
    std::vector<Embedding> embeddings = gateway.embed(texts);
    if (!bandwidth_resolved) {
      if (!kernel.rbf_bandwidth)
        kernel.rbf_bandwidth = median_pairwise_distance(embeddings);
      bandwidth_resolved = true;
    }
    for (std::size_t i = 0; i < texts.size() && static_cast<int>(items.size()) < limit; ++i) {
      DataInstance d;
      d.id = "i" + std::to_string(counter++);
      d.text = texts[i];
      d.embedding = embeddings[i];
      d.tokens = tokenize(texts[i], config.stopwords);
      d.explorer_id = kind;
      d.iteration = iteration;
      items.push_back(std::move(d));
    }
  }

  RunResult finish() {
    RunResult result;
    result.status = static_cast<int>(items.size()) >= config.target_size
                        ? RunStatus::completed
                        : RunStatus::budget_exhausted;
    result.dataset = std::move(items);
    result.resolved_kernel = kernel;
    result.ledger = gateway.ledger();
    result.report = compute_report(result.dataset, kernel, result.ledger);
    return result;
  }
};

RunResult run_simple(const BaselineSpec& spec, const EngineConfig& config, Gateway& gateway) {
  Collector out(config, gateway, spec.kind);
  const int calls = (config.target_size + config.batch_size - 1) / config.batch_size;

  for (int call = 0; call < calls; ++call) {
    std::string user = config.task_prompt;
    std::optional<double> temperature;

    if (spec.kind == "temp") {
      temperature = spec.temperature;
    } else if (spec.kind == "diverse") {
      user += " " + spec.diverse_instruction;
    } else if (spec.kind == "history") {
      const int window =
          std::min<int>(spec.history_window, static_cast<int>(out.items.size()));
      if (window > 0) {
        user += "\n\nAvoid generating anything similar to these recent instances:\n";
        for (int i = static_cast<int>(out.items.size()) - window;
             i < static_cast<int>(out.items.size()); ++i)
          user += "- " + out.items[i].text + "\n";
      }
    }

    GenerationBatch batch =
        gateway.generate_batch(out.batch_system(config.batch_size), user, config.batch_size,
                               temperature);
    out.ingest(batch.instances, call, config.target_size);
  }
  return out.finish();
}

RunResult run_hierarchical(const BaselineSpec& spec, const EngineConfig& config,
                           Gateway& gateway) {
  Collector out(config, gateway, spec.kind);
  const int rounds = (config.target_size + spec.subtopics - 1) / spec.subtopics;

  for (int round = 0; round < rounds; ++round) {
    GenerationBatch topics = gateway.generate_batch(
        subtopic_system_prompt(config.task_prompt, spec.subtopics),
        config.task_prompt + " List diverse subtopics to cover.", spec.subtopics);

    // One instance per subtopic, full round even when close to the target:
    // call counts stay at rounds * (1 + subtopics) and extras are dropped.
    for (const auto& topic : topics.instances) {
      GenerationBatch one =
          gateway.generate_batch(out.batch_system(1),
                                 config.task_prompt + " Write about the subtopic: " + topic, 1);
      out.ingest(one.instances, round, config.target_size);
    }
  }
  return out.finish();
}

RunResult run_subset_select(const BaselineSpec& spec, const EngineConfig& config,
                            Gateway& gateway) {
  Collector universe(config, gateway, spec.kind);
  const int calls =
      spec.universe_multiplier * ((config.target_size + config.batch_size - 1) / config.batch_size);
  const int universe_size = calls * config.batch_size;

  for (int call = 0; call < calls; ++call) {
    GenerationBatch batch = gateway.generate_batch(universe.batch_system(config.batch_size),
                                                   config.task_prompt, config.batch_size,
                                                   spec.temperature);
    universe.ingest(batch.instances, call, universe_size);
  }

  // One k-DPP draw over the whole universe: the cubic-cost comparator.
  const SimilarityMatrix kernel = SimilarityMatrix::build(universe.items, universe.kernel);
  std::mt19937_64 rng(config.seed);
  const DppSample sample =
      sample_k_dpp(kernel, std::min<int>(config.target_size, kernel.size()), rng());

  Collector out(config, gateway, spec.kind);
  out.kernel = universe.kernel;
  out.bandwidth_resolved = true;
  for (int idx : sample.indices) {
    DataInstance d = universe.items[idx];
    d.id = "i" + std::to_string(out.counter++);
    out.items.push_back(std::move(d));
  }
  return out.finish();
}

}  // namespace

RunResult run_baseline(const BaselineSpec& spec, const EngineConfig& config, Gateway& gateway) {
  spec.validate();
  config.kernel.validate();
  if (spec.kind == "hierarchical") return run_hierarchical(spec, config, gateway);
  if (spec.kind == "subset_select") return run_subset_select(spec, config, gateway);
  return run_simple(spec, config, gateway);
}

}  // namespace divgen
