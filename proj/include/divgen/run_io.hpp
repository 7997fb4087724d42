#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "divgen/baselines.hpp"
#include "divgen/engine.hpp"
#include "divgen/mock_provider.hpp"

namespace divgen {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct JudgeConfig {
  std::vector<std::string> panel;
  std::string rubric_path;  // empty -> built-in generic rubric
  int max_score = 25;
};

/// Everything a command needs, parsed from one config document.
struct AppConfig {
  ProviderConfig provider;
  MockWorldConfig mock_world;
  EngineConfig engine;
  BaselineSpec baseline;
  JudgeConfig judge;
  nlohmann::json raw;  // post-override document, hashed into the manifest
};

/// Parses the config document (JSON with // comments allowed) and applies
/// "--set key.path=value" overrides before binding. Unknown keys are
/// reported as errors, naming the offending path.
AppConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Generic rubric used when judge.rubric_path is empty; {instance} marks
/// where the item text goes.
std::string builtin_rubric(int max_score);

// ---- output files -------------------------------------------------------

struct RunPaths {
  std::string dataset;     // dataset.jsonl: one instance per line
  std::string embeddings;  // embeddings.jsonl sidecar keyed by id
  std::string report;      // report.json
  std::string trace;       // trace.jsonl (when tracing)
  std::string manifest;    // manifest.json
  std::string snapshot;    // snapshot.json (when enabled)

  static RunPaths in_dir(const std::string& out_dir);
};

std::string dataset_to_jsonl(std::span<const DataInstance> items);
std::string embeddings_to_jsonl(std::span<const DataInstance> items);
std::string trace_to_jsonl(std::span<const TraceEvent> events);

nlohmann::json report_to_json(const DiversityReport& report, const std::string& method,
                              std::uint64_t seed, RunStatus status,
                              const std::vector<double>* rejection_trace = nullptr,
                              std::optional<double> tau0 = std::nullopt,
                              std::optional<int> iterations = std::nullopt);

struct LoadedDataset {
  std::vector<DataInstance> items;          // embeddings filled when sidecar present
  bool embeddings_loaded = false;
  std::vector<std::string> errors;          // malformed lines, with line numbers
};

LoadedDataset load_dataset(const std::string& dataset_path,
                           const std::string& embeddings_path, const StopwordSet& stopwords);

/// Manifest: config snapshot + hash, timestamps, output paths with sizes,
/// terminal status. Timestamps are the only non-deterministic fields and
/// live here, never in the dataset or report.
nlohmann::json build_manifest(const AppConfig& config, std::uint64_t seed,
                              const std::string& started_at, const std::string& finished_at,
                              const RunPaths& paths, RunStatus status,
                              const KernelConfig& resolved_kernel);

std::string status_name(RunStatus status);
std::string timestamp_utc();

}  // namespace divgen
