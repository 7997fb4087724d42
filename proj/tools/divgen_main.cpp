#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "divgen/baselines.hpp"
#include "divgen/engine.hpp"
#include "divgen/http_provider.hpp"
#include "divgen/io_util.hpp"
#include "divgen/mock_provider.hpp"
#include "divgen/run_io.hpp"

namespace {

using namespace divgen;
using nlohmann::json;

constexpr int kExitCompleted = 0;
constexpr int kExitBudgetExhausted = 2;
constexpr int kExitConfigError = 3;
constexpr int kExitProviderError = 4;

struct CommonFlags {
  std::string config_path;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool mock = false;
  bool trace = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_out = true) {
  cmd->add_option("--config", flags.config_path, "Config file (JSON, // comments allowed)")
      ->required();
  if (with_out) cmd->add_option("--out", flags.out_dir, "Output directory");
  cmd->add_option("--set", flags.overrides, "Override config values, key.path=value");
  cmd->add_option("--seed", flags.seed, "Override the run seed");
  cmd->add_flag("--mock", flags.mock, "Force the mock provider");
  cmd->add_flag("--trace", flags.trace, "Record a run trace (trace.jsonl)");
}

AppConfig load_with_flags(const CommonFlags& flags) {
  std::vector<std::string> overrides = flags.overrides;
  if (flags.seed) overrides.push_back("seed=" + std::to_string(*flags.seed));
  if (flags.mock) overrides.push_back("provider.kind=\"mock\"");
  return load_config(flags.config_path, overrides);
}

std::shared_ptr<Provider> make_provider(const AppConfig& config) {
  if (config.provider.kind == "mock") return std::make_shared<MockProvider>(config.mock_world);
  return std::make_shared<HttpProvider>(config.provider);
}

int exit_code_for(RunStatus status) {
  return status == RunStatus::completed ? kExitCompleted : kExitBudgetExhausted;
}

void write_run_outputs(const AppConfig& config, const RunResult& result, const RunPaths& paths,
                       const std::string& method, const std::string& started_at) {
  atomic_write_file(paths.dataset, dataset_to_jsonl(result.dataset));
  atomic_write_file(paths.embeddings, embeddings_to_jsonl(result.dataset));

  const bool engine_method = method == "engine";
  const json report = report_to_json(
      result.report, method, config.engine.seed, result.status,
      result.trace.empty() ? nullptr : &result.rejection_trace,
      engine_method ? std::optional<double>(result.tau0) : std::nullopt,
      engine_method ? std::optional<int>(result.iterations_used) : std::nullopt);
  atomic_write_file(paths.report, report.dump(2) + "\n");

  if (!result.trace.empty()) atomic_write_file(paths.trace, trace_to_jsonl(result.trace));

  const json manifest =
      build_manifest(config, config.engine.seed, started_at, timestamp_utc(), paths,
                     result.status, result.resolved_kernel);
  atomic_write_file(paths.manifest, manifest.dump(2) + "\n");
}

int write_failed_manifest(const AppConfig& config, const RunPaths& paths,
                          const std::string& started_at, const std::string& error) {
  json manifest = build_manifest(config, config.engine.seed, started_at, timestamp_utc(), paths,
                                 RunStatus::failed, config.engine.kernel);
  manifest["error"] = error;
  atomic_write_file(paths.manifest, manifest.dump(2) + "\n");
  return kExitProviderError;
}

int cmd_generate(const CommonFlags& flags, const std::string& resume_path) {
  AppConfig config = load_with_flags(flags);
  std::filesystem::create_directories(flags.out_dir);
  const RunPaths paths = RunPaths::in_dir(flags.out_dir);
  if (config.engine.snapshot_every > 0) config.engine.snapshot_path = paths.snapshot;

  const std::string started_at = timestamp_utc();
  auto provider = make_provider(config);
  Gateway gateway(provider, config.provider);
  Engine engine(config.engine, gateway);
  engine.enable_tracing(flags.trace);

  try {
    if (!resume_path.empty()) engine.restore(json::parse(read_file(resume_path)));
    const RunResult result = engine.run();
    write_run_outputs(config, result, paths, "engine", started_at);
    std::cout << "status: " << status_name(result.status) << "  n=" << result.dataset.size()
              << "  vendi=" << result.report.vendi
              << "  llm_calls=" << result.ledger.generation_class() << "\n";
    return exit_code_for(result.status);
  } catch (const ProviderError& err) {
    std::cerr << "provider error: " << err.what() << "\n";
    return write_failed_manifest(config, paths, started_at, err.what());
  }
}

int cmd_baseline(const CommonFlags& flags, std::string kind) {
  AppConfig config = load_with_flags(flags);
  if (!kind.empty()) config.baseline.kind = kind;
  config.baseline.validate();

  std::filesystem::create_directories(flags.out_dir);
  const RunPaths paths = RunPaths::in_dir(flags.out_dir);
  const std::string started_at = timestamp_utc();
  auto provider = make_provider(config);
  Gateway gateway(provider, config.provider);

  try {
    const RunResult result = run_baseline(config.baseline, config.engine, gateway);
    write_run_outputs(config, result, paths, config.baseline.kind, started_at);
    std::cout << "status: " << status_name(result.status) << "  n=" << result.dataset.size()
              << "  vendi=" << result.report.vendi
              << "  llm_calls=" << result.ledger.generation_class() << "\n";
    return exit_code_for(result.status);
  } catch (const ProviderError& err) {
    std::cerr << "provider error: " << err.what() << "\n";
    return write_failed_manifest(config, paths, started_at, err.what());
  }
}

int cmd_init_threshold(const CommonFlags& flags) {
  const AppConfig config = load_with_flags(flags);
  auto provider = make_provider(config);
  Gateway gateway(provider, config.provider);
  Engine engine(config.engine, gateway);
  const double tau0 = engine.init_threshold();

  json out = {{"tau0", tau0},
              {"alpha", config.engine.schedule.alpha},
              {"probe_calls", gateway.ledger().probe}};
  if (engine.config().kernel.rbf_bandwidth)
    out["rbf_bandwidth"] = *engine.config().kernel.rbf_bandwidth;
  std::cout << out.dump(2) << "\n";
  return kExitCompleted;
}

int cmd_evaluate(const std::string& dataset_path, std::string embeddings_path,
                 const CommonFlags& flags, bool with_judge, std::string report_path) {
  AppConfig config = flags.config_path.empty() ? AppConfig{} : load_with_flags(flags);
  const std::filesystem::path dir = std::filesystem::path(dataset_path).parent_path();
  if (embeddings_path.empty()) embeddings_path = (dir / "embeddings.jsonl").string();
  if (report_path.empty()) report_path = (dir / "eval_report.json").string();

  LoadedDataset loaded = load_dataset(dataset_path, embeddings_path, config.engine.stopwords);
  for (const auto& err : loaded.errors) std::cerr << "skipping malformed record: " << err << "\n";
  if (loaded.items.empty()) {
    std::cerr << "no valid records in " << dataset_path << "\n";
    return kExitConfigError;
  }

  KernelConfig kernel = config.engine.kernel;
  if (!kernel.rbf_bandwidth) {
    // Fall back to the bandwidth the producing run resolved, if a manifest
    // sits next to the dataset.
    const std::filesystem::path manifest_path = dir / "manifest.json";
    if (std::filesystem::exists(manifest_path)) {
      const json manifest = json::parse(read_file(manifest_path.string()));
      if (manifest.contains("resolved_kernel") &&
          !manifest.at("resolved_kernel").at("rbf_bandwidth").is_null())
        kernel.rbf_bandwidth = manifest.at("resolved_kernel").at("rbf_bandwidth").get<double>();
    }
  }

  std::shared_ptr<Provider> provider;
  std::optional<Gateway> gateway;
  const bool need_gateway = !loaded.embeddings_loaded || with_judge;
  if (need_gateway) {
    if (flags.config_path.empty()) {
      std::cerr << "embeddings missing and no --config given to configure an embedder\n";
      return kExitConfigError;
    }
    provider = make_provider(config);
    gateway.emplace(provider, config.provider);
  }

  try {
    if (!loaded.embeddings_loaded) {
      std::vector<std::string> texts;
      for (const auto& d : loaded.items) texts.push_back(d.text);
      const std::vector<Embedding> embeddings = gateway->embed(texts);
      for (std::size_t i = 0; i < loaded.items.size(); ++i)
        loaded.items[i].embedding = embeddings[i];
    }

    std::vector<Embedding> all;
    for (const auto& d : loaded.items) all.push_back(d.embedding);
    if (!kernel.rbf_bandwidth) kernel.rbf_bandwidth = median_pairwise_distance(all);

    DiversityReport report = compute_report(
        loaded.items, kernel, gateway ? gateway->ledger() : LedgerSnapshot{});

    if (with_judge) {
      if (config.judge.panel.empty()) {
        std::cerr << "judge requested but judge.panel is empty\n";
        return kExitConfigError;
      }
      const std::string rubric = config.judge.rubric_path.empty()
                                     ? builtin_rubric(config.judge.max_score)
                                     : read_file(config.judge.rubric_path);
      report.quality =
          judge_quality(loaded.items, rubric, config.judge.max_score, config.judge.panel,
                        *gateway);
      report.llm_calls = gateway->ledger();
    }

    const json out = report_to_json(report, "evaluate", config.engine.seed,
                                    RunStatus::completed);
    atomic_write_file(report_path, out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return kExitCompleted;
  } catch (const ProviderError& err) {
    std::cerr << "provider error: " << err.what() << "\n";
    return kExitProviderError;
  }
}

int cmd_compare(const std::vector<std::string>& report_paths, const std::string& out_path) {
  static const char* kRequired[] = {"method", "n", "lexical", "cosine", "vendi", "llm_calls"};
  std::vector<json> reports;
  std::vector<std::string> labels;
  for (const auto& path : report_paths) {
    json r;
    try {
      r = json::parse(read_file(path));
    } catch (const std::exception& err) {
      throw ConfigError("cannot read report " + path + ": " + err.what());
    }
    std::string missing;
    for (const char* key : kRequired)
      if (!r.contains(key)) missing += std::string(key) + " ";
    if (!missing.empty())
      throw ConfigError("report " + path + " is missing fields: " + missing);
    labels.push_back(r.at("method").get<std::string>() + "#" + std::to_string(labels.size()));
    reports.push_back(std::move(r));
  }

  struct Metric {
    const char* name;
    bool higher_better;
    std::function<double(const json&)> get;
  };
  const std::vector<Metric> metrics = {
      {"lexical", true, [](const json& r) { return r.at("lexical").at("mean").get<double>(); }},
      {"cosine", true, [](const json& r) { return r.at("cosine").at("mean").get<double>(); }},
      {"vendi", true, [](const json& r) { return r.at("vendi").get<double>(); }},
      {"llm_calls", false,
       [](const json& r) { return r.at("llm_calls").at("generation_class").get<double>(); }},
  };

  json table = json::object();
  std::cout << std::left;
  printf("%-14s", "metric");
  for (const auto& label : labels) printf(" %16s", label.c_str());
  printf("\n");

  for (const auto& metric : metrics) {
    std::vector<double> values;
    for (const auto& r : reports) values.push_back(metric.get(r));
    std::vector<int> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return metric.higher_better ? values[a] > values[b] : values[a] < values[b];
    });
    const double best = values[order[0]];
    const double second = order.size() > 1 ? values[order[1]] : best;
    const bool tie = order.size() > 1 && values[order[0]] == values[order[1]];

    json row = json::object();
    printf("%-14s", metric.name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::string mark;
      if (values[i] == best)
        mark = tie ? "=best" : "*best";
      else if (order.size() > 1 && values[i] == second)
        mark = "~2nd";
      char cell[64];
      snprintf(cell, sizeof(cell), "%.4f%s", values[i], mark.empty() ? "" : (" " + mark).c_str());
      printf(" %16s", cell);
      row[labels[i]] = {{"value", values[i]}, {"mark", mark}};
    }
    printf("\n");
    table[metric.name] = std::move(row);
  }

  // Plot-ready rejection series, one TSV per report that carries a trace.
  json series_files = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].contains("rejection_trace")) continue;
    const auto trace = reports[i].at("rejection_trace").get<std::vector<double>>();
    std::string tsv = "explore_index\trejection_rate\n";
    for (std::size_t t = 0; t < trace.size(); ++t)
      tsv += std::to_string(t) + "\t" + std::to_string(trace[t]) + "\n";
    const std::string path = out_path + "." + labels[i] + ".rejection.tsv";
    atomic_write_file(path, tsv);
    series_files.push_back(path);
  }

  const json out = {{"labels", labels}, {"metrics", table}, {"rejection_series", series_files}};
  atomic_write_file(out_path, out.dump(2) + "\n");
  return kExitCompleted;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diversity-optimized synthetic text dataset generation"};
  app.require_subcommand(1);

  CommonFlags gen_flags;
  std::string resume_path;
  CLI::App* generate = app.add_subcommand("generate", "Run the iterative generation loop");
  add_common(generate, gen_flags);
  generate->add_option("--resume", resume_path, "Resume from a snapshot file");

  CommonFlags base_flags;
  std::string baseline_kind;
  CLI::App* baseline = app.add_subcommand("baseline", "Run a comparison generator");
  add_common(baseline, base_flags);
  baseline->add_option("--kind", baseline_kind,
                       "default | temp | diverse | history | hierarchical | subset_select");

  CommonFlags eval_flags;
  std::string dataset_path, embeddings_path, report_path;
  bool with_judge = false;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Compute diversity metrics for a dataset");
  evaluate->add_option("--dataset", dataset_path, "dataset.jsonl to evaluate")->required();
  evaluate->add_option("--embeddings", embeddings_path,
                       "embeddings sidecar (default: sibling embeddings.jsonl)");
  evaluate->add_option("--config", eval_flags.config_path, "Config for kernel/provider/judge");
  evaluate->add_option("--set", eval_flags.overrides, "Override config values");
  evaluate->add_option("--out", report_path, "Report output path");
  evaluate->add_flag("--mock", eval_flags.mock, "Force the mock provider");
  evaluate->add_flag("--judge", with_judge, "Run the LLM judge panel from the config");

  std::vector<std::string> compare_paths;
  std::string compare_out = "compare.json";
  CLI::App* compare = app.add_subcommand("compare", "Compare two or more report files");
  compare->add_option("reports", compare_paths, "report.json files")->expected(2, -1);
  compare->add_option("--out", compare_out, "Comparison output file");

  CommonFlags init_flags;
  CLI::App* init_threshold =
      app.add_subcommand("init-threshold", "Probe the task and print tau0");
  add_common(init_threshold, init_flags, /*with_out=*/false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(gen_flags, resume_path);
    if (baseline->parsed()) return cmd_baseline(base_flags, baseline_kind);
    if (evaluate->parsed())
      return cmd_evaluate(dataset_path, embeddings_path, eval_flags, with_judge, report_path);
    if (compare->parsed()) return cmd_compare(compare_paths, compare_out);
    if (init_threshold->parsed()) return cmd_init_threshold(init_flags);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfigError;
  } catch (const ProviderError& err) {
    std::cerr << "provider error: " << err.what() << "\n";
    return kExitProviderError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
