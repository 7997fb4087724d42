#include "divgen/run_io.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <sstream>

#include "divgen/io_util.hpp"

namespace divgen {

namespace {

using nlohmann::json;

double get_num(const json& obj, const char* key, double fallback) {
  return obj.contains(key) ? obj.at(key).get<double>() : fallback;
}

int get_int(const json& obj, const char* key, int fallback) {
  return obj.contains(key) ? obj.at(key).get<int>() : fallback;
}

std::string get_str(const json& obj, const char* key, const std::string& fallback) {
  return obj.contains(key) ? obj.at(key).get<std::string>() : fallback;
}

bool get_bool(const json& obj, const char* key, bool fallback) {
  return obj.contains(key) ? obj.at(key).get<bool>() : fallback;
}

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("unknown config key: " + section + "." + key);
  }
}

}  // namespace

AppConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& err) {
    throw ConfigError(std::string("config parse error: ") + err.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be an object");

  // --set key.path=value, value parsed as JSON with raw-string fallback.
  for (const auto& kv : overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
    const std::string path = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    json* node = &doc;
    std::istringstream keys(path);
    std::string key;
    std::vector<std::string> parts;
    while (std::getline(keys, key, '.')) parts.push_back(key);
    if (parts.empty()) throw ConfigError("empty override key: " + kv);
    try {
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
      try {
        (*node)[parts.back()] = json::parse(value);
      } catch (const json::parse_error&) {
        (*node)[parts.back()] = value;
      }
    } catch (const json::type_error&) {
      throw ConfigError("override path crosses a non-object value: " + path);
    }
  }

  check_keys(doc, "<root>",
             {"provider", "mock_world", "kernel", "schedule", "engine", "baseline", "judge",
              "seed"});

  AppConfig out;
  out.raw = doc;
  const std::uint64_t seed = doc.contains("seed") ? doc.at("seed").get<std::uint64_t>() : 42;

  if (doc.contains("provider")) {
    const json& p = doc.at("provider");
    check_keys(p, "provider",
               {"kind", "endpoint", "model", "embedding_model", "temperature", "max_retries",
                "timeout_ms", "api_key_env", "max_concurrent_requests"});
    out.provider.kind = get_str(p, "kind", out.provider.kind);
    out.provider.endpoint = get_str(p, "endpoint", out.provider.endpoint);
    out.provider.model = get_str(p, "model", out.provider.model);
    out.provider.embedding_model = get_str(p, "embedding_model", out.provider.embedding_model);
    out.provider.temperature = get_num(p, "temperature", out.provider.temperature);
    out.provider.max_retries = get_int(p, "max_retries", out.provider.max_retries);
    out.provider.timeout_ms = get_int(p, "timeout_ms", out.provider.timeout_ms);
    out.provider.api_key_env = get_str(p, "api_key_env", out.provider.api_key_env);
    out.provider.max_concurrent_requests =
        get_int(p, "max_concurrent_requests", out.provider.max_concurrent_requests);
  }

  out.mock_world.seed = seed;
  if (doc.contains("mock_world")) {
    const json& m = doc.at("mock_world");
    check_keys(m, "mock_world", {"clusters", "embedding_dim", "concentration", "noise", "seed"});
    out.mock_world.clusters = get_int(m, "clusters", out.mock_world.clusters);
    out.mock_world.embedding_dim = get_int(m, "embedding_dim", out.mock_world.embedding_dim);
    out.mock_world.concentration = get_num(m, "concentration", out.mock_world.concentration);
    out.mock_world.noise = get_num(m, "noise", out.mock_world.noise);
    if (m.contains("seed")) out.mock_world.seed = m.at("seed").get<std::uint64_t>();
  }

  if (doc.contains("kernel")) {
    const json& k = doc.at("kernel");
    check_keys(k, "kernel", {"w_rbf", "w_lex", "rbf_bandwidth", "jitter", "stopwords_path"});
    out.engine.kernel.w_rbf = get_num(k, "w_rbf", out.engine.kernel.w_rbf);
    out.engine.kernel.w_lex = get_num(k, "w_lex", out.engine.kernel.w_lex);
    if (k.contains("rbf_bandwidth") && !k.at("rbf_bandwidth").is_null())
      out.engine.kernel.rbf_bandwidth = k.at("rbf_bandwidth").get<double>();
    out.engine.kernel.jitter = get_num(k, "jitter", out.engine.kernel.jitter);
    const std::string stopwords_path = get_str(k, "stopwords_path", "");
    if (!stopwords_path.empty()) out.engine.stopwords = load_stopwords(stopwords_path);
  }

  if (doc.contains("schedule")) {
    const json& s = doc.at("schedule");
    check_keys(s, "schedule", {"alpha", "tau_min", "tau_max", "mode", "tau0_override"});
    out.engine.schedule.alpha = get_num(s, "alpha", out.engine.schedule.alpha);
    out.engine.schedule.tau_min = get_num(s, "tau_min", out.engine.schedule.tau_min);
    out.engine.schedule.tau_max = get_num(s, "tau_max", out.engine.schedule.tau_max);
    out.engine.schedule.mode = get_str(s, "mode", out.engine.schedule.mode);
    if (s.contains("tau0_override") && !s.at("tau0_override").is_null())
      out.engine.schedule.tau0_override = s.at("tau0_override").get<double>();
  }

  if (doc.contains("engine")) {
    const json& e = doc.at("engine");
    check_keys(e, "engine",
               {"task_prompt", "target_size", "explorers", "anchor_capacity", "max_iterations",
                "batch_size", "gradients_per_call", "refinement", "successor_selection",
                "snapshot_every"});
    out.engine.task_prompt = get_str(e, "task_prompt", out.engine.task_prompt);
    out.engine.target_size = get_int(e, "target_size", out.engine.target_size);
    out.engine.explorers = get_int(e, "explorers", out.engine.explorers);
    out.engine.anchor_capacity = get_int(e, "anchor_capacity", out.engine.anchor_capacity);
    out.engine.max_iterations = get_int(e, "max_iterations", out.engine.max_iterations);
    out.engine.batch_size = get_int(e, "batch_size", out.engine.batch_size);
    out.engine.gradients_per_call =
        get_int(e, "gradients_per_call", out.engine.gradients_per_call);
    out.engine.refinement = get_bool(e, "refinement", out.engine.refinement);
    out.engine.successor_selection =
        get_str(e, "successor_selection", out.engine.successor_selection);
    out.engine.snapshot_every = get_int(e, "snapshot_every", out.engine.snapshot_every);
  }
  out.engine.seed = seed;

  if (doc.contains("baseline")) {
    const json& b = doc.at("baseline");
    check_keys(b, "baseline",
               {"kind", "temperature", "history_window", "subtopics", "universe_multiplier",
                "diverse_instruction"});
    out.baseline.kind = get_str(b, "kind", out.baseline.kind);
    out.baseline.temperature = get_num(b, "temperature", out.baseline.temperature);
    out.baseline.history_window = get_int(b, "history_window", out.baseline.history_window);
    out.baseline.subtopics = get_int(b, "subtopics", out.baseline.subtopics);
    out.baseline.universe_multiplier =
        get_int(b, "universe_multiplier", out.baseline.universe_multiplier);
    out.baseline.diverse_instruction =
        get_str(b, "diverse_instruction", out.baseline.diverse_instruction);
  }

  if (doc.contains("judge")) {
    const json& j = doc.at("judge");
    check_keys(j, "judge", {"panel", "rubric_path", "max_score"});
    if (j.contains("panel")) out.judge.panel = j.at("panel").get<std::vector<std::string>>();
    out.judge.rubric_path = get_str(j, "rubric_path", out.judge.rubric_path);
    out.judge.max_score = get_int(j, "max_score", out.judge.max_score);
  }

  try {
    out.provider.validate();
    out.mock_world.validate();
    out.engine.kernel.validate();
    out.engine.schedule.validate();
  } catch (const std::invalid_argument& err) {
    throw ConfigError(err.what());
  }
  return out;
}

AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& err) {
    throw ConfigError(err.what());
  }
  return parse_config(text, overrides);
}

std::string builtin_rubric(int max_score) {
  std::ostringstream os;
  os << "Evaluate the generated instance below against its generation task.\n\n"
     << "Evaluation Criteria (0-" << max_score << " pts):\n"
     << "- Relevance: does the output address the task directly?\n"
     << "- Quality & Clarity: is it grammatical and easy to understand?\n"
     << "- Creativity & Originality: does it avoid cliches and overused themes?\n\n"
     << "Input:\n{instance}\n\n"
     << "Submit your evaluation as:\n"
     << "Relevance: [Score] [Justification]\n"
     << "Quality: [Score] [Justification]\n"
     << "Creativity: [Score] [Justification]\n"
     << "Overall: [Score]\n\n"
     << "Return the Overall score enclosed in between <START>, <END>.";
  return os.str();
}

RunPaths RunPaths::in_dir(const std::string& out_dir) {
  RunPaths p;
  p.dataset = out_dir + "/dataset.jsonl";
  p.embeddings = out_dir + "/embeddings.jsonl";
  p.report = out_dir + "/report.json";
  p.trace = out_dir + "/trace.jsonl";
  p.manifest = out_dir + "/manifest.json";
  p.snapshot = out_dir + "/snapshot.json";
  return p;
}

std::string dataset_to_jsonl(std::span<const DataInstance> items) {
  std::string out;
  for (const auto& d : items) {
    const json line = {{"id", d.id},
                       {"text", d.text},
                       {"explorer_id", d.explorer_id},
                       {"iteration", d.iteration},
                       {"marginal_gain", d.marginal_gain}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::string embeddings_to_jsonl(std::span<const DataInstance> items) {
  std::string out;
  const int dim = items.empty() ? 0 : items[0].embedding.dim();
  out += json{{"dim", dim}, {"count", items.size()}}.dump();
  out += '\n';
  for (const auto& d : items) {
    json values = json::array();
    for (int i = 0; i < d.embedding.dim(); ++i) values.push_back(d.embedding.values(i));
    out += json{{"id", d.id}, {"values", std::move(values)}}.dump();
    out += '\n';
  }
  return out;
}

std::string trace_to_jsonl(std::span<const TraceEvent> events) {
  std::string out;
  for (const auto& ev : events) {
    json line = {{"kind", ev.kind},
                 {"iteration", ev.iteration},
                 {"explorer_id", ev.explorer_id},
                 {"gamma", ev.gamma},
                 {"tau", ev.tau}};
    if (!ev.detail.empty()) line["detail"] = ev.detail;
    out += line.dump();
    out += '\n';
  }
  return out;
}

nlohmann::json report_to_json(const DiversityReport& report, const std::string& method,
                              std::uint64_t seed, RunStatus status,
                              const std::vector<double>* rejection_trace,
                              std::optional<double> tau0, std::optional<int> iterations) {
  json out;
  out["method"] = method;
  out["n"] = report.n;
  out["lexical"] = {{"mean", report.lexical.mean}, {"stddev", report.lexical.stddev}};
  out["cosine"] = {{"mean", report.cosine.mean}, {"stddev", report.cosine.stddev}};
  out["vendi"] = report.vendi;
  out["effective_rank_approx"] = report.effective_rank.value;
  out["effective_rank_degenerate"] = report.effective_rank.degenerate;
  if (report.quality) {
    out["quality"] = {{"mean", report.quality->score.mean},
                      {"stddev", report.quality->score.stddev},
                      {"max_score", report.quality->max_score},
                      {"items_scored", report.quality->items_scored},
                      {"items_skipped", report.quality->items_skipped},
                      {"parse_warnings", report.quality->parse_warnings}};
  }
  out["llm_calls"] = {{"generate", report.llm_calls.generate},
                      {"gradient_get", report.llm_calls.gradient_get},
                      {"gradient_apply", report.llm_calls.gradient_apply},
                      {"judge", report.llm_calls.judge},
                      {"embed", report.llm_calls.embed},
                      {"probe", report.llm_calls.probe},
                      {"generation_class", report.llm_calls.generation_class()},
                      {"total", report.llm_calls.total()},
                      {"total_tokens", report.llm_calls.total_tokens}};
  out["kernel"] = {{"w_rbf", report.kernel.w_rbf},
                   {"w_lex", report.kernel.w_lex},
                   {"rbf_bandwidth",
                    report.kernel.rbf_bandwidth ? json(*report.kernel.rbf_bandwidth) : json()},
                   {"jitter", report.kernel.jitter}};
  out["seed"] = seed;
  out["status"] = status_name(status);
  if (rejection_trace) out["rejection_trace"] = *rejection_trace;
  if (tau0) out["tau0"] = *tau0;
  if (iterations) out["iterations"] = *iterations;
  return out;
}

LoadedDataset load_dataset(const std::string& dataset_path, const std::string& embeddings_path,
                           const StopwordSet& stopwords) {
  LoadedDataset out;
  std::istringstream in(read_file(dataset_path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      DataInstance d;
      d.id = j.at("id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      d.explorer_id = j.value("explorer_id", std::string());
      d.iteration = j.value("iteration", 0);
      d.marginal_gain = j.value("marginal_gain", 1.0);
      d.tokens = tokenize(d.text, stopwords);
      out.items.push_back(std::move(d));
    } catch (const std::exception& err) {
      out.errors.push_back("line " + std::to_string(line_no) + ": " + err.what());
    }
  }

  if (!embeddings_path.empty() && std::filesystem::exists(embeddings_path)) {
    std::map<std::string, Eigen::VectorXd> by_id;
    std::istringstream ein(read_file(embeddings_path));
    int eline_no = 0;
    while (std::getline(ein, line)) {
      ++eline_no;
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        if (!j.contains("id")) continue;  // header line
        const auto& values = j.at("values");
        Eigen::VectorXd v(values.size());
        for (std::size_t i = 0; i < values.size(); ++i)
          v(static_cast<int>(i)) = values[i].get<double>();
        by_id[j.at("id").get<std::string>()] = std::move(v);
      } catch (const std::exception& err) {
        out.errors.push_back("embeddings line " + std::to_string(eline_no) + ": " + err.what());
      }
    }
    bool all = !out.items.empty();
    for (auto& d : out.items) {
      auto it = by_id.find(d.id);
      if (it == by_id.end()) {
        all = false;
        continue;
      }
      d.embedding = Embedding::normalized(it->second);
    }
    out.embeddings_loaded = all;
  }
  return out;
}

nlohmann::json build_manifest(const AppConfig& config, std::uint64_t seed,
                              const std::string& started_at, const std::string& finished_at,
                              const RunPaths& paths, RunStatus status,
                              const KernelConfig& resolved_kernel) {
  json outputs = json::object();
  const auto add = [&outputs](const char* key, const std::string& path) {
    if (path.empty() || !std::filesystem::exists(path)) return;
    outputs[key] = {{"path", path},
                    {"bytes", static_cast<std::uint64_t>(std::filesystem::file_size(path))}};
  };
  add("dataset", paths.dataset);
  add("embeddings", paths.embeddings);
  add("report", paths.report);
  add("trace", paths.trace);
  add("snapshot", paths.snapshot);

  return json{{"config", config.raw},
              {"config_hash", sha256_hex(config.raw.dump())},
              {"seed", seed},
              {"started_at", started_at},
              {"finished_at", finished_at},
              {"status", status_name(status)},
              {"outputs", std::move(outputs)},
              {"resolved_kernel",
               {{"w_rbf", resolved_kernel.w_rbf},
                {"w_lex", resolved_kernel.w_lex},
                {"rbf_bandwidth",
                 resolved_kernel.rbf_bandwidth ? json(*resolved_kernel.rbf_bandwidth) : json()},
                {"jitter", resolved_kernel.jitter}}}};
}

std::string status_name(RunStatus status) {
  switch (status) {
    case RunStatus::completed: return "completed";
    case RunStatus::budget_exhausted: return "budget_exhausted";
    case RunStatus::failed: return "failed";
  }
  return "unknown";
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace divgen
