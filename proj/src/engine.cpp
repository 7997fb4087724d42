#include "divgen/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "divgen/io_util.hpp"
#include "divgen/rng.hpp"

namespace divgen {

namespace {

constexpr int kProbeCount = 100;   // instances sampled for threshold initialization
constexpr int kProbeSelect = 10;   // k-DPP subset whose determinant sets tau0
constexpr double kGainFloor = 1e-12;

}  // namespace

double ThresholdSchedule::at(int iteration) const {
  if (mode == Mode::constant) return tau0;
  return tau0 * std::exp(-static_cast<double>(iteration) / static_cast<double>(max_iterations));
}

void ScheduleConfig::validate() const {
  if (alpha <= 0.0) throw std::invalid_argument("schedule.alpha must be positive");
  if (tau_min > tau_max) throw std::invalid_argument("schedule.tau_min must be <= tau_max");
  if (mode != "constant" && mode != "exponential_decay")
    throw std::invalid_argument("schedule.mode must be 'constant' or 'exponential_decay'");
}

void EngineConfig::validate() const {
  if (task_prompt.empty()) throw std::invalid_argument("engine.task_prompt must be set");
  if (target_size < 1) throw std::invalid_argument("engine.target_size must be >= 1");
  if (explorers < 1) throw std::invalid_argument("engine.explorers must be >= 1");
  if (anchor_capacity < 1) throw std::invalid_argument("engine.anchor_capacity must be >= 1");
  if (max_iterations < 1) throw std::invalid_argument("engine.max_iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("engine.batch_size must be >= 1");
  if (gradients_per_call < 1) throw std::invalid_argument("engine.gradients_per_call must be >= 1");
  if (successor_selection != "dpp" && successor_selection != "random")
    throw std::invalid_argument("engine.successor_selection must be 'dpp' or 'random'");
  kernel.validate();
  schedule.validate();
}

std::vector<double> rejection_rate_trace(const RunResult& result) {
  if (result.trace.empty())
    throw std::runtime_error("rejection_rate_trace: run executed without tracing enabled");
  return result.rejection_trace;
}

Engine::Engine(EngineConfig config, Gateway& gateway)
    : config_(std::move(config)), gateway_(gateway), rng_(config_.seed) {
  config_.validate();
  schedule_.max_iterations = config_.max_iterations;
  schedule_.mode = config_.schedule.mode == "constant" ? ThresholdSchedule::Mode::constant
                                                       : ThresholdSchedule::Mode::exponential_decay;
}

std::string Engine::system_prompt() const {
  return batch_system_prompt(config_.task_prompt, config_.batch_size);
}

std::string Engine::next_instance_id() { return "i" + std::to_string(instance_counter_++); }
std::string Engine::next_explorer_id() { return "e" + std::to_string(explorer_counter_++); }

void Engine::record(TraceEvent event) {
  if (tracing_) trace_.push_back(std::move(event));
}

void Engine::resolve_bandwidth(std::span<const Embedding> embeddings) {
  if (bandwidth_resolved_) return;
  if (!config_.kernel.rbf_bandwidth)
    config_.kernel.rbf_bandwidth = median_pairwise_distance(embeddings);
  bandwidth_resolved_ = true;
  anchor_ = AnchorState(config_.kernel);
}

double Engine::init_threshold() {
  if (tau_initialized_) return schedule_.tau0;

  if (config_.schedule.tau0_override) {
    // Test/ablation hook: bypasses both the probe procedure and clipping.
    schedule_.tau0 = *config_.schedule.tau0_override;
    if (config_.kernel.rbf_bandwidth) {
      bandwidth_resolved_ = true;
      anchor_ = AnchorState(config_.kernel);
    }
    tau_initialized_ = true;
    return schedule_.tau0;
  }

  std::vector<std::string> texts;
  const int max_calls = 2 * ((kProbeCount + config_.batch_size - 1) / config_.batch_size);
  for (int call = 0; call < max_calls && static_cast<int>(texts.size()) < kProbeCount; ++call) {
    try {
      GenerationBatch batch =
          gateway_.generate_batch(system_prompt(), config_.task_prompt, config_.batch_size,
                                  std::nullopt, CallLedger::Category::probe);
      for (auto& t : batch.instances) {
        if (static_cast<int>(texts.size()) >= kProbeCount) break;
        texts.push_back(std::move(t));
      }
    } catch (const ProviderError&) {
      if (static_cast<int>(texts.size()) < kProbeSelect) throw;
      break;  // enough probes to select from
    }
  }
  if (static_cast<int>(texts.size()) < kProbeSelect)
    throw std::runtime_error("init_threshold: fewer than 10 probe instances generable");

  std::vector<Embedding> embeddings = gateway_.embed(texts);
  resolve_bandwidth(embeddings);

  std::vector<DataInstance> probes(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    probes[i].id = "probe" + std::to_string(i);
    probes[i].text = texts[i];
    probes[i].embedding = embeddings[i];
    probes[i].tokens = tokenize(texts[i], config_.stopwords);
  }

  const SimilarityMatrix kernel = SimilarityMatrix::build(probes, config_.kernel);
  const DppSample sample = sample_k_dpp(kernel, kProbeSelect, rng_());
  std::vector<DataInstance> selected;
  for (int idx : sample.indices) selected.push_back(probes[idx]);
  const double det = std::exp(log_det(SimilarityMatrix::build(selected, config_.kernel)));

  const double raw = config_.schedule.alpha * det;
  schedule_.tau0 = std::clamp(raw, config_.schedule.tau_min, config_.schedule.tau_max);
  tau_initialized_ = true;

  TraceEvent ev;
  ev.kind = "probe";
  ev.iteration = -1;
  ev.tau = schedule_.tau0;
  std::ostringstream detail;
  detail << "det=" << det << " alpha=" << config_.schedule.alpha
         << " bandwidth=" << *config_.kernel.rbf_bandwidth;
  ev.detail = detail.str();
  record(std::move(ev));
  return schedule_.tau0;
}

Engine::ExploreOutcome Engine::explore(const Explorer& explorer, double tau, int max_accept) {
  ExploreOutcome out;
  out.augmented = anchor_;

  GenerationBatch batch = gateway_.generate_batch(system_prompt(), explorer.prompt,
                                                  config_.batch_size);
  out.batch_size = static_cast<int>(batch.instances.size());
  {
    TraceEvent ev;
    ev.kind = "generate";
    ev.iteration = iteration_;
    ev.explorer_id = explorer.id;
    ev.tau = tau;
    ev.detail = "batch=" + std::to_string(out.batch_size);
    record(std::move(ev));
  }

  // Exact duplicates of dataset items are rejected before the gain test
  // and never embedded.
  std::set<std::string> dataset_texts;
  for (const auto& d : dataset_) dataset_texts.insert(d.text);

  std::vector<std::string> to_embed;
  std::map<std::string, Embedding> embedding_of;
  for (const auto& text : batch.instances)
    if (!dataset_texts.count(text) && !embedding_of.count(text)) {
      to_embed.push_back(text);
      embedding_of.emplace(text, Embedding{});
    }
  if (!to_embed.empty()) {
    const std::vector<Embedding> embeddings = gateway_.embed(to_embed);
    for (std::size_t i = 0; i < to_embed.size(); ++i)
      embedding_of[to_embed[i]] = embeddings[i];
    resolve_bandwidth(embeddings);
  }

  for (const auto& text : batch.instances) {
    if (static_cast<int>(out.accepted.size()) >= max_accept) break;

    if (dataset_texts.count(text)) {
      out.rejected_texts.push_back(text);
      TraceEvent ev;
      ev.kind = "reject";
      ev.iteration = iteration_;
      ev.explorer_id = explorer.id;
      ev.tau = tau;
      ev.detail = "duplicate";
      record(std::move(ev));
      continue;
    }

    DataInstance w;
    w.id = next_instance_id();
    w.text = text;
    w.embedding = embedding_of.at(text);
    w.tokens = tokenize(text, config_.stopwords);
    w.explorer_id = explorer.id;
    w.iteration = iteration_;

    const double gamma = out.augmented.marginal_gain(w);
    if (gamma >= tau && gamma > kGainFloor) {
      w.marginal_gain = std::min(gamma, 1.0);
      out.augmented = out.augmented.extended(w);
      TraceEvent ev;
      ev.kind = "accept";
      ev.iteration = iteration_;
      ev.explorer_id = explorer.id;
      ev.gamma = gamma;
      ev.tau = tau;
      ev.detail = w.id;
      record(std::move(ev));
      dataset_texts.insert(w.text);
      out.accepted.push_back(std::move(w));
    } else {
      out.rejected_texts.push_back(text);
      TraceEvent ev;
      ev.kind = "reject";
      ev.iteration = iteration_;
      ev.explorer_id = explorer.id;
      ev.gamma = gamma;
      ev.tau = tau;
      record(std::move(ev));
    }
  }

  if (!out.rejected_texts.empty() && config_.refinement) {
    std::vector<std::string> anchor_texts;
    for (const auto& item : out.augmented.items()) anchor_texts.push_back(item.text);

    const std::vector<std::string> gradients =
        gateway_.get_gradients(config_.task_prompt, explorer.prompt, out.rejected_texts,
                               anchor_texts, config_.gradients_per_call);
    if (!gradients.empty()) {
      const std::vector<std::string> prompts =
          gateway_.apply_gradients(config_.task_prompt, explorer.prompt, gradients);
      if (!prompts.empty()) {
        const std::vector<Embedding> prompt_embeddings = gateway_.embed(prompts);
        for (std::size_t i = 0; i < prompts.size(); ++i) {
          Explorer succ;
          succ.id = next_explorer_id();
          succ.prompt = prompts[i];
          succ.parent_id = explorer.id;
          succ.depth = explorer.depth + 1;
          succ.embedding = prompt_embeddings[i];
          out.successors.push_back(std::move(succ));
        }
      }
    }
  }
  return out;
}

void Engine::prune_anchor(int iteration) {
  if (anchor_.size() <= config_.anchor_capacity) return;
  const DppSample sample =
      sample_k_dpp(anchor_.kernel(), config_.anchor_capacity, rng_());
  std::vector<DataInstance> kept;
  for (int idx : sample.indices) kept.push_back(anchor_.items()[idx]);
  anchor_ = AnchorState::from_items(std::move(kept), config_.kernel);

  TraceEvent ev;
  ev.kind = "prune";
  ev.iteration = iteration;
  std::ostringstream detail;
  detail << "kept=" << anchor_.size();
  if (sample.fallback) detail << " fallback=greedy";
  ev.detail = detail.str();
  record(std::move(ev));
}

std::vector<Explorer> Engine::select_beam(std::vector<Explorer> pool, int iteration) {
  if (static_cast<int>(pool.size()) <= config_.explorers) return pool;

  std::vector<int> chosen;
  if (config_.successor_selection == "random") {
    std::vector<int> idx(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) idx[i] = static_cast<int>(i);
    for (int i = 0; i < config_.explorers; ++i) {
      const std::size_t j = i + rng_() % (idx.size() - i);
      std::swap(idx[i], idx[j]);
      chosen.push_back(idx[i]);
    }
    std::sort(chosen.begin(), chosen.end());
  } else {
    // Explorer kernel: embedding-only RBF over the prompt embeddings,
    // bandwidth from the pool itself. Lexical overlap between prompt
    // variants is uninformative, so it is left out.
    std::vector<Embedding> embeddings;
    for (const auto& e : pool) embeddings.push_back(e.embedding);
    const double bandwidth = median_pairwise_distance(embeddings);
    const int n = static_cast<int>(pool.size());
    Eigen::MatrixXd entries(n, n);
    for (int i = 0; i < n; ++i) {
      entries(i, i) = 1.0;
      for (int j = i + 1; j < n; ++j) {
        const double s = rbf_similarity(pool[i].embedding, pool[j].embedding, bandwidth);
        entries(i, j) = s;
        entries(j, i) = s;
      }
    }
    const SimilarityMatrix kernel =
        SimilarityMatrix::from_entries(std::move(entries), config_.kernel.jitter);
    const DppSample sample = sample_k_dpp(kernel, config_.explorers, rng_());
    chosen = sample.indices;
  }

  std::vector<Explorer> beam;
  std::string ids;
  for (int idx : chosen) {
    ids += pool[idx].id + " ";
    beam.push_back(std::move(pool[idx]));
  }

  TraceEvent ev;
  ev.kind = "beam_select";
  ev.iteration = iteration;
  ev.detail = ids;
  record(std::move(ev));
  return beam;
}

RunResult Engine::run() {
  RunResult result;
  init_threshold();
  result.tau0 = schedule_.tau0;

  if (beam_.empty()) {
    Explorer seed;
    seed.id = next_explorer_id();
    seed.prompt = config_.task_prompt;
    seed.depth = 0;
    seed.embedding = gateway_.embed({seed.prompt})[0];
    beam_.push_back(std::move(seed));
  }

  RunStatus status = RunStatus::budget_exhausted;
  while (iteration_ < config_.max_iterations) {
    const double tau = schedule_.at(iteration_);
    std::vector<Explorer> successor_pool;

    for (const auto& explorer : beam_) {
      if (static_cast<int>(dataset_.size()) >= config_.target_size) break;
      ExploreOutcome outcome;
      try {
        outcome = explore(explorer, tau, config_.target_size - static_cast<int>(dataset_.size()));
      } catch (const ProviderError& err) {
        TraceEvent ev;
        ev.kind = "generate";
        ev.iteration = iteration_;
        ev.explorer_id = explorer.id;
        ev.detail = std::string("skipped: ") + err.what();
        record(std::move(ev));
        continue;
      }

      for (auto& w : outcome.accepted) dataset_.push_back(std::move(w));
      if (outcome.batch_size > 0)
        rejection_trace_.push_back(static_cast<double>(outcome.rejected_texts.size()) /
                                   static_cast<double>(outcome.batch_size));
      for (auto& s : outcome.successors) successor_pool.push_back(std::move(s));

      anchor_ = std::move(outcome.augmented);
      prune_anchor(iteration_);
    }

    if (static_cast<int>(dataset_.size()) >= config_.target_size) {
      status = RunStatus::completed;
      ++iteration_;
      break;
    }

    if (!successor_pool.empty())
      beam_ = select_beam(std::move(successor_pool), iteration_);
    // An empty pool keeps the previous beam: retrying the same explorer
    // still draws fresh batches from the provider.

    ++iteration_;
    maybe_snapshot();
  }

  result.dataset = dataset_;
  result.status = status;
  result.iterations_used = iteration_;
  result.resolved_kernel = config_.kernel;
  result.ledger = gateway_.ledger();
  result.report = compute_report(dataset_, config_.kernel, result.ledger);
  result.rejection_trace = rejection_trace_;
  result.trace = trace_;
  return result;
}

void Engine::maybe_snapshot() {
  if (config_.snapshot_every <= 0 || config_.snapshot_path.empty()) return;
  if (iteration_ % config_.snapshot_every != 0) return;
  atomic_write_file(config_.snapshot_path, snapshot().dump(2));
}

namespace {

nlohmann::json embedding_to_json(const Embedding& e) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < e.dim(); ++i) arr.push_back(e.values(i));
  return arr;
}

Embedding embedding_from_json(const nlohmann::json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<int>(i)) = arr[i].get<double>();
  return Embedding{std::move(v)};  // already unit norm when serialized
}

}  // namespace

nlohmann::json Engine::snapshot() const {
  nlohmann::json snap;
  snap["version"] = 1;
  snap["fingerprint"] = fnv1a(config_.task_prompt) ^ (config_.seed * 1000003ull) ^
                        static_cast<std::uint64_t>(config_.target_size) ^
                        (static_cast<std::uint64_t>(config_.max_iterations) << 32);
  snap["iteration"] = iteration_;
  snap["instance_counter"] = instance_counter_;
  snap["explorer_counter"] = explorer_counter_;
  snap["tau0"] = schedule_.tau0;
  snap["tau_initialized"] = tau_initialized_;
  snap["bandwidth"] =
      config_.kernel.rbf_bandwidth ? nlohmann::json(*config_.kernel.rbf_bandwidth)
                                   : nlohmann::json();
  snap["rng"] = rng_state_string(rng_);
  snap["rejection_trace"] = rejection_trace_;

  nlohmann::json dataset = nlohmann::json::array();
  for (const auto& d : dataset_) {
    dataset.push_back({{"id", d.id},
                       {"text", d.text},
                       {"explorer_id", d.explorer_id},
                       {"iteration", d.iteration},
                       {"marginal_gain", d.marginal_gain},
                       {"embedding", embedding_to_json(d.embedding)}});
  }
  snap["dataset"] = std::move(dataset);

  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& item : anchor_.items()) anchors.push_back(item.id);
  snap["anchor_ids"] = std::move(anchors);

  nlohmann::json beam = nlohmann::json::array();
  for (const auto& e : beam_) {
    nlohmann::json je = {{"id", e.id},
                         {"prompt", e.prompt},
                         {"depth", e.depth},
                         {"embedding", embedding_to_json(e.embedding)}};
    if (e.parent_id) je["parent_id"] = *e.parent_id;
    beam.push_back(std::move(je));
  }
  snap["beam"] = std::move(beam);

  const LedgerSnapshot ledger = gateway_.ledger();
  snap["ledger"] = {{"generate", ledger.generate},
                    {"gradient_get", ledger.gradient_get},
                    {"gradient_apply", ledger.gradient_apply},
                    {"judge", ledger.judge},
                    {"embed", ledger.embed},
                    {"probe", ledger.probe},
                    {"total_tokens", ledger.total_tokens}};
  snap["provider"] = gateway_.provider().state();
  return snap;
}

void Engine::restore(const nlohmann::json& snap) {
  const std::uint64_t fingerprint = fnv1a(config_.task_prompt) ^ (config_.seed * 1000003ull) ^
                                    static_cast<std::uint64_t>(config_.target_size) ^
                                    (static_cast<std::uint64_t>(config_.max_iterations) << 32);
  if (snap.at("fingerprint").get<std::uint64_t>() != fingerprint)
    throw std::runtime_error("snapshot does not match this configuration");

  iteration_ = snap.at("iteration").get<int>();
  instance_counter_ = snap.at("instance_counter").get<std::uint64_t>();
  explorer_counter_ = snap.at("explorer_counter").get<std::uint64_t>();
  schedule_.tau0 = snap.at("tau0").get<double>();
  tau_initialized_ = snap.at("tau_initialized").get<bool>();
  if (!snap.at("bandwidth").is_null())
    config_.kernel.rbf_bandwidth = snap.at("bandwidth").get<double>();
  bandwidth_resolved_ = config_.kernel.rbf_bandwidth.has_value();
  rng_restore_state(rng_, snap.at("rng").get<std::string>());
  rejection_trace_ = snap.at("rejection_trace").get<std::vector<double>>();

  dataset_.clear();
  for (const auto& jd : snap.at("dataset")) {
    DataInstance d;
    d.id = jd.at("id").get<std::string>();
    d.text = jd.at("text").get<std::string>();
    d.explorer_id = jd.at("explorer_id").get<std::string>();
    d.iteration = jd.at("iteration").get<int>();
    d.marginal_gain = jd.at("marginal_gain").get<double>();
    d.embedding = embedding_from_json(jd.at("embedding"));
    d.tokens = tokenize(d.text, config_.stopwords);
    dataset_.push_back(std::move(d));
  }

  std::vector<DataInstance> anchor_items;
  for (const auto& id : snap.at("anchor_ids")) {
    const std::string want = id.get<std::string>();
    for (const auto& d : dataset_)
      if (d.id == want) {
        anchor_items.push_back(d);
        break;
      }
  }
  anchor_ = anchor_items.empty() ? AnchorState(config_.kernel)
                                 : AnchorState::from_items(std::move(anchor_items), config_.kernel);

  beam_.clear();
  for (const auto& je : snap.at("beam")) {
    Explorer e;
    e.id = je.at("id").get<std::string>();
    e.prompt = je.at("prompt").get<std::string>();
    e.depth = je.at("depth").get<int>();
    if (je.contains("parent_id")) e.parent_id = je.at("parent_id").get<std::string>();
    e.embedding = embedding_from_json(je.at("embedding"));
    beam_.push_back(std::move(e));
  }

  LedgerSnapshot ledger;
  ledger.generate = snap.at("ledger").at("generate").get<std::uint64_t>();
  ledger.gradient_get = snap.at("ledger").at("gradient_get").get<std::uint64_t>();
  ledger.gradient_apply = snap.at("ledger").at("gradient_apply").get<std::uint64_t>();
  ledger.judge = snap.at("ledger").at("judge").get<std::uint64_t>();
  ledger.embed = snap.at("ledger").at("embed").get<std::uint64_t>();
  ledger.probe = snap.at("ledger").at("probe").get<std::uint64_t>();
  ledger.total_tokens = snap.at("ledger").at("total_tokens").get<std::uint64_t>();
  gateway_.restore_ledger(ledger);
  gateway_.provider().restore_state(snap.at("provider"));
}

}  // namespace divgen
