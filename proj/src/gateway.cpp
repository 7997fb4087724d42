#include "divgen/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace divgen {

void ProviderConfig::validate() const {
  if (kind != "mock" && kind != "http")
    throw std::invalid_argument("provider.kind must be 'mock' or 'http'");
  if (temperature < 0.0) throw std::invalid_argument("provider.temperature must be >= 0");
  if (max_retries < 0) throw std::invalid_argument("provider.max_retries must be >= 0");
  if (max_concurrent_requests < 1)
    throw std::invalid_argument("provider.max_concurrent_requests must be >= 1");
}

nlohmann::json Provider::state() const { return nlohmann::json::object(); }
void Provider::restore_state(const nlohmann::json&) {}

void CallLedger::add(Category cat, std::uint64_t n) {
  switch (cat) {
    case Category::generate: generate_ += n; break;
    case Category::gradient_get: gradient_get_ += n; break;
    case Category::gradient_apply: gradient_apply_ += n; break;
    case Category::judge: judge_ += n; break;
    case Category::embed: embed_ += n; break;
    case Category::probe: probe_ += n; break;
  }
}

LedgerSnapshot CallLedger::snapshot() const {
  LedgerSnapshot s;
  s.generate = generate_.load();
  s.gradient_get = gradient_get_.load();
  s.gradient_apply = gradient_apply_.load();
  s.judge = judge_.load();
  s.embed = embed_.load();
  s.probe = probe_.load();
  s.total_tokens = total_tokens_.load();
  return s;
}

void CallLedger::restore(const LedgerSnapshot& snap) {
  generate_ = snap.generate;
  gradient_get_ = snap.gradient_get;
  gradient_apply_ = snap.gradient_apply;
  judge_ = snap.judge;
  embed_ = snap.embed;
  probe_ = snap.probe;
  total_tokens_ = snap.total_tokens;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// "1. text" or "12) text" -> text, otherwise nullopt.
std::optional<std::string> strip_list_number(const std::string& line) {
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == 0 || i >= line.size()) return std::nullopt;
  if (line[i] != '.' && line[i] != ')') return std::nullopt;
  return trim(std::string_view(line).substr(i + 1));
}

}  // namespace

std::string batch_system_prompt(const std::string& task_prompt, int batch_size) {
  std::ostringstream os;
  os << "You generate synthetic text data instances.\n"
     << "Return exactly " << batch_size
     << " items as a numbered list, one item per line, in the form '1. <text>'.\n"
     << "Task: " << task_prompt;
  return os.str();
}

std::string subtopic_system_prompt(const std::string& task_prompt, int count) {
  std::ostringstream os;
  os << "You propose subtopics for a data generation task.\n"
     << "Return exactly " << count << " items as a numbered list, one item per line.\n"
     << "Task: " << task_prompt;
  return os.str();
}

std::vector<std::string> parse_instance_list(const std::string& response) {
  std::vector<std::string> numbered;
  std::vector<std::string> blocks;
  std::string block;
  std::istringstream in(response);
  std::string line;
  auto flush_block = [&] {
    std::string t = trim(block);
    if (!t.empty()) blocks.push_back(std::move(t));
    block.clear();
  };
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) {
      flush_block();
      continue;
    }
    if (auto item = strip_list_number(t); item && !item->empty()) {
      numbered.push_back(*item);
    }
    block += t;
    block += '\n';
  }
  flush_block();
  return numbered.empty() ? blocks : numbered;
}

std::vector<std::string> parse_tagged_spans(const std::string& response) {
  static const std::string kStart = "<START>";
  static const std::string kEnd = "<END>";
  std::vector<std::string> spans;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = response.find(kStart, pos);
    if (open == std::string::npos) break;
    // Find the END matching this START, counting nested opens.
    std::size_t depth = 1;
    std::size_t cursor = open + kStart.size();
    std::size_t close = std::string::npos;
    while (depth > 0) {
      const std::size_t next_open = response.find(kStart, cursor);
      const std::size_t next_close = response.find(kEnd, cursor);
      if (next_close == std::string::npos) break;
      if (next_open != std::string::npos && next_open < next_close) {
        ++depth;
        cursor = next_open + kStart.size();
      } else {
        --depth;
        cursor = next_close + kEnd.size();
        if (depth == 0) close = next_close;
      }
    }
    if (close == std::string::npos) break;
    spans.push_back(trim(response.substr(open + kStart.size(), close - open - kStart.size())));
    pos = cursor;
  }
  return spans;
}

std::optional<int> parse_tagged_score(const std::string& response) {
  for (const auto& span : parse_tagged_spans(response)) {
    std::size_t i = 0;
    while (i < span.size() && !std::isdigit(static_cast<unsigned char>(span[i]))) ++i;
    if (i == span.size()) continue;
    std::size_t end = i;
    while (end < span.size() && std::isdigit(static_cast<unsigned char>(span[end]))) ++end;
    return std::stoi(span.substr(i, end - i));
  }
  return std::nullopt;
}

Gateway::Gateway(std::shared_ptr<Provider> provider, ProviderConfig config)
    : provider_(std::move(provider)), config_(std::move(config)) {
  config_.validate();
}

std::string Gateway::chat_with_retry(const ChatRequest& request) {
  int attempt = 0;
  while (true) {
    try {
      return provider_->chat(request);
    } catch (const ProviderError& err) {
      if (!err.retryable() || attempt >= config_.max_retries) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(100LL << attempt));
      ++attempt;
    }
  }
}

GenerationBatch Gateway::generate_batch(const std::string& system_prompt,
                                        const std::string& user_prompt, int batch_size,
                                        std::optional<double> temperature,
                                        CallLedger::Category category) {
  if (batch_size < 1) throw std::invalid_argument("generate_batch: batch_size must be >= 1");
  ChatRequest req;
  req.system = system_prompt;
  req.user = user_prompt;
  req.temperature = temperature.value_or(config_.temperature);
  req.model = config_.model;

  GenerationBatch batch;
  batch.raw_response = chat_with_retry(req);
  // One ledger increment per logical call, however many transport retries.
  ledger_.add(category);
  ledger_.add_tokens(provider_->last_call_tokens());

  batch.instances = parse_instance_list(batch.raw_response);
  if (batch.instances.empty())
    throw ProviderError("generate_batch: no parseable instances in response: " +
                        batch.raw_response.substr(0, 400));
  if (static_cast<int>(batch.instances.size()) > batch_size)
    batch.instances.resize(batch_size);
  if (static_cast<int>(batch.instances.size()) < batch_size) {
    std::ostringstream warn;
    warn << "under-delivery: got " << batch.instances.size() << " of " << batch_size;
    batch.warnings.push_back(warn.str());
  }
  return batch;
}

std::vector<Embedding> Gateway::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw std::invalid_argument("embed: empty text list");
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t offset = 0; offset < texts.size(); offset += embed_batch_size) {
    const std::size_t count = std::min<std::size_t>(embed_batch_size, texts.size() - offset);
    std::vector<std::string> chunk(texts.begin() + offset, texts.begin() + offset + count);
    std::vector<Eigen::VectorXd> raw = provider_->embed(chunk, config_.embedding_model);
    ledger_.add(CallLedger::Category::embed);
    ledger_.add_tokens(provider_->last_call_tokens());
    if (raw.size() != chunk.size())
      throw ProviderError("embed: provider returned wrong vector count");
    for (auto& v : raw) {
      Embedding e = Embedding::normalized(std::move(v));
      if (embedding_dim_ == 0) embedding_dim_ = e.dim();
      if (e.dim() != embedding_dim_)
        throw ProviderError("embed: embedding dimension drift within a run");
      out.push_back(std::move(e));
    }
  }
  return out;
}

namespace {

std::string join_quoted(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out += "- ";
    out += xs[i];
    if (i + 1 < xs.size()) out += '\n';
  }
  return out;
}

}  // namespace

std::vector<std::string> Gateway::get_gradients(const std::string& task_prompt,
                                                const std::string& explorer_prompt,
                                                const std::vector<std::string>& rejected,
                                                const std::vector<std::string>& anchors,
                                                int num_feedbacks) {
  if (rejected.empty()) throw std::invalid_argument("get_gradients: rejected set is empty");

  std::ostringstream user;
  user << "I'm optimizing a data generation prompt using gradient-based feedback.\n\n"
       << "Current system prompt: \"" << task_prompt << "\"\n\n"
       << "Current user prompt: \"" << explorer_prompt << "\"\n\n"
       << "LLM generated outputs: \"\n" << join_quoted(rejected) << "\n\"\n\n"
       << "Existing data samples in the set: \"\n" << join_quoted(anchors) << "\n\"\n\n"
       << "The output was rejected because its diversity score with the existing samples is "
          "below the threshold.\n\n"
       << "Analyze this rejection and provide \"" << num_feedbacks
       << "\" reasons why the user prompt could have gotten this generated outputs to be less "
          "diverse with the existing data samples.\n\n"
       << "- What specific aspect or issue exists in the user prompt that is causing low "
          "diversity?\n"
       << "- Given the existing data samples, how should the user prompt be modified to "
          "encourage more diverse outputs?\n"
       << "- What linguistic patterns or constraints should be added/removed to encourage "
          "diversity?\n\n"
       << "Format each gradient direction as: \"[specific issue & improvement suggestion]\"\n\n"
       << "Wrap each gradient with <START> and <END> tags.";

  ChatRequest req;
  req.system = "You are a prompt optimization assistant.";
  req.user = user.str();
  req.temperature = config_.temperature;
  req.model = config_.model;

  const std::string response = chat_with_retry(req);
  ledger_.add(CallLedger::Category::gradient_get);
  ledger_.add_tokens(provider_->last_call_tokens());

  std::vector<std::string> spans = parse_tagged_spans(response);
  if (static_cast<int>(spans.size()) > num_feedbacks) spans.resize(num_feedbacks);
  return spans;
}

std::vector<std::string> Gateway::apply_gradients(const std::string& task_prompt,
                                                  const std::string& explorer_prompt,
                                                  const std::vector<std::string>& gradients) {
  if (gradients.empty()) throw std::invalid_argument("apply_gradients: no gradients");

  std::ostringstream user;
  user << "I'm optimizing a data generation prompt using gradient-based feedback.\n\n"
       << "Current system prompt: \"" << task_prompt << "\"\n\n"
       << "Current user prompt: \"" << explorer_prompt << "\"\n\n"
       << "Gradient analysis for improvement:\n\"\n" << join_quoted(gradients) << "\n\"\n\n"
       << "Based on this gradient feedback list, generate \"" << gradients.size()
       << "\" improved prompts and then project the improved prompts onto the \"" << task_prompt
       << "\".\n\n"
       << "The projection operation is a relevance operation that makes the improved prompt "
          "relevant to the system prompt.\n\n"
       << "Requirements:\n"
       << "- Each prompt should address a single gradient suggestion & then project onto the "
          "system prompt.\n"
       << "- Use positive language (what to generate, not what to avoid)\n"
       << "- Each prompt should be concise and clear\n"
       << "- Wrap each improved prompt with <START> and <END> tags";

  ChatRequest req;
  req.system = "You are a prompt optimization assistant.";
  req.user = user.str();
  req.temperature = config_.temperature;
  req.model = config_.model;

  const std::string response = chat_with_retry(req);
  ledger_.add(CallLedger::Category::gradient_apply);
  ledger_.add_tokens(provider_->last_call_tokens());
  return parse_tagged_spans(response);
}

std::string Gateway::judge(const std::string& filled_rubric, const std::string& model_id) {
  ChatRequest req;
  req.system = "You are a strict evaluator. Follow the rubric exactly.";
  req.user = filled_rubric;
  req.temperature = 0.0;
  req.model = model_id;
  const std::string response = chat_with_retry(req);
  ledger_.add(CallLedger::Category::judge);
  ledger_.add_tokens(provider_->last_call_tokens());
  return response;
}

QualitySummary judge_quality(std::span<const DataInstance> items, const std::string& rubric_template,
                             int max_score, const std::vector<std::string>& panel,
                             Gateway& gateway) {
  if (panel.empty()) throw std::invalid_argument("judge_quality: empty panel");
  QualitySummary summary;
  summary.max_score = max_score;

  std::vector<double> consensus;
  for (const auto& item : items) {
    std::string filled = rubric_template;
    const std::string placeholder = "{instance}";
    if (auto pos = filled.find(placeholder); pos != std::string::npos)
      filled.replace(pos, placeholder.size(), item.text);
    else
      filled += "\n\nInput:\n" + item.text;

    std::vector<double> scores;
    for (const auto& model : panel) {
      std::optional<int> score = parse_tagged_score(gateway.judge(filled, model));
      if (!score) {  // retry once, then skip this judge
        ++summary.parse_warnings;
        score = parse_tagged_score(gateway.judge(filled, model));
      }
      if (score) scores.push_back(static_cast<double>(*score));
    }
    if (scores.empty()) {
      ++summary.items_skipped;
      continue;
    }
    double sum = 0.0;
    for (double s : scores) sum += s;
    consensus.push_back(sum / static_cast<double>(scores.size()));
  }

  summary.items_scored = static_cast<int>(consensus.size());
  if (!consensus.empty()) {
    double sum = 0.0;
    for (double s : consensus) sum += s;
    summary.score.mean = sum / static_cast<double>(consensus.size());
    double ss = 0.0;
    for (double s : consensus) ss += (s - summary.score.mean) * (s - summary.score.mean);
    summary.score.stddev = std::sqrt(ss / static_cast<double>(consensus.size()));
  }
  return summary;
}

}  // namespace divgen
