#include "divgen/mock_provider.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "divgen/rng.hpp"
#include "divgen/text.hpp"

namespace divgen {

namespace {

struct ClusterBank {
  const char* marker;
  const char* fixed1;
  const char* fixed2;
  const char* adjectives[6];  // the first kSubclusters double as subcluster markers
  const char* verbs[6];
  const char* nouns[6];
};

// Each cluster splits into subclusters around its center, giving marginal
// gains a spread of values instead of a single duplicate-vs-new step.
constexpr int kSubclusters = 4;
constexpr double kSubclusterSpread = 0.35;

// Disjoint vocabularies per cluster so cross-cluster lexical overlap stays
// near zero while same-cluster texts share the marker and fixed words.
const ClusterBank kBanks[16] = {
    {"tide", "saltwater", "cove",
     {"briny", "foaming", "silvered", "restless", "moonlit", "gleaming"},
     {"washes", "carries", "swells", "churns", "laps", "drifts"},
     {"driftwood", "seafoam", "gulls", "shoals", "kelp", "breakers"}},
    {"ember", "hearth", "ash",
     {"glowing", "crackling", "smoldering", "ruddy", "flickering", "scorching"},
     {"kindles", "ignites", "warms", "sparks", "burns", "sears"},
     {"cinders", "flames", "coals", "soot", "torches", "bonfires"}},
    {"glacier", "icefield", "crevasse",
     {"frozen", "pallid", "ancient", "crystalline", "creeping", "towering"},
     {"carves", "grinds", "cracks", "descends", "calves", "freezes"},
     {"moraines", "icicles", "snowpack", "bergs", "rime", "cornices"}},
    {"meadow", "clover", "pasture",
     {"blooming", "dewy", "verdant", "sunlit", "fragrant", "untamed"},
     {"sways", "blossoms", "rustles", "ripens", "sprouts", "flourishes"},
     {"wildflowers", "bumblebees", "grasses", "larks", "thistles", "daisies"}},
    {"circuit", "voltage", "solder",
     {"humming", "copper", "printed", "logical", "digital", "wired"},
     {"computes", "switches", "amplifies", "oscillates", "routes", "encodes"},
     {"resistors", "capacitors", "diodes", "transistors", "relays", "microchips"}},
    {"comet", "orbit", "nebula",
     {"streaking", "icy", "luminous", "distant", "elliptical", "cosmic"},
     {"blazes", "arcs", "tumbles", "approaches", "outshines", "vanishes"},
     {"meteors", "stardust", "plasma", "asteroids", "auroras", "perihelion"}},
    {"harbor", "wharf", "mooring",
     {"sheltered", "bustling", "foggy", "tarred", "barnacled", "weathered"},
     {"docks", "unloads", "shelters", "creaks", "rocks", "welcomes"},
     {"trawlers", "cranes", "piers", "buoys", "cargo", "jetties"}},
    {"dune", "oasis", "mirage",
     {"windswept", "golden", "shifting", "arid", "sunbaked", "endless"},
     {"ripples", "buries", "shimmers", "migrates", "whistles", "erodes"},
     {"camels", "scarabs", "sandstone", "sagebrush", "tumbleweed", "canyons"}},
    {"lantern", "wick", "lamplight",
     {"dim", "amber", "swinging", "papered", "festive", "steady"},
     {"glimmers", "illuminates", "dangles", "flares", "beckons", "glows"},
     {"candles", "fireflies", "vigils", "festivals", "processions", "streetlamps"}},
    {"moss", "undergrowth", "lichen",
     {"damp", "emerald", "velvety", "creeping", "shaded", "dense"},
     {"blankets", "clings", "spreads", "cushions", "thrives", "carpets"},
     {"ferns", "toadstools", "burrows", "snails", "canopies", "mushrooms"}},
    {"quartz", "geode", "lode",
     {"faceted", "translucent", "rosy", "buried", "prismatic", "jagged"},
     {"refracts", "glitters", "hardens", "crystallizes", "embeds", "fractures"},
     {"miners", "caverns", "crystals", "bedrock", "stalactites", "seams"}},
    {"thunder", "stormfront", "downpour",
     {"rolling", "deafening", "electric", "sudden", "brooding", "violent"},
     {"rumbles", "splits", "echoes", "shakes", "crashes", "booms"},
     {"lightning", "squalls", "gusts", "hailstones", "cloudbursts", "gales"}},
    {"loom", "spindle", "weft",
     {"threaded", "patterned", "woolen", "dyed", "patient", "taut"},
     {"weaves", "binds", "stitches", "spins", "knots", "unravels"},
     {"tapestries", "bobbins", "shuttles", "fibers", "quilts", "skeins"}},
    {"orchard", "cider", "grafting",
     {"laden", "mellow", "gnarled", "ripe", "orderly", "windfallen"},
     {"bears", "sweetens", "sheds", "yields", "matures", "perfumes"},
     {"apples", "beehives", "ladders", "baskets", "plums", "rootstocks"}},
    {"foundry", "ingot", "crucible",
     {"molten", "soot-black", "roaring", "tempered", "heavy", "glinting"},
     {"pours", "casts", "forges", "quenches", "hammers", "anneals"},
     {"anvils", "billets", "furnaces", "molds", "slag", "tongs"}},
    {"archive", "vellum", "catalog",
     {"dusty", "bound", "annotated", "brittle", "indexed", "forgotten"},
     {"preserves", "records", "shelves", "restores", "classifies", "reveals"},
     {"manuscripts", "ledgers", "folios", "stamps", "scrolls", "registries"}},
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// First integer after `key` in the text, if any.
std::optional<int> int_after(const std::string& text, const std::string& key) {
  const std::size_t pos = text.find(key);
  if (pos == std::string::npos) return std::nullopt;
  std::size_t i = pos + key.size();
  while (i < text.size() && !std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  if (i == text.size()) return std::nullopt;
  std::size_t end = i;
  while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
  return std::stoi(text.substr(i, end - i));
}

std::string quoted_after(const std::string& text, const std::string& key) {
  const std::size_t pos = text.find(key);
  if (pos == std::string::npos) return {};
  const std::size_t open = text.find('"', pos);
  if (open == std::string::npos) return {};
  const std::size_t close = text.find('"', open + 1);
  if (close == std::string::npos) return {};
  return text.substr(open + 1, close - open - 1);
}

}  // namespace

void MockWorldConfig::validate() const {
  if (clusters < 2 || clusters > 16)
    throw std::invalid_argument("mock world: clusters must be in [2, 16]");
  if (embedding_dim < clusters)
    throw std::invalid_argument("mock world: embedding_dim must be >= clusters");
  if (concentration < 0.0 || concentration > 1.0)
    throw std::invalid_argument("mock world: concentration must be in [0, 1]");
  if (noise <= 0.0) throw std::invalid_argument("mock world: noise must be positive");
}

MockProvider::MockProvider(MockWorldConfig config) : config_(config) { config_.validate(); }

int MockProvider::cluster_of(const std::string& text) const {
  const TokenSet tokens = tokenize(text, {});
  for (int c = 0; c < config_.clusters; ++c)
    if (tokens.count(kBanks[c].marker)) return c;
  return -1;
}

std::string MockProvider::marker(int cluster) const { return kBanks[cluster].marker; }

std::vector<double> MockProvider::cluster_weights(const std::string& prompt,
                                                  double temperature) const {
  const int n = config_.clusters;
  const std::string low = lower(prompt);
  const std::size_t avoid_pos = low.find("avoid");

  std::vector<double> base(n, (1.0 - config_.concentration) / n);
  base[0] += config_.concentration;

  // Marker mentions before any "avoid" steer toward a cluster; mentions
  // after it steer away (the history baseline's avoid-list).
  std::vector<int> focus;
  std::vector<bool> suppress(n, false);
  for (int c = 0; c < n; ++c) {
    const std::string m = kBanks[c].marker;
    std::size_t pos = low.find(m);
    while (pos != std::string::npos) {
      if (avoid_pos != std::string::npos && pos > avoid_pos)
        suppress[c] = true;
      else
        focus.push_back(c);
      pos = low.find(m, pos + m.size());
    }
  }

  std::vector<double> w = base;
  if (!focus.empty()) {
    std::vector<double> f(n, 0.0);
    for (int c : focus) f[c] += 1.0 / static_cast<double>(focus.size());
    for (int c = 0; c < n; ++c) w[c] = 0.8 * f[c] + 0.2 * base[c];
  }
  for (int c = 0; c < n; ++c)
    if (suppress[c]) w[c] *= 0.15;

  if (low.find("diverse") != std::string::npos)
    for (int c = 0; c < n; ++c) w[c] = 0.5 * w[c] + 0.5 / n;

  if (temperature > 0.0 && std::abs(temperature - 1.0) > 1e-12) {
    const double inv = 1.0 / std::max(temperature, 0.05);
    for (double& x : w) x = std::pow(x, inv);
  }

  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return w;
}

std::string MockProvider::phrase(int cluster, std::mt19937_64& rng) const {
  const ClusterBank& bank = kBanks[cluster];
  const auto pick = [&rng](const char* const (&words)[6]) {
    return words[rng() % 6];
  };
  const int sub = static_cast<int>(rng() % kSubclusters);
  std::ostringstream os;
  os << "In the " << bank.fixed1 << " of the " << bank.fixed2 << ", the "
     << bank.adjectives[sub] << " " << bank.marker << " " << pick(bank.verbs) << " the "
     << pick(bank.nouns) << ".";
  return os.str();
}

std::string MockProvider::chat(const ChatRequest& request) {
  std::lock_guard<std::mutex> lock(mutex_);
  const std::string& user = request.user;
  if (user.find("Return the Overall score") != std::string::npos) return respond_judge(request);
  if (user.find("Wrap each gradient with") != std::string::npos) return respond_gradients(request);
  if (user.find("Wrap each improved prompt") != std::string::npos) return respond_apply(request);
  if (user.find("subtopics") != std::string::npos ||
      request.system.find("subtopics") != std::string::npos)
    return respond_subtopics(request);
  return respond_batch(request);
}

std::string MockProvider::respond_batch(const ChatRequest& request) {
  const std::string key = request.system + "\n\x1f\n" + request.user;
  const std::uint64_t prompt_hash = fnv1a(key);
  const std::uint64_t call_index = prompt_calls_[prompt_hash]++;
  std::mt19937_64 rng(mix_seed(config_.seed, mix_seed(prompt_hash, call_index)));

  const int batch = int_after(request.system, "Return exactly")
                        .value_or(int_after(request.user, "Return exactly").value_or(10));
  const std::vector<double> weights = cluster_weights(request.system + "\n" + request.user,
                                                      request.temperature);
  std::ostringstream os;
  for (int i = 0; i < batch; ++i) {
    const int cluster = static_cast<int>(sample_index(rng, weights));
    os << (i + 1) << ". " << phrase(cluster, rng) << "\n";
  }
  return os.str();
}

std::string MockProvider::respond_subtopics(const ChatRequest& request) {
  // A real model keeps proposing the same popular subtopics; the mock
  // mirrors that with a fixed list.
  const int count = int_after(request.system, "Return exactly")
                        .value_or(int_after(request.user, "Return exactly").value_or(10));
  std::ostringstream os;
  for (int i = 0; i < count; ++i) {
    const ClusterBank& bank = kBanks[i % config_.clusters];
    os << (i + 1) << ". " << bank.marker << " " << bank.fixed1 << " scenes\n";
  }
  return os.str();
}

std::string MockProvider::respond_gradients(const ChatRequest& request) {
  const int wanted = int_after(request.user, "provide \"").value_or(3);

  // Coverage counts from every marker mention in the critique request
  // (rejected outputs plus existing samples).
  const std::string low = lower(request.user);
  std::vector<std::pair<int, int>> mentions;  // (count, cluster)
  int overused = 0;
  int max_count = -1;
  for (int c = 0; c < config_.clusters; ++c) {
    int count = 0;
    const std::string m = kBanks[c].marker;
    std::size_t pos = low.find(m);
    while (pos != std::string::npos) {
      ++count;
      pos = low.find(m, pos + m.size());
    }
    mentions.push_back({count, c});
    if (count > max_count) {
      max_count = count;
      overused = c;
    }
  }
  std::stable_sort(mentions.begin(), mentions.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::ostringstream os;
  os << "The generated outputs crowd into territory the dataset already covers.\n";
  for (int i = 0; i < wanted && i < static_cast<int>(mentions.size()); ++i) {
    const ClusterBank& target = kBanks[mentions[i].second];
    os << "<START>The prompt keeps returning " << kBanks[overused].marker
       << " material already present in the set; steer generation toward the " << target.marker
       << " territory instead.<END>\n";
  }
  return os.str();
}

std::string MockProvider::respond_apply(const ChatRequest& request) {
  const std::string task = quoted_after(request.user, "Current system prompt:");
  std::ostringstream os;

  // One successor per "toward the X territory" direction in the gradients.
  const std::string key = "toward the ";
  std::size_t pos = request.user.find(key);
  while (pos != std::string::npos) {
    std::size_t begin = pos + key.size();
    std::size_t end = request.user.find(' ', begin);
    if (end == std::string::npos) break;
    const std::string target = request.user.substr(begin, end - begin);
    for (int c = 0; c < config_.clusters; ++c) {
      if (target == kBanks[c].marker) {
        os << "<START>" << task << " Focus on " << kBanks[c].marker << " scenes with "
           << kBanks[c].fixed1 << " and " << kBanks[c].fixed2 << " details.<END>\n";
        break;
      }
    }
    pos = request.user.find(key, pos + key.size());
  }
  return os.str();
}

std::string MockProvider::respond_judge(const ChatRequest& request) {
  const int max_score = int_after(request.user, "(0-").value_or(25);
  const std::uint64_t h = mix_seed(fnv1a(request.user), fnv1a(request.model));
  const int span = std::max(max_score / 4, 1);
  const int score = max_score - static_cast<int>(h % static_cast<std::uint64_t>(span));
  std::ostringstream os;
  os << "Analysis: the instance satisfies the rubric dimensions.\n"
     << "Overall: " << score << "\n<START>" << score << "<END>\n";
  return os.str();
}

std::vector<Eigen::VectorXd> MockProvider::embed(const std::vector<std::string>& texts,
                                                 const std::string&) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto unit_gaussian = [this](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Eigen::VectorXd g(config_.embedding_dim);
    for (int i = 0; i < config_.embedding_dim; ++i) g(i) = gaussian(rng);
    g.normalize();
    return g;
  };

  std::vector<Eigen::VectorXd> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    const int cluster = cluster_of(text);
    Eigen::VectorXd v;
    if (cluster >= 0) {
      v = Eigen::VectorXd::Zero(config_.embedding_dim);
      v(cluster) = 1.0;
      // Subcluster offset when the text carries a subcluster word.
      const TokenSet tokens = tokenize(text, {});
      for (int s = 0; s < kSubclusters; ++s) {
        if (tokens.count(kBanks[cluster].adjectives[s])) {
          v += kSubclusterSpread *
               unit_gaussian(mix_seed(config_.seed, 7919ull * cluster + s + 1));
          break;
        }
      }
      v += config_.noise * unit_gaussian(mix_seed(config_.seed, fnv1a(text)));
    } else {
      v = unit_gaussian(mix_seed(config_.seed, fnv1a(text)));  // off-world: hash direction
    }
    v.normalize();
    out.push_back(std::move(v));
  }
  return out;
}

nlohmann::json MockProvider::state() const {
  std::lock_guard<std::mutex> lock(mutex_);
  nlohmann::json counters = nlohmann::json::object();
  for (const auto& [hash, count] : prompt_calls_) counters[std::to_string(hash)] = count;
  return nlohmann::json{{"prompt_calls", counters}};
}

void MockProvider::restore_state(const nlohmann::json& state) {
  std::lock_guard<std::mutex> lock(mutex_);
  prompt_calls_.clear();
  if (!state.contains("prompt_calls")) return;
  for (const auto& [key, value] : state.at("prompt_calls").items())
    prompt_calls_[std::stoull(key)] = value.get<std::uint64_t>();
}

}  // namespace divgen
