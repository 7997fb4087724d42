#include <doctest.h>

#include <map>
#include <thread>
#include <set>

#include <json.hpp>

#include "divgen/gateway.hpp"
#include "divgen/mock_provider.hpp"
#include "divgen/text.hpp"

using namespace divgen;

namespace {

MockWorldConfig world(std::uint64_t seed = 7) {
  MockWorldConfig config;
  config.seed = seed;
  return config;
}

ChatRequest batch_request(const std::string& user, int n = 10, double temperature = 1.0) {
  ChatRequest req;
  req.system = "You generate synthetic text data instances.\nReturn exactly " +
               std::to_string(n) + " items as a numbered list.\nTask: " + user;
  req.user = user;
  req.temperature = temperature;
  return req;
}

std::map<int, int> cluster_histogram(MockProvider& provider, const std::string& prompt,
                                     int batches) {
  std::map<int, int> counts;
  for (int i = 0; i < batches; ++i) {
    const std::string response = provider.chat(batch_request(prompt));
    for (const auto& item : parse_instance_list(response)) counts[provider.cluster_of(item)]++;
  }
  return counts;
}

}  // namespace

TEST_CASE("mock world config validation") {
  MockWorldConfig bad = world();
  bad.clusters = 1;
  CHECK_THROWS_AS(MockProvider{bad}, std::invalid_argument);
  bad = world();
  bad.embedding_dim = 4;
  CHECK_THROWS_AS(MockProvider{bad}, std::invalid_argument);
  bad = world();
  bad.concentration = 1.5;
  CHECK_THROWS_AS(MockProvider{bad}, std::invalid_argument);
}

TEST_CASE("cluster vocabularies are disjoint") {
  MockProvider provider(world());
  // Sample widely, bucket tokens by the phrase's own cluster, and require
  // that no token shows up under two clusters.
  std::map<std::string, int> owner;
  for (int c = 0; c < provider.config().clusters; ++c) {
    ChatRequest req = batch_request("Focus on " + provider.marker(c) + " scenes.", 10);
    for (int rep = 0; rep < 30; ++rep) {
      for (const auto& item : parse_instance_list(provider.chat(req))) {
        const int item_cluster = provider.cluster_of(item);
        REQUIRE(item_cluster >= 0);
        for (const auto& tok : tokenize(item, default_stopwords())) {
          auto [it, inserted] = owner.emplace(tok, item_cluster);
          CAPTURE(tok);
          CHECK(it->second == item_cluster);
        }
      }
    }
  }
  CHECK(owner.size() > 100);  // the sweep actually touched the banks
}

TEST_CASE("fixed (config, prompt, seed) triple reproduces bytes") {
  MockProvider a(world(11));
  MockProvider b(world(11));
  const ChatRequest req = batch_request("Generate a sentence.");
  // First calls identical, and the per-prompt call streams stay in lockstep.
  for (int i = 0; i < 4; ++i) CHECK(a.chat(req) == b.chat(req));

  MockProvider c(world(12));  // different world seed diverges
  CHECK(a.chat(req) != c.chat(req));

  // Repeated calls advance the stream (fresh batches, no stalling).
  MockProvider d(world(11));
  CHECK(d.chat(req) != d.chat(req));
}

TEST_CASE("batch responses honor the requested size and parse cleanly") {
  MockProvider provider(world());
  const std::string response = provider.chat(batch_request("Generate a sentence.", 7));
  const auto items = parse_instance_list(response);
  CHECK(items.size() == 7);
  for (const auto& item : items) CHECK(provider.cluster_of(item) >= 0);
}

TEST_CASE("unrefined prompts collapse onto the default cluster") {
  MockProvider provider(world());
  const auto counts = cluster_histogram(provider, "Generate a sentence.", 50);
  int total = 0;
  for (const auto& [_, n] : counts) total += n;
  // concentration 0.75 -> roughly 77% cluster 0
  CHECK(counts.at(0) > total * 0.6);
}

TEST_CASE("focus directives steer generation toward the named cluster") {
  MockProvider provider(world());
  const std::string target = provider.marker(5);
  const auto counts = cluster_histogram(provider, "Focus on " + target + " scenes.", 50);
  int total = 0;
  for (const auto& [_, n] : counts) total += n;
  CHECK(counts.at(5) > total * 0.6);
}

TEST_CASE("avoid lists suppress the named clusters") {
  MockProvider provider(world());
  const std::string avoided = provider.marker(0);
  const auto counts = cluster_histogram(
      provider, "Generate a sentence.\nAvoid anything like these:\n- the " + avoided + " item",
      50);
  int total = 0;
  for (const auto& [_, n] : counts) total += n;
  const int suppressed = counts.count(0) ? counts.at(0) : 0;
  CHECK(suppressed < total * 0.4);
}

TEST_CASE("diverse keyword flattens the cluster distribution") {
  MockProvider provider(world());
  const auto base = cluster_histogram(provider, "Generate a sentence.", 60);
  const auto diverse =
      cluster_histogram(provider, "Generate a sentence. Make the outputs as diverse as possible.",
                        60);
  CHECK(diverse.at(0) < base.at(0));
  CHECK(diverse.size() >= base.size());
}

TEST_CASE("higher temperature flattens the cluster distribution") {
  MockProvider provider(world());
  std::map<int, int> hot;
  for (int i = 0; i < 60; ++i) {
    const std::string response =
        provider.chat(batch_request("Generate a sentence.", 10, /*temperature=*/2.0));
    for (const auto& item : parse_instance_list(response)) hot[provider.cluster_of(item)]++;
  }
  const auto base = cluster_histogram(provider, "Generate a sentence.", 60);
  CHECK(hot.at(0) < base.at(0));
}

TEST_CASE("embeddings are deterministic and cluster-aware") {
  MockProvider provider(world());
  const std::string batch = provider.chat(batch_request("Focus on " + provider.marker(2), 10));
  const auto items = parse_instance_list(batch);
  REQUIRE(items.size() >= 2);

  const auto first = provider.embed({items[0]}, "m");
  const auto again = provider.embed({items[0]}, "m");
  CHECK(first[0] == again[0]);

  // same-cluster pair closer than cross-cluster pair
  const std::string other = parse_instance_list(
      provider.chat(batch_request("Focus on " + provider.marker(9), 10)))[0];
  const auto trio = provider.embed({items[0], items[1], other}, "m");
  const double same = trio[0].dot(trio[1]);
  const double cross = trio[0].dot(trio[2]);
  CHECK(same > cross);
  CHECK(same > 0.8);
  CHECK(cross < 0.3);
}

TEST_CASE("off-world text still embeds deterministically") {
  MockProvider provider(world());
  const auto a = provider.embed({"completely unrelated words here"}, "m");
  const auto b = provider.embed({"completely unrelated words here"}, "m");
  CHECK(a[0] == b[0]);
  CHECK(a[0].norm() == doctest::Approx(1.0));
}

TEST_CASE("subtopic requests return a fixed numbered topic list") {
  MockProvider provider(world());
  ChatRequest req;
  req.system = "You propose subtopics.\nReturn exactly 10 items as a numbered list.";
  req.user = "List diverse subtopics to cover.";
  const auto topics = parse_instance_list(provider.chat(req));
  CHECK(topics.size() == 10);
  std::set<int> clusters;
  for (const auto& topic : topics) clusters.insert(provider.cluster_of(topic));
  CHECK(clusters.size() == 10);
  // fixed list: a second round proposes the same topics
  CHECK(parse_instance_list(provider.chat(req)) == topics);
}

TEST_CASE("gradient critique names under-covered clusters and apply steers away") {
  MockProvider provider(world(21));
  Gateway gateway(std::make_shared<MockProvider>(world(21)), ProviderConfig{});

  // Rejected + anchors all in cluster 0; gradients should target elsewhere.
  const std::string c0 = provider.marker(0);
  const auto gradients = gateway.get_gradients(
      "Generate a sentence.", "Generate a sentence.",
      {"the " + c0 + " item one", "the " + c0 + " item two"}, {"the " + c0 + " anchor"}, 3);
  REQUIRE(gradients.size() == 3);

  const auto successors =
      gateway.apply_gradients("Generate a sentence.", "Generate a sentence.", gradients);
  REQUIRE(successors.size() == 3);

  std::set<int> targets;
  for (const auto& prompt : successors) {
    CHECK(prompt.find("Generate a sentence.") != std::string::npos);
    const int target = provider.cluster_of(prompt);
    CHECK(target > 0);  // never the over-covered cluster
    targets.insert(target);
  }
  CHECK(targets.size() == 3);  // three distinct directions
}

TEST_CASE("successor prompts steer the distribution away from gradient-named clusters") {
  // 1000 seeded generations: the over-represented cluster drops from
  // dominant to minor once the successor focus kicks in.
  MockProvider provider(world(33));
  Gateway gateway(std::make_shared<MockProvider>(world(33)), ProviderConfig{});
  const std::string c0 = provider.marker(0);
  const auto gradients =
      gateway.get_gradients("Generate a sentence.", "Generate a sentence.",
                            {"the " + c0 + " repeat"}, {"the " + c0 + " anchor"}, 1);
  REQUIRE(!gradients.empty());
  CHECK(gradients[0].find(c0) != std::string::npos);  // names the overused cluster
  const auto successors =
      gateway.apply_gradients("Generate a sentence.", "Generate a sentence.", gradients);
  REQUIRE(!successors.empty());

  const auto before = cluster_histogram(provider, "Generate a sentence.", 100);
  const auto after = cluster_histogram(provider, successors[0], 100);
  int total_before = 0, total_after = 0;
  for (const auto& [_, n] : before) total_before += n;
  for (const auto& [_, n] : after) total_after += n;
  const double frac_before = static_cast<double>(before.at(0)) / total_before;
  const double frac_after =
      after.count(0) ? static_cast<double>(after.at(0)) / total_after : 0.0;
  CHECK(frac_before > 0.6);
  CHECK(frac_after < 0.25);
}

TEST_CASE("judge responses carry a parseable score within the rubric scale") {
  MockProvider provider(world());
  ChatRequest req;
  req.system = "You are a strict evaluator.";
  req.user = "Evaluation Criteria (0-25 pts): ...\nInput: something\n"
             "Return the Overall score enclosed in between <START>, <END>.";
  req.model = "judge-a";
  const auto score = parse_tagged_score(provider.chat(req));
  REQUIRE(score.has_value());
  CHECK(*score >= 0);
  CHECK(*score <= 25);

  req.model = "judge-b";  // different judge can disagree, still parseable
  CHECK(parse_tagged_score(provider.chat(req)).has_value());
}

TEST_CASE("embeddings are identical under concurrent callers") {
  // Per-text embeddings depend only on (world seed, text), so hammering the
  // provider from several threads must reproduce the sequential answers.
  MockProvider provider(world(9));
  std::vector<std::string> texts;
  for (int i = 0; i < 32; ++i) texts.push_back("probe text number " + std::to_string(i));
  const auto sequential = provider.embed(texts, "m");

  std::vector<std::vector<Eigen::VectorXd>> results(4);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t)
    workers.emplace_back([&, t] { results[t] = provider.embed(texts, "m"); });
  for (auto& w : workers) w.join();

  for (const auto& result : results) {
    REQUIRE(result.size() == sequential.size());
    for (std::size_t i = 0; i < result.size(); ++i) CHECK(result[i] == sequential[i]);
  }
}

TEST_CASE("provider state snapshot restores the call stream") {
  MockProvider a(world(5));
  const ChatRequest req = batch_request("Generate a sentence.");
  a.chat(req);
  a.chat(req);
  const nlohmann::json state = a.state();

  MockProvider b(world(5));
  b.restore_state(state);
  CHECK(a.chat(req) == b.chat(req));
}
