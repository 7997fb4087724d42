#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "divgen/dpp.hpp"
#include "test_util.hpp"

using namespace divgen;
using namespace divgen::testutil;

namespace {

Eigen::MatrixXd worked_3x3() {
  Eigen::MatrixXd m(3, 3);
  m << 1.0, 0.9, 0.0,
       0.9, 1.0, 0.0,
       0.0, 0.0, 1.0;
  return m;
}

/// Independent oracle: det(S') / det(S) with both determinants computed by
/// Eigen's LU path on freshly assembled matrices.
double det_ratio_oracle(const Eigen::MatrixXd& s, const Eigen::VectorXd& c, double self) {
  const int m = static_cast<int>(s.rows());
  Eigen::MatrixXd extended(m + 1, m + 1);
  extended.topLeftCorner(m, m) = s;
  extended.block(0, m, m, 1) = c;
  extended.block(m, 0, 1, m) = c.transpose();
  extended(m, m) = self;
  return extended.determinant() / s.determinant();
}

}  // namespace

TEST_CASE("log_det basics") {
  CHECK(log_det(Eigen::MatrixXd()) == 0.0);
  CHECK(log_det(Eigen::MatrixXd::Identity(3, 3)) == doctest::Approx(0.0));

  Eigen::MatrixXd m(2, 2);
  m << 1.0, 0.5, 0.5, 1.0;
  CHECK(log_det(m) == doctest::Approx(std::log(0.75)).epsilon(1e-12));
  CHECK(log_det(m) == doctest::Approx(-0.287682).epsilon(1e-5));

  Eigen::MatrixXd singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;  // duplicate rows
  CHECK_THROWS_AS(log_det(singular), std::runtime_error);
}

TEST_CASE("marginal gain worked examples") {
  const KernelConfig config = test_kernel_config(1.0);

  SUBCASE("empty anchor accepts with full gain") {
    const AnchorState empty(config);
    CHECK(empty.marginal_gain(instance_of("w", {1, 0})) ==
          doctest::Approx(1.0 + config.jitter));
  }

  SUBCASE("orthogonal instance with no lexical overlap") {
    // similarity vector c = 0 requires rbf(d^2=2)=e^-1 to vanish; use far
    // apart embeddings via tiny bandwidth so c ~ 0.
    KernelConfig tight = test_kernel_config(0.05);
    AnchorState anchor(tight);
    anchor = anchor.extended(instance_of("a", {1, 0, 0}, {"x"}));
    anchor = anchor.extended(instance_of("b", {0, 1, 0}, {"y"}));
    const double gamma = anchor.marginal_gain(instance_of("w", {0, 0, 1}, {"z"}));
    CHECK(gamma == doctest::Approx(1.0 + tight.jitter).epsilon(1e-9));
  }

  SUBCASE("exact duplicate of an anchor item") {
    AnchorState anchor(config);
    const DataInstance a = instance_of("a", {1, 0}, {"x", "y"});
    anchor = anchor.extended(a);
    DataInstance dup = a;
    dup.id = "dup";
    CHECK(anchor.marginal_gain(dup) <= 2 * config.jitter + 1e-12);
  }

  SUBCASE("2x2 anchor with c = [0.5, 0.5] gives gamma = 2/3") {
    // anchor kernel [[1, .5], [.5, 1]]: two orthogonal embeddings with
    // jaccard 0.5 token overlap and rbf weight tuned so pair sim = 0.5.
    // Simpler: identical tokens {p,q} vs {p,r}: jacc = 1/3... instead build
    // the anchor directly from instances whose pair similarity is 0.5:
    // orthogonal embeddings (rbf = e^-1 at sigma 1) and jaccard chosen so
    // 0.7 e^-1 + 0.3 J = 0.5 has no clean J; use a half-weight config.
    KernelConfig half;
    half.w_rbf = 0.0;
    half.w_lex = 1.0;
    half.rbf_bandwidth = 1.0;
    AnchorState anchor(half);
    // jaccard({p,q},{p,r}) = 1/3... need 0.5: {a,b,c,d} vs {a,b,e,f} = 2/6.
    // Sets sharing 2 of 3 tokens: {p,q,r} vs {p,q,s}: 2/4 = 0.5.
    anchor = anchor.extended(instance_of("a", {1, 0, 0}, {"p", "q", "r"}));
    anchor = anchor.extended(instance_of("b", {0, 1, 0}, {"p", "q", "s"}));
    CHECK(anchor.kernel()(0, 1) == doctest::Approx(0.5));

    // w shares 2 of 4 with both anchors: {p,q,t,u} vs {p,q,r} -> 2/5. Not
    // 0.5. Check against the brute-force oracle instead of a fixed value,
    // then pin the spec's 2/3 case with a hand-built c below.
    const DataInstance w = instance_of("w", {0, 0, 1}, {"p", "q", "t", "u"});
    const double gamma = anchor.marginal_gain(w);
    Eigen::VectorXd c(2);
    c << jaccard_similarity(w.tokens, TokenSet{"p", "q", "r"}),
        jaccard_similarity(w.tokens, TokenSet{"p", "q", "s"});
    const double oracle = det_ratio_oracle(anchor.kernel(), c, 1.0 + half.jitter);
    CHECK(gamma == doctest::Approx(oracle).epsilon(1e-9));
  }

  SUBCASE("hand-built 2x2 Schur case equals 2/3") {
    // det([[1,.5,.5],[.5,1,.5],[.5,.5,1]]) / det([[1,.5],[.5,1]]) =
    // 0.5 / 0.75 = 2/3
    Eigen::MatrixXd s(2, 2);
    s << 1.0, 0.5, 0.5, 1.0;
    Eigen::VectorXd c(2);
    c << 0.5, 0.5;
    CHECK(det_ratio_oracle(s, c, 1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("extend_anchor worked examples") {
  const KernelConfig config = test_kernel_config(1.0);

  SUBCASE("extend empty anchor") {
    AnchorState anchor(config);
    anchor = anchor.extended(instance_of("a", {1, 0}));
    CHECK(anchor.size() == 1);
    CHECK(anchor.logdet() == doctest::Approx(std::log(1.0 + config.jitter)).epsilon(1e-12));
  }

  SUBCASE("extend with near-orthogonal item keeps logdet near 0") {
    KernelConfig tight = test_kernel_config(0.05);
    AnchorState anchor(tight);
    anchor = anchor.extended(instance_of("a", {1, 0}, {"x"}));
    anchor = anchor.extended(instance_of("b", {0, 1}, {"y"}));
    CHECK(anchor.logdet() == doctest::Approx(0.0).epsilon(1e-6));
  }

  SUBCASE("duplicates stay extendable thanks to jitter") {
    // gamma of an exact duplicate is ~2*jitter, above the degeneracy floor.
    AnchorState anchor(config);
    const DataInstance a = instance_of("a", {1, 0}, {"x"});
    anchor = anchor.extended(a);
    DataInstance dup = a;
    dup.id = "dup";
    const AnchorState extended = anchor.extended(dup);
    CHECK(extended.size() == 2);
    CHECK(extended.logdet() < std::log(3 * config.jitter));
  }

  SUBCASE("degenerate extension throws once jitter cannot separate") {
    KernelConfig tiny = test_kernel_config(1.0);
    tiny.jitter = 1e-13;  // duplicate gain ~2e-13 sits below the 1e-12 floor
    AnchorState anchor(tiny);
    const DataInstance a = instance_of("a", {1, 0}, {"x"});
    anchor = anchor.extended(a);
    DataInstance dup = a;
    dup.id = "dup";
    CHECK_THROWS_WITH_AS(anchor = anchor.extended(dup),
                         doctest::Contains("degenerate extension"), std::runtime_error);
  }
}

TEST_CASE("Schur gain equals brute-force det ratio on random kernels") {
  std::mt19937_64 rng(123);
  const KernelConfig config = test_kernel_config(0.8);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 8);
    std::vector<DataInstance> items;
    for (int i = 0; i <= n; ++i) items.push_back(random_instance(rng, 6, i));

    AnchorState anchor(config);
    for (int i = 0; i < n; ++i) anchor = anchor.extended(items[i]);

    const DataInstance& w = items[n];
    Eigen::VectorXd c(n);
    for (int i = 0; i < n; ++i) c(i) = pair_similarity(w, anchor.items()[i], config);
    const double oracle = det_ratio_oracle(anchor.kernel(), c, 1.0 + config.jitter);
    const double gain = anchor.marginal_gain(w);
    CHECK(std::abs(gain - oracle) / std::max(oracle, 1e-12) <= 1e-8);
    ++checked;
  }
  CHECK(checked == 200);
}

TEST_CASE("incremental Cholesky matches batch log-determinant") {
  std::mt19937_64 rng(321);
  const KernelConfig config = test_kernel_config(0.8);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 10);
    std::vector<DataInstance> items;
    for (int i = 0; i < n; ++i) items.push_back(random_instance(rng, 8, i));

    AnchorState incremental(config);
    for (const auto& item : items) incremental = incremental.extended(item);

    const AnchorState batch = AnchorState::from_items(items, config);
    CHECK(incremental.logdet() == doctest::Approx(batch.logdet()).epsilon(1e-8));
    CHECK(incremental.logdet() ==
          doctest::Approx(log_det(SimilarityMatrix::build(items, config))).epsilon(1e-8));

    // factor reconstructs the kernel
    const Eigen::MatrixXd rebuilt =
        incremental.cholesky() * incremental.cholesky().transpose();
    CHECK((rebuilt - incremental.kernel()).cwiseAbs().maxCoeff() <= 1e-8);
    // logdet = 2 sum log diag
    CHECK(incremental.logdet() ==
          doctest::Approx(2.0 * incremental.cholesky().diagonal().array().log().sum())
              .epsilon(1e-9));
  }
}

TEST_CASE("gains stay in [0, 1 + jitter] for unit-diagonal kernels") {
  std::mt19937_64 rng(555);
  const KernelConfig config = test_kernel_config(0.8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    AnchorState anchor(config);
    for (int i = 0; i < n; ++i) {
      const DataInstance item = random_instance(rng, 6, i);
      const double gain = anchor.marginal_gain(item);
      CHECK(gain >= 0.0);
      CHECK(gain <= 1.0 + config.jitter);
      if (gain > 1e-9) anchor = anchor.extended(item);
    }
  }
}

TEST_CASE("brute force k-DPP oracle") {
  SUBCASE("identity: uniform over subsets") {
    const auto probs = brute_force_k_dpp_probs(Eigen::MatrixXd::Identity(3, 3), 2);
    CHECK(probs.size() == 3);
    for (const auto& [_, p] : probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  SUBCASE("worked 3x3 kernel") {
    const auto probs = brute_force_k_dpp_probs(worked_3x3(), 2);
    CHECK(probs.at({0, 1}) == doctest::Approx(0.19 / 2.19).epsilon(1e-9));
    CHECK(probs.at({0, 2}) == doctest::Approx(1.0 / 2.19).epsilon(1e-9));
    CHECK(probs.at({1, 2}) == doctest::Approx(1.0 / 2.19).epsilon(1e-9));
    // near-duplicate pair has the strictly smallest probability
    CHECK(probs.at({0, 1}) < probs.at({0, 2}));
    CHECK(probs.at({0, 1}) < probs.at({1, 2}));
  }

  SUBCASE("k = n is certain; probabilities sum to 1") {
    std::mt19937_64 rng(77);
    const Eigen::MatrixXd kernel = random_unit_diag_psd(rng, 5);
    const auto probs = brute_force_k_dpp_probs(kernel, 5);
    CHECK(probs.size() == 1);
    CHECK(probs.begin()->second == doctest::Approx(1.0));

    for (int k = 1; k <= 4; ++k) {
      double total = 0.0;
      for (const auto& [_, p] : brute_force_k_dpp_probs(kernel, k)) total += p;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("guards") {
    CHECK_THROWS_AS(brute_force_k_dpp_probs(Eigen::MatrixXd::Identity(16, 16), 2),
                    std::invalid_argument);
    CHECK_THROWS_AS(brute_force_k_dpp_probs(Eigen::MatrixXd::Identity(3, 3), 4),
                    std::invalid_argument);
  }
}

TEST_CASE("sample_k_dpp basic contracts") {
  SUBCASE("k = n returns everything") {
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd kernel = random_unit_diag_psd(rng, 6);
    const DppSample s = sample_k_dpp(kernel, 6, 42);
    CHECK(s.indices == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK_FALSE(s.fallback);
  }

  SUBCASE("identical seed gives identical sample") {
    std::mt19937_64 rng(8);
    const Eigen::MatrixXd kernel = random_unit_diag_psd(rng, 8);
    const DppSample a = sample_k_dpp(kernel, 3, 1234);
    const DppSample b = sample_k_dpp(kernel, 3, 1234);
    CHECK(a.indices == b.indices);
    const DppSample c = sample_k_dpp(kernel, 3, 1235);
    // different seed: indices may differ (not asserted), sample stays valid
    CHECK(c.indices.size() == 3);
  }

  SUBCASE("indices distinct, sorted, in range") {
    std::mt19937_64 rng(9);
    const Eigen::MatrixXd kernel = random_unit_diag_psd(rng, 10);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const DppSample s = sample_k_dpp(kernel, 4, seed);
      CHECK(s.indices.size() == 4);
      for (std::size_t i = 0; i < s.indices.size(); ++i) {
        CHECK(s.indices[i] >= 0);
        CHECK(s.indices[i] < 10);
        if (i > 0) CHECK(s.indices[i] > s.indices[i - 1]);
      }
    }
  }

  SUBCASE("identity kernel, k = 1 is uniform (binomial 3-sigma band)") {
    const Eigen::MatrixXd kernel = Eigen::MatrixXd::Identity(4, 4);
    std::map<int, int> counts;
    const int draws = 10000;
    for (int seed = 0; seed < draws; ++seed) counts[sample_k_dpp(kernel, 1, seed).indices[0]]++;
    const double expected = draws / 4.0;
    const double sigma = std::sqrt(draws * 0.25 * 0.75);
    for (const auto& [_, count] : counts)
      CHECK(std::abs(count - expected) <= 3.0 * sigma);
  }

  SUBCASE("rank-deficient request falls back to greedy MAP") {
    std::mt19937_64 rng(10);
    const Eigen::MatrixXd kernel = random_unit_diag_psd(rng, 6, /*rank=*/3);
    const DppSample s = sample_k_dpp(kernel, 5, 99);
    CHECK(s.fallback);
    CHECK(s.indices.size() <= 5);
  }
}

TEST_CASE("k-DPP empirical frequencies match the brute-force oracle") {
  // Smaller version of the acceptance sweep: one kernel, all feasible k.
  std::mt19937_64 rng(2024);
  const Eigen::MatrixXd kernel = random_unit_diag_psd(rng, 4);
  const int draws = 20000;
  for (int k = 1; k <= 3; ++k) {
    const auto oracle = brute_force_k_dpp_probs(kernel, k);
    std::map<std::vector<int>, int> counts;
    for (int seed = 0; seed < draws; ++seed) counts[sample_k_dpp(kernel, k, seed).indices]++;
    for (const auto& [subset, prob] : oracle) {
      const double freq = counts.count(subset) ? counts[subset] / double(draws) : 0.0;
      CHECK(std::abs(freq - prob) <= 0.015);
    }
  }
}

TEST_CASE("greedy MAP selection") {
  SUBCASE("identity kernel breaks ties by lowest index") {
    const DppSample s = greedy_map_select(Eigen::MatrixXd::Identity(4, 4), 2);
    CHECK(s.indices == std::vector<int>{0, 1});
  }

  SUBCASE("never selects both near-duplicates while alternatives remain") {
    const DppSample s = greedy_map_select(worked_3x3(), 2);
    CHECK(s.indices == std::vector<int>{0, 2});
  }

  SUBCASE("exact duplicate pair stops early when nothing else remains") {
    Eigen::MatrixXd dup(2, 2);
    dup << 1.0, 1.0, 1.0, 1.0;
    const DppSample s = greedy_map_select(dup, 2);
    CHECK(s.indices == std::vector<int>{0});  // second gain at the floor
  }

  SUBCASE("greedy volume beats random subsets on average") {
    std::mt19937_64 rng(31337);
    const Eigen::MatrixXd kernel = random_unit_diag_psd(rng, 12);
    const DppSample s = greedy_map_select(kernel, 4);
    Eigen::MatrixXd sub(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) sub(i, j) = kernel(s.indices[i], s.indices[j]);
    const double greedy_det = sub.determinant();

    int beaten = 0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<int> pick;
      while (pick.size() < 4) {
        const int cand = static_cast<int>(rng() % 12);
        if (std::find(pick.begin(), pick.end(), cand) == pick.end()) pick.push_back(cand);
      }
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) sub(i, j) = kernel(pick[i], pick[j]);
      if (greedy_det >= sub.determinant()) ++beaten;
    }
    CHECK(beaten >= 95);
  }
}

TEST_CASE("marginal gain cost scales quadratically, not cubically") {
  // Structural guarantee is the cached factor; this is a coarse sanity
  // check mirroring the acceptance benchmark with looser bounds.
  const KernelConfig config = test_kernel_config(0.8);
  std::mt19937_64 rng(7777);

  const auto build_anchor = [&](int m) {
    std::vector<DataInstance> items;
    items.reserve(m);
    for (int i = 0; i < m; ++i) items.push_back(random_instance(rng, 16, i));
    return AnchorState::from_items(items, config);
  };
  const AnchorState small = build_anchor(100);
  const AnchorState large = build_anchor(200);
  const DataInstance probe = random_instance(rng, 16, 999);

  const auto time_gains = [&](const AnchorState& anchor) {
    const auto start = std::chrono::steady_clock::now();
    double sink = 0.0;
    for (int rep = 0; rep < 400; ++rep) sink += anchor.marginal_gain(probe);
    (void)sink;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  time_gains(small);  // warmup
  double best_ratio = 1e9;
  for (int attempt = 0; attempt < 3; ++attempt)
    best_ratio = std::min(best_ratio, time_gains(large) / time_gains(small));
  CHECK(best_ratio < 8.0);
}
