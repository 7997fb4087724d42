#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "divgen/kernel.hpp"
#include "divgen/text.hpp"
#include "test_util.hpp"

using namespace divgen;
using namespace divgen::testutil;

TEST_CASE("tokenize strips punctuation, lowercases, removes stopwords") {
  CHECK(tokenize("The cat sat.", {"the"}) == TokenSet{"cat", "sat"});
  CHECK(tokenize("", default_stopwords()).empty());
  CHECK(tokenize("Red ball game", {}) == TokenSet{"ball", "game", "red"});
  CHECK(tokenize("don't stop", default_stopwords()) == TokenSet{"stop"});
  CHECK(tokenize("  punctuation!!! -- splits?  ", {}) == TokenSet{"punctuation", "splits"});
}

TEST_CASE("tokenize is deterministic and keeps UTF-8 sequences intact") {
  const TokenSet a = tokenize("Caf\xc3\xa9 au lait", {"au"});
  CHECK(a == tokenize("Caf\xc3\xa9 au lait", {"au"}));
  CHECK(a.count("caf\xc3\xa9") == 1);
}

TEST_CASE("stopword file matches the built-in list") {
  const StopwordSet from_file = load_stopwords(std::string(TEST_SOURCE_DIR) +
                                               "/../data/stopwords_en.txt");
  CHECK(from_file == default_stopwords());
}

TEST_CASE("embedding normalization") {
  const Embedding e = embedding_of({3.0, 4.0});
  CHECK(e.values(0) == doctest::Approx(0.6));
  CHECK(e.values.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(Embedding::normalized(Eigen::VectorXd::Zero(4)), std::invalid_argument);
  Eigen::VectorXd bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(Embedding::normalized(bad), std::invalid_argument);
}

TEST_CASE("rbf similarity closed forms") {
  const Embedding x = embedding_of({1.0, 0.0});
  const Embedding y = embedding_of({0.0, 1.0});
  const Embedding neg_x = embedding_of({-1.0, 0.0});

  CHECK(rbf_similarity(x, x, 0.7) == doctest::Approx(1.0));
  // orthogonal unit vectors: ||a-b||^2 = 2
  CHECK(rbf_similarity(x, y, 1.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  // antipodal unit vectors: ||a-b||^2 = 4
  CHECK(rbf_similarity(x, neg_x, 1.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));

  const Embedding z3 = embedding_of({1.0, 0.0, 0.0});
  CHECK_THROWS_AS(rbf_similarity(x, z3, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(rbf_similarity(x, y, 0.0), std::invalid_argument);
}

TEST_CASE("jaccard similarity") {
  const TokenSet red{"red", "ball", "game"};
  const TokenSet blue{"blue", "ball", "game"};
  CHECK(jaccard_similarity(red, red) == 1.0);
  CHECK(jaccard_similarity({"a", "b"}, {"c", "d"}) == 0.0);
  CHECK(jaccard_similarity(red, blue) == doctest::Approx(0.5));
  CHECK(jaccard_similarity({}, {}) == 1.0);  // identical (empty) items
  CHECK(jaccard_similarity({}, {"a"}) == 0.0);
}

TEST_CASE("pairwise similarity functions are symmetric") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const DataInstance a = random_instance(rng, 6, 0);
    const DataInstance b = random_instance(rng, 6, 1);
    CHECK(rbf_similarity(a.embedding, b.embedding, 0.8) ==
          rbf_similarity(b.embedding, a.embedding, 0.8));
    CHECK(jaccard_similarity(a.tokens, b.tokens) == jaccard_similarity(b.tokens, a.tokens));
  }
}

TEST_CASE("build_kernel worked examples") {
  const KernelConfig config = test_kernel_config(1.0);

  SUBCASE("singleton") {
    const auto k = SimilarityMatrix::build(std::vector<DataInstance>{instance_of("a", {1, 0})},
                                           config);
    CHECK(k.size() == 1);
    CHECK(k.matrix()(0, 0) == doctest::Approx(1.0 + config.jitter).epsilon(1e-12));
  }

  SUBCASE("two identical items have off-diagonal exactly 1") {
    const std::vector<DataInstance> items = {
        instance_of("a", {1, 0}, {"x", "y"}),
        instance_of("b", {1, 0}, {"x", "y"}),
    };
    const auto k = SimilarityMatrix::build(items, config);
    CHECK(k.matrix()(0, 1) == 1.0);
  }

  SUBCASE("mixture of closed-form rbf and jaccard") {
    // rbf = e^-1 (orthogonal), jaccard = 0.5 -> 0.7 e^-1 + 0.15 = 0.407516
    const std::vector<DataInstance> items = {
        instance_of("a", {1, 0}, {"red", "ball", "game"}),
        instance_of("b", {0, 1}, {"blue", "ball", "game"}),
    };
    const auto k = SimilarityMatrix::build(items, config);
    CHECK(k.matrix()(0, 1) == doctest::Approx(0.7 * std::exp(-1.0) + 0.15).epsilon(1e-9));
    CHECK(k.matrix()(0, 1) == doctest::Approx(0.407516).epsilon(1e-5));
  }
}

TEST_CASE("build_kernel validates inputs") {
  const KernelConfig config = test_kernel_config();
  CHECK_THROWS_AS(SimilarityMatrix::build(std::vector<DataInstance>{}, config),
                  std::invalid_argument);

  const std::vector<DataInstance> mismatched = {instance_of("a", {1, 0}),
                                                instance_of("b", {1, 0, 0})};
  CHECK_THROWS_AS(SimilarityMatrix::build(mismatched, config), std::invalid_argument);

  KernelConfig bad = config;
  bad.w_rbf = 0.9;  // weights no longer sum to 1
  CHECK_THROWS_AS(SimilarityMatrix::build(std::vector<DataInstance>{instance_of("a", {1, 0})},
                                          bad),
                  std::invalid_argument);
  KernelConfig unresolved;  // no bandwidth
  CHECK_THROWS_AS(SimilarityMatrix::build(
                      std::vector<DataInstance>{instance_of("a", {1, 0}),
                                                instance_of("b", {0, 1})},
                      unresolved),
                  std::logic_error);
}

TEST_CASE("build_kernel invariants hold on random instance sets") {
  std::mt19937_64 rng(20240701);
  const KernelConfig config = test_kernel_config(0.9);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 50);
    std::vector<DataInstance> items;
    for (int i = 0; i < n; ++i) items.push_back(random_instance(rng, 8, i));

    // Duplicates included on purpose: jitter must keep Cholesky alive.
    if (n > 3) {
      items[n - 1] = items[0];
      items[n - 1].id = "dup";
    }

    const auto kernel = SimilarityMatrix::build(items, config);
    const Eigen::MatrixXd& m = kernel.matrix();
    CHECK((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    for (int i = 0; i < n; ++i) {
      CHECK(m(i, i) == doctest::Approx(1.0 + config.jitter).epsilon(1e-12));
      for (int j = 0; j < n; ++j)
        if (i != j) {
          CHECK(m(i, j) >= 0.0);
          CHECK(m(i, j) <= 1.0);
        }
    }
    // PSD via successful Cholesky (build already enforces it; double-check).
    CHECK(Eigen::LLT<Eigen::MatrixXd>(m).info() == Eigen::Success);
  }
}

TEST_CASE("pairwise self-similarity is exactly 1") {
  std::mt19937_64 rng(5);
  const KernelConfig config = test_kernel_config(0.7);
  for (int i = 0; i < 20; ++i) {
    const DataInstance d = random_instance(rng, 5, i);
    CHECK(pair_similarity(d, d, config) == 1.0);
  }
}

TEST_CASE("permuting items permutes the kernel") {
  std::mt19937_64 rng(99);
  const KernelConfig config = test_kernel_config(1.1);
  std::vector<DataInstance> items;
  for (int i = 0; i < 12; ++i) items.push_back(random_instance(rng, 6, i));

  std::vector<int> perm(items.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<DataInstance> permuted;
  for (int p : perm) permuted.push_back(items[p]);

  const Eigen::MatrixXd base = SimilarityMatrix::build(items, config).matrix();
  const Eigen::MatrixXd shuffled = SimilarityMatrix::build(permuted, config).matrix();
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j)
      CHECK(shuffled(i, j) == doctest::Approx(base(perm[i], perm[j])).epsilon(1e-14));
}

TEST_CASE("from_entries rejects non-PSD matrices naming the eigenvalue") {
  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  try {
    SimilarityMatrix::from_entries(indefinite, 1e-8);
    FAIL("expected a PSD failure");
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("smallest eigenvalue") != std::string::npos);
  }
  CHECK_THROWS_AS(SimilarityMatrix::from_entries(Eigen::MatrixXd::Zero(2, 3)),
                  std::invalid_argument);
}

TEST_CASE("median pairwise distance") {
  const std::vector<Embedding> two = {embedding_of({1, 0}), embedding_of({0, 1})};
  CHECK(median_pairwise_distance(two) == doctest::Approx(std::sqrt(2.0)));
  const std::vector<Embedding> same = {embedding_of({1, 0}), embedding_of({1, 0})};
  CHECK(median_pairwise_distance(same) == 1.0);  // degenerate fallback
}
