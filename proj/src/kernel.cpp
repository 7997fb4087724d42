#include "divgen/kernel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace divgen {

Embedding Embedding::normalized(Eigen::VectorXd v) {
  if (v.size() == 0) throw std::invalid_argument("embedding: empty vector");
  if (!v.allFinite()) throw std::invalid_argument("embedding: non-finite entries");
  const double norm = v.norm();
  if (norm < 1e-12) throw std::invalid_argument("embedding: zero vector cannot be normalized");
  v /= norm;
  return Embedding{std::move(v)};
}

void KernelConfig::validate() const {
  if (w_rbf < 0.0 || w_lex < 0.0) throw std::invalid_argument("kernel weights must be >= 0");
  if (std::abs(w_rbf + w_lex - 1.0) > 1e-9)
    throw std::invalid_argument("kernel weights must sum to 1");
  if (rbf_bandwidth && *rbf_bandwidth <= 0.0)
    throw std::invalid_argument("rbf bandwidth must be positive");
  if (jitter <= 0.0) throw std::invalid_argument("jitter must be positive");
}

double KernelConfig::bandwidth_or_throw() const {
  if (!rbf_bandwidth) throw std::logic_error("kernel bandwidth not resolved");
  return *rbf_bandwidth;
}

KernelConfig KernelConfig::resolved(double bandwidth) const {
  KernelConfig out = *this;
  out.rbf_bandwidth = bandwidth;
  return out;
}

double rbf_similarity(const Embedding& a, const Embedding& b, double bandwidth) {
  if (a.dim() != b.dim())
    throw std::invalid_argument("rbf_similarity: embedding dimension mismatch");
  if (bandwidth <= 0.0) throw std::invalid_argument("rbf_similarity: bandwidth must be positive");
  const double d2 = (a.values - b.values).squaredNorm();
  return std::exp(-d2 / (2.0 * bandwidth * bandwidth));
}

double jaccard_similarity(const TokenSet& a, const TokenSet& b) {
  if (a.empty() && b.empty()) return 1.0;  // identical items stay at similarity 1
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia == *ib) {
      ++inter;
      ++ia;
      ++ib;
    } else if (*ia < *ib) {
      ++ia;
    } else {
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double pair_similarity(const DataInstance& a, const DataInstance& b, const KernelConfig& config) {
  return config.w_rbf * rbf_similarity(a.embedding, b.embedding, config.bandwidth_or_throw()) +
         config.w_lex * jaccard_similarity(a.tokens, b.tokens);
}

double median_pairwise_distance(std::span<const Embedding> embeddings) {
  std::vector<double> dists;
  dists.reserve(embeddings.size() * (embeddings.size() - 1) / 2);
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    for (std::size_t j = i + 1; j < embeddings.size(); ++j)
      dists.push_back((embeddings[i].values - embeddings[j].values).norm());
  if (dists.empty()) return 1.0;
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  const double med = dists[dists.size() / 2];
  return med > 1e-12 ? med : 1.0;
}

namespace {

void check_psd_or_throw(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  std::ostringstream os;
  os << "similarity matrix is not PSD after jitter; smallest eigenvalue = "
     << es.eigenvalues().minCoeff();
  throw std::runtime_error(os.str());
}

}  // namespace

SimilarityMatrix SimilarityMatrix::build(std::span<const DataInstance> items,
                                         const KernelConfig& config) {
  if (items.empty()) throw std::invalid_argument("build_kernel: empty item list");
  config.validate();
  const int n = static_cast<int>(items.size());
  const int dim = items[0].embedding.dim();
  for (const auto& it : items)
    if (it.embedding.dim() != dim)
      throw std::invalid_argument("build_kernel: embedding dimension mismatch");

  Eigen::MatrixXd entries(n, n);
  for (int i = 0; i < n; ++i) {
    entries(i, i) = 1.0 + config.jitter;
    for (int j = i + 1; j < n; ++j) {
      const double s = pair_similarity(items[i], items[j], config);
      entries(i, j) = s;
      entries(j, i) = s;
    }
  }
  check_psd_or_throw(entries);
  return SimilarityMatrix(std::move(entries), config.jitter);
}

SimilarityMatrix SimilarityMatrix::from_entries(Eigen::MatrixXd entries, double jitter) {
  if (entries.rows() != entries.cols() || entries.rows() == 0)
    throw std::invalid_argument("similarity matrix must be square and non-empty");
  if (!entries.isApprox(entries.transpose(), 1e-12))
    throw std::invalid_argument("similarity matrix must be symmetric");
  if (jitter > 0.0)
    entries.diagonal().array() += jitter;
  check_psd_or_throw(entries);
  return SimilarityMatrix(std::move(entries), jitter);
}

}  // namespace divgen
