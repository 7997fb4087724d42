#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divgen/text.hpp"

namespace divgen {

/// Unit-norm feature vector. Construction rejects zero and non-finite input.
struct Embedding {
  Eigen::VectorXd values;

  static Embedding normalized(Eigen::VectorXd v);
  int dim() const { return static_cast<int>(values.size()); }
};

/// One generated text item plus the features the kernels consume.
struct DataInstance {
  std::string id;
  std::string text;
  Embedding embedding;
  TokenSet tokens;
  std::string explorer_id;
  int iteration = 0;
  double marginal_gain = 1.0;  // gain recorded at acceptance time, in [0, 1]
};

/// Mixture weights and scale for the combined similarity kernel.
struct KernelConfig {
  double w_rbf = 0.7;
  double w_lex = 0.3;
  std::optional<double> rbf_bandwidth;  // unset -> resolve via median heuristic
  double jitter = 1e-8;

  void validate() const;  // throws std::invalid_argument
  double bandwidth_or_throw() const;
  KernelConfig resolved(double bandwidth) const;
};

double rbf_similarity(const Embedding& a, const Embedding& b, double bandwidth);
double jaccard_similarity(const TokenSet& a, const TokenSet& b);

/// Combined pairwise similarity, no jitter. Equals 1 for identical items.
double pair_similarity(const DataInstance& a, const DataInstance& b, const KernelConfig& config);

/// Median pairwise Euclidean distance, the default bandwidth heuristic.
/// Falls back to 1.0 when every pair coincides.
double median_pairwise_distance(std::span<const Embedding> embeddings);

/// Symmetric PSD kernel matrix with diagonal 1 + jitter. The constructor
/// paths verify the invariants (symmetry, diagonal, successful Cholesky).
class SimilarityMatrix {
 public:
  static SimilarityMatrix build(std::span<const DataInstance> items, const KernelConfig& config);
  /// Wraps an externally assembled matrix after adding jitter to the
  /// diagonal and checking the same invariants.
  static SimilarityMatrix from_entries(Eigen::MatrixXd entries, double jitter = 0.0);

  const Eigen::MatrixXd& matrix() const { return entries_; }
  int size() const { return static_cast<int>(entries_.rows()); }
  double jitter() const { return jitter_; }

 private:
  SimilarityMatrix(Eigen::MatrixXd entries, double jitter)
      : entries_(std::move(entries)), jitter_(jitter) {}

  Eigen::MatrixXd entries_;
  double jitter_ = 0.0;
};

}  // namespace divgen
