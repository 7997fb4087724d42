#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <vector>

#include "divgen/kernel.hpp"

namespace divgen {

/// Log-determinant via Cholesky. Empty matrix -> 0 (det of the empty
/// matrix is 1). Singular/non-PSD input throws.
double log_det(const Eigen::MatrixXd& matrix);
double log_det(const SimilarityMatrix& matrix);

/// The anchor set with its kernel factorization kept incrementally, so a
/// marginal gain costs two triangular solves instead of a refactorization.
/// Immutable: extended() returns a fresh state.
class AnchorState {
 public:
  AnchorState() = default;
  explicit AnchorState(KernelConfig config) : config_(std::move(config)) {}

  /// Batch construction, used after pruning. O(m^3) once.
  static AnchorState from_items(std::vector<DataInstance> items, const KernelConfig& config);

  int size() const { return static_cast<int>(items_.size()); }
  bool empty() const { return items_.empty(); }
  const std::vector<DataInstance>& items() const { return items_; }
  const Eigen::MatrixXd& kernel() const { return kernel_; }
  const Eigen::MatrixXd& cholesky() const { return chol_; }
  double logdet() const { return logdet_; }
  const KernelConfig& config() const { return config_; }

  /// Volume ratio det(S')/det(S) for appending w, computed as the Schur
  /// complement k(w,w) - c' S^-1 c against the cached factor. O(m^2).
  /// Clamped into [0, k(w,w)]; values below -1e-9 before clamping throw.
  double marginal_gain(const DataInstance& w) const;

  /// New state with w appended; the Cholesky factor grows by one row.
  /// Throws "degenerate extension" when the gain is below the floor.
  AnchorState extended(const DataInstance& w) const;

 private:
  Eigen::VectorXd similarity_vector(const DataInstance& w) const;

  std::vector<DataInstance> items_;
  KernelConfig config_;
  Eigen::MatrixXd kernel_;  // m x m, diagonal 1 + jitter
  Eigen::MatrixXd chol_;    // lower triangular
  double logdet_ = 0.0;
};

struct DppSample {
  std::vector<int> indices;  // distinct, sorted ascending
  std::uint64_t seed = 0;
  bool fallback = false;  // greedy MAP path was taken (rank-deficient kernel)
};

/// Exact k-DPP sample: eigendecompose L, pick k eigenvectors via the
/// elementary-symmetric-polynomial recursion, then run the projection-DPP
/// elimination phase. Deterministic for a fixed seed. Falls back to greedy
/// MAP selection when k exceeds the numerical rank of L.
DppSample sample_k_dpp(const Eigen::MatrixXd& kernel, int k, std::uint64_t seed);
DppSample sample_k_dpp(const SimilarityMatrix& kernel, int k, std::uint64_t seed);

/// Exact subset probabilities P(S) = det(L_S) / e_k by full enumeration.
/// Test oracle; guarded to n <= 15.
std::map<std::vector<int>, double> brute_force_k_dpp_probs(const Eigen::MatrixXd& kernel, int k);

/// Greedy volume maximization: repeatedly take the item with the largest
/// Schur-complement gain, lowest index on ties. Stops early (shorter
/// result) once every remaining gain sits at the numerical floor.
DppSample greedy_map_select(const Eigen::MatrixXd& kernel, int k);

}  // namespace divgen
