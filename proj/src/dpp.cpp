#include "divgen/dpp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "divgen/rng.hpp"

namespace divgen {

namespace {

constexpr double kEigenvalueFloor = 1e-10;  // spectrum noise below this is treated as 0
constexpr double kGainFloor = 1e-12;        // extensions below this are degenerate

}  // namespace

double log_det(const Eigen::MatrixXd& matrix) {
  if (matrix.rows() == 0) return 0.0;
  if (matrix.rows() != matrix.cols()) throw std::invalid_argument("log_det: matrix not square");
  Eigen::LLT<Eigen::MatrixXd> llt(matrix);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("log_det: Cholesky failed (matrix singular or not PSD)");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double log_det(const SimilarityMatrix& matrix) { return log_det(matrix.matrix()); }

AnchorState AnchorState::from_items(std::vector<DataInstance> items, const KernelConfig& config) {
  AnchorState state(config);
  if (items.empty()) return state;
  SimilarityMatrix kernel = SimilarityMatrix::build(items, config);
  Eigen::LLT<Eigen::MatrixXd> llt(kernel.matrix());
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("anchor kernel factorization failed");
  state.items_ = std::move(items);
  state.kernel_ = kernel.matrix();
  state.chol_ = llt.matrixL();
  state.logdet_ = 2.0 * state.chol_.diagonal().array().log().sum();
  return state;
}

Eigen::VectorXd AnchorState::similarity_vector(const DataInstance& w) const {
  Eigen::VectorXd c(size());
  for (int i = 0; i < size(); ++i) c(i) = pair_similarity(w, items_[i], config_);
  return c;
}

double AnchorState::marginal_gain(const DataInstance& w) const {
  const double self = 1.0 + config_.jitter;
  if (empty()) return self;
  // Forward solve only: gamma = k(w,w) - ||L^-1 c||^2.
  Eigen::VectorXd y = similarity_vector(w);
  chol_.triangularView<Eigen::Lower>().solveInPlace(y);
  double gamma = self - y.squaredNorm();
  if (gamma < -1e-9)
    throw std::runtime_error("marginal gain below -1e-9: anchor kernel corrupted");
  return std::clamp(gamma, 0.0, self);
}

AnchorState AnchorState::extended(const DataInstance& w) const {
  const double self = 1.0 + config_.jitter;
  const int m = size();
  AnchorState next(config_);
  next.items_ = items_;
  next.items_.push_back(w);

  if (m == 0) {
    next.kernel_ = Eigen::MatrixXd::Constant(1, 1, self);
    next.chol_ = Eigen::MatrixXd::Constant(1, 1, std::sqrt(self));
    next.logdet_ = std::log(self);
    return next;
  }

  Eigen::VectorXd c = similarity_vector(w);
  Eigen::VectorXd y = c;
  chol_.triangularView<Eigen::Lower>().solveInPlace(y);
  const double gamma = self - y.squaredNorm();
  if (gamma <= kGainFloor)
    throw std::runtime_error("degenerate extension: marginal gain at numerical floor");

  next.kernel_.resize(m + 1, m + 1);
  next.kernel_.topLeftCorner(m, m) = kernel_;
  next.kernel_.block(0, m, m, 1) = c;
  next.kernel_.block(m, 0, 1, m) = c.transpose();
  next.kernel_(m, m) = self;

  next.chol_ = Eigen::MatrixXd::Zero(m + 1, m + 1);
  next.chol_.topLeftCorner(m, m) = chol_;
  next.chol_.block(m, 0, 1, m) = y.transpose();
  next.chol_(m, m) = std::sqrt(gamma);
  next.logdet_ = logdet_ + std::log(gamma);
  return next;
}

namespace {

/// Eigenvalue-subset selection phase: walks the spectrum from the last
/// index down, keeping each eigenvalue with probability
/// lambda_i * e_{r-1}(1..i-1) / e_r(1..i) until r slots are filled.
std::vector<int> select_eigenvectors(const Eigen::VectorXd& lambda, int k, std::mt19937_64& rng) {
  const int n = static_cast<int>(lambda.size());
  // esp(j, i) = e_j(lambda_1..lambda_i)
  Eigen::MatrixXd esp = Eigen::MatrixXd::Zero(k + 1, n + 1);
  esp.row(0).setOnes();
  for (int j = 1; j <= k; ++j)
    for (int i = 1; i <= n; ++i)
      esp(j, i) = esp(j, i - 1) + lambda(i - 1) * esp(j - 1, i - 1);

  std::vector<int> picked;
  int remaining = k;
  for (int i = n; i >= 1 && remaining > 0; --i) {
    double marg;
    if (i == remaining) {
      marg = 1.0;  // must take everything left
    } else {
      if (esp(remaining, i) <= 0.0) continue;
      marg = lambda(i - 1) * esp(remaining - 1, i - 1) / esp(remaining, i);
    }
    if (uniform01(rng) < marg) {
      picked.push_back(i - 1);
      --remaining;
    }
  }
  return picked;
}

/// Projection-DPP elimination phase over the selected eigenvectors.
std::vector<int> sample_projection_dpp(const Eigen::MatrixXd& vectors, std::mt19937_64& rng) {
  Eigen::MatrixXd v = vectors;
  const int n = static_cast<int>(v.rows());
  std::vector<int> out;
  while (v.cols() > 0) {
    std::vector<double> weights(n);
    for (int a = 0; a < n; ++a) weights[a] = v.row(a).squaredNorm();
    const int item = static_cast<int>(sample_index(rng, weights));
    out.push_back(item);

    if (v.cols() == 1) break;

    // Pivot on the column with the largest component at the sampled row,
    // eliminate that component from the others, drop it, re-orthonormalize.
    int pivot = 0;
    v.row(item).cwiseAbs().maxCoeff(&pivot);
    const Eigen::VectorXd pivot_col = v.col(pivot);
    const double pivot_val = v(item, pivot);
    v.col(pivot) = v.col(v.cols() - 1);
    v.conservativeResize(Eigen::NoChange, v.cols() - 1);
    for (int j = 0; j < v.cols(); ++j) v.col(j) -= pivot_col * (v(item, j) / pivot_val);

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(v);
    v = qr.householderQ() * Eigen::MatrixXd::Identity(n, v.cols());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DppSample sample_k_dpp(const Eigen::MatrixXd& kernel, int k, std::uint64_t seed) {
  const int n = static_cast<int>(kernel.rows());
  if (k < 1 || k > n) throw std::invalid_argument("sample_k_dpp: k out of range");

  if (k == n) {
    DppSample all;
    all.seed = seed;
    all.indices.resize(n);
    for (int i = 0; i < n; ++i) all.indices[i] = i;
    return all;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kernel);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("sample_k_dpp: eigendecomposition failed");
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  for (int i = 0; i < n; ++i)
    if (lambda(i) < kEigenvalueFloor) lambda(i) = 0.0;

  const int rank = static_cast<int>((lambda.array() > 0.0).count());
  if (k > rank) {
    DppSample fb = greedy_map_select(kernel, k);
    fb.seed = seed;
    fb.fallback = true;
    return fb;
  }

  std::mt19937_64 rng(seed);
  const std::vector<int> picked = select_eigenvectors(lambda, k, rng);
  Eigen::MatrixXd vectors(n, k);
  for (int j = 0; j < k; ++j) vectors.col(j) = es.eigenvectors().col(picked[j]);

  DppSample sample;
  sample.seed = seed;
  sample.indices = sample_projection_dpp(vectors, rng);
  return sample;
}

DppSample sample_k_dpp(const SimilarityMatrix& kernel, int k, std::uint64_t seed) {
  return sample_k_dpp(kernel.matrix(), k, seed);
}

std::map<std::vector<int>, double> brute_force_k_dpp_probs(const Eigen::MatrixXd& kernel, int k) {
  const int n = static_cast<int>(kernel.rows());
  if (n > 15) throw std::invalid_argument("brute_force_k_dpp_probs: n > 15");
  if (k < 1 || k > n) throw std::invalid_argument("brute_force_k_dpp_probs: k out of range");

  std::map<std::vector<int>, double> probs;
  std::vector<int> subset(k);
  double normalizer = 0.0;

  // Enumerate k-subsets in lexicographic order.
  for (int i = 0; i < k; ++i) subset[i] = i;
  while (true) {
    Eigen::MatrixXd sub(k, k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) sub(a, b) = kernel(subset[a], subset[b]);
    const double det = std::max(sub.determinant(), 0.0);
    probs[subset] = det;
    normalizer += det;

    int pos = k - 1;
    while (pos >= 0 && subset[pos] == n - k + pos) --pos;
    if (pos < 0) break;
    ++subset[pos];
    for (int i = pos + 1; i < k; ++i) subset[i] = subset[i - 1] + 1;
  }

  if (normalizer <= 0.0)
    throw std::runtime_error("brute_force_k_dpp_probs: all subset determinants vanish");
  for (auto& [_, p] : probs) p /= normalizer;
  return probs;
}

DppSample greedy_map_select(const Eigen::MatrixXd& kernel, int k) {
  const int n = static_cast<int>(kernel.rows());
  if (k < 1 || k > n) throw std::invalid_argument("greedy_map_select: k out of range");

  DppSample result;
  Eigen::MatrixXd chol;  // Cholesky factor of the selected submatrix
  std::vector<int> selected;
  std::vector<bool> used(n, false);

  for (int step = 0; step < k; ++step) {
    double best_gain = kGainFloor;
    int best = -1;
    for (int cand = 0; cand < n; ++cand) {
      if (used[cand]) continue;
      double gain;
      if (selected.empty()) {
        gain = kernel(cand, cand);
      } else {
        Eigen::VectorXd c(static_cast<int>(selected.size()));
        for (std::size_t i = 0; i < selected.size(); ++i) c(i) = kernel(selected[i], cand);
        chol.triangularView<Eigen::Lower>().solveInPlace(c);
        gain = kernel(cand, cand) - c.squaredNorm();
      }
      if (gain > best_gain) {  // strict: lowest index wins ties
        best_gain = gain;
        best = cand;
      }
    }
    if (best < 0) break;  // all remaining gains at the floor

    const int m = static_cast<int>(selected.size());
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(m + 1, m + 1);
    if (m > 0) {
      Eigen::VectorXd c(m);
      for (int i = 0; i < m; ++i) c(i) = kernel(selected[i], best);
      chol.triangularView<Eigen::Lower>().solveInPlace(c);
      next.topLeftCorner(m, m) = chol;
      next.block(m, 0, 1, m) = c.transpose();
    }
    next(m, m) = std::sqrt(best_gain);
    chol = std::move(next);
    selected.push_back(best);
    used[best] = true;
  }

  std::sort(selected.begin(), selected.end());
  result.indices = std::move(selected);
  return result;
}

}  // namespace divgen
