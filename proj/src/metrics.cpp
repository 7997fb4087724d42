#include "divgen/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace divgen {

namespace {

constexpr double kSpectrumFloor = 1e-12;  // eigenvalues below this count as exactly 0

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
  return out;
}

}  // namespace

SpectrumSummary spectrum_summary(const Eigen::MatrixXd& kernel) {
  if (kernel.rows() != kernel.cols() || kernel.rows() == 0)
    throw std::invalid_argument("spectrum_summary: square non-empty matrix required");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kernel, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");

  SpectrumSummary out;
  const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  for (int i = static_cast<int>(kernel.rows()) - 1; i >= 0; --i) {
    double lam = es.eigenvalues()(i);
    if (lam < -1e-9 * scale) throw std::runtime_error("spectrum_summary: kernel not PSD");
    if (lam < kSpectrumFloor) lam = 0.0;
    out.eigenvalues.push_back(lam);
    out.trace += lam;
  }
  if (out.trace <= 0.0) throw std::runtime_error("spectrum_summary: zero trace");
  out.normalized.reserve(out.eigenvalues.size());
  for (double lam : out.eigenvalues) out.normalized.push_back(lam / out.trace);
  return out;
}

double vendi_score(const Eigen::MatrixXd& kernel) {
  const SpectrumSummary spec = spectrum_summary(kernel);
  double entropy = 0.0;
  for (double p : spec.normalized)
    if (p > 0.0) entropy -= p * std::log(p);
  return std::exp(entropy);
}

double vendi_score(const SimilarityMatrix& kernel) { return vendi_score(kernel.matrix()); }

EffectiveRankApprox effective_rank_approx(const Eigen::MatrixXd& kernel) {
  const SpectrumSummary spec = spectrum_summary(kernel);
  const double n = static_cast<double>(spec.eigenvalues.size());
  EffectiveRankApprox out;
  double log_det_sum = 0.0;
  for (double lam : spec.eigenvalues) {
    if (lam <= 0.0) {
      out.degenerate = true;
      return out;
    }
    log_det_sum += std::log(lam);
  }
  out.value = std::exp(2.0 * std::log(n) + log_det_sum / n - std::log(spec.trace));
  return out;
}

EffectiveRankApprox effective_rank_approx(const SimilarityMatrix& kernel) {
  return effective_rank_approx(kernel.matrix());
}

MeanStd mean_pairwise_cosine_distance(std::span<const DataInstance> items) {
  if (items.size() < 2)
    throw std::invalid_argument("mean_pairwise_cosine_distance: need at least 2 items");
  std::vector<double> dists;
  dists.reserve(items.size() * (items.size() - 1) / 2);
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      // embeddings are unit norm, so cosine similarity is the dot product
      const double cosine = items[i].embedding.values.dot(items[j].embedding.values);
      dists.push_back(std::clamp(1.0 - cosine, 0.0, 2.0));
    }
  return mean_std(dists);
}

MeanStd mean_pairwise_jaccard_distance(std::span<const DataInstance> items) {
  if (items.size() < 2)
    throw std::invalid_argument("mean_pairwise_jaccard_distance: need at least 2 items");
  std::vector<double> dists;
  dists.reserve(items.size() * (items.size() - 1) / 2);
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j)
      dists.push_back(1.0 - jaccard_similarity(items[i].tokens, items[j].tokens));
  return mean_std(dists);
}

DiversityReport compute_report(std::span<const DataInstance> items, const KernelConfig& config,
                               const LedgerSnapshot& ledger) {
  DiversityReport report;
  report.n = static_cast<int>(items.size());
  report.llm_calls = ledger;
  report.kernel = config;
  if (items.empty()) return report;

  const SimilarityMatrix kernel = SimilarityMatrix::build(items, config);
  report.vendi = vendi_score(kernel);
  report.effective_rank = effective_rank_approx(kernel);
  if (items.size() >= 2) {
    report.lexical = mean_pairwise_jaccard_distance(items);
    report.cosine = mean_pairwise_cosine_distance(items);
  }
  return report;
}

}  // namespace divgen
