#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divgen/kernel.hpp"

namespace divgen {

/// Eigenvalues of a PSD kernel, largest first, with the trace-normalized
/// probability vector p_i = lambda_i / trace.
struct SpectrumSummary {
  std::vector<double> eigenvalues;
  double trace = 0.0;
  std::vector<double> normalized;
};

SpectrumSummary spectrum_summary(const Eigen::MatrixXd& kernel);

/// Effective number of distinct items: exp of the Shannon entropy of the
/// trace-normalized spectrum. Identity -> n, all-ones -> 1.
double vendi_score(const Eigen::MatrixXd& kernel);
double vendi_score(const SimilarityMatrix& kernel);

struct EffectiveRankApprox {
  double value = 0.0;
  bool degenerate = false;  // singular kernel: the determinant route collapses
};

/// Determinant-based approximation n^2 * det^(1/n) / trace, evaluated in
/// log space. Exact on uniform spectra, close when the spectrum is nearly
/// flat, 0 (degenerate) when the kernel is singular.
EffectiveRankApprox effective_rank_approx(const Eigen::MatrixXd& kernel);
EffectiveRankApprox effective_rank_approx(const SimilarityMatrix& kernel);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

MeanStd mean_pairwise_cosine_distance(std::span<const DataInstance> items);
MeanStd mean_pairwise_jaccard_distance(std::span<const DataInstance> items);

struct QualitySummary {
  MeanStd score;
  int max_score = 0;
  int items_scored = 0;
  int items_skipped = 0;   // every judge response unparseable
  int parse_warnings = 0;  // retried-then-recovered or partially parsed
};

/// Ledger snapshot embedded in every report.
struct LedgerSnapshot {
  std::uint64_t generate = 0;
  std::uint64_t gradient_get = 0;
  std::uint64_t gradient_apply = 0;
  std::uint64_t judge = 0;
  std::uint64_t embed = 0;
  std::uint64_t probe = 0;
  std::uint64_t total_tokens = 0;
  std::uint64_t total() const {
    return generate + gradient_get + gradient_apply + judge + embed + probe;
  }
  /// Generation-class calls only (the "LLM calls" column).
  std::uint64_t generation_class() const { return generate + gradient_get + gradient_apply; }
};

struct DiversityReport {
  int n = 0;
  MeanStd lexical;
  MeanStd cosine;
  double vendi = 1.0;
  EffectiveRankApprox effective_rank;
  std::optional<QualitySummary> quality;
  LedgerSnapshot llm_calls;
  KernelConfig kernel;  // resolved config the metrics were computed with
};

/// Full metric sweep over a dataset with the given (resolved) kernel config.
DiversityReport compute_report(std::span<const DataInstance> items, const KernelConfig& config,
                               const LedgerSnapshot& ledger);

}  // namespace divgen
