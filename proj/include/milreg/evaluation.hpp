#pragma once
// Comparison metrics and statistical tests: AUROC/AUPRC from continuous
// scores, R^2 / Spearman, class-separation statistics, repeated-measures
// ANOVA, and the paired / Welch t-test family.
#include <optional>
#include <string>
#include <vector>

#include "milreg/linalg.hpp"

namespace milreg {

struct ScoreSet {
  VecD scores;             // continuous model outputs
  std::vector<int> labels; // {0, 1}, aligned with scores
  VecD truth;              // optional continuous ground truth (empty = absent)
};

struct BinaryMetrics {
  double auroc = 0.0, auprc = 0.0;
};

// AUROC via the rank (Mann-Whitney) statistic with half credit for ties;
// AUPRC as average precision over distinct-score thresholds.
BinaryMetrics binary_metrics(const ScoreSet& s);

struct RegressionMetrics {
  double r2 = 0.0, spearman_rho = 0.0;
};

RegressionMetrics regression_metrics(const ScoreSet& s);

struct SeparationStats {
  double median_pos = 0.0, iqr_pos = 0.0;
  double median_neg = 0.0, iqr_neg = 0.0;
  double separation_delta = 0.0;  // |median_pos - median_neg| after joint min-max
};

SeparationStats separation_stats(const ScoreSet& s);

// 100 * (delta_reg - delta_clf) / delta_clf
double improvement_pct(double delta_reg, double delta_clf);

enum class StatKind { rm_anova, paired_t, independent_t };
enum class Sided { two_sided, greater };

struct StatResult {
  StatKind kind = StatKind::paired_t;
  double statistic = 0.0;
  double dof1 = 0.0, dof2 = 0.0;  // ANOVA uses both; t-tests use dof1
  double p_value = 1.0;
  double alpha_effective = 0.05;  // 0.05 / m after Bonferroni
  bool zero_variance = false;
};

// One-way within-subject ANOVA on an n_subjects x k_treatments matrix.
StatResult rm_anova(const MatD& values);

// Paired (dependent) or Welch-independent t-test; `m_hypotheses` applies a
// Bonferroni correction to alpha_effective.
StatResult t_test(const VecD& a, const VecD& b, StatKind kind, Sided sided, int m_hypotheses = 1);

// Welch two-sided t-test of scores grouped by label.
StatResult class_score_ttest(const ScoreSet& s);

struct MetricReport {
  int fold = 0;
  double auroc = 0.0, auprc = 0.0;
  std::optional<double> r2, spearman_rho;
  SeparationStats separation;
  std::optional<double> improvement;
};

}  // namespace milreg
