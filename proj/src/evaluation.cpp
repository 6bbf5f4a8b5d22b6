#include "milreg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "milreg/common.hpp"
#include "milreg/stats.hpp"

namespace milreg {

namespace {

void check_two_classes(const ScoreSet& s) {
  if (s.scores.size() != s.labels.size() || s.scores.empty())
    throw std::invalid_argument("score/label size mismatch");
  std::size_t pos = 0;
  for (int l : s.labels) pos += l != 0;
  if (pos == 0 || pos == s.labels.size())
    throw std::runtime_error("single-class input: both classes required");
}

// average ranks (1-based), ties share the mean rank of their block
VecD average_ranks(const VecD& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
  VecD ranks(xs.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

BinaryMetrics binary_metrics(const ScoreSet& s) {
  check_two_classes(s);
  const std::size_t n = s.scores.size();
  double n_pos = 0.0;
  for (int l : s.labels) n_pos += l != 0;
  const double n_neg = static_cast<double>(n) - n_pos;

  BinaryMetrics out;
  // Mann-Whitney rank form
  const VecD ranks = average_ranks(s.scores);
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (s.labels[i]) rank_sum_pos += ranks[i];
  out.auroc = (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);

  // average precision over distinct thresholds, descending score
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t i, std::size_t j) { return s.scores[i] > s.scores[j]; });
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && s.scores[idx[j + 1]] == s.scores[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) (s.labels[idx[k]] ? tp : fp) += 1.0;
    const double recall = tp / n_pos;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  out.auprc = ap;
  return out;
}

RegressionMetrics regression_metrics(const ScoreSet& s) {
  if (s.truth.size() != s.scores.size())
    throw std::invalid_argument("regression metrics need aligned continuous truth");
  if (s.scores.size() < 3) throw std::invalid_argument("regression metrics need n >= 3");

  const double mean_truth = mean_of(s.truth);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    ss_res += (s.truth[i] - s.scores[i]) * (s.truth[i] - s.scores[i]);
    ss_tot += (s.truth[i] - mean_truth) * (s.truth[i] - mean_truth);
  }
  if (ss_tot == 0.0) throw std::runtime_error("constant truth: R^2 undefined");

  RegressionMetrics out;
  out.r2 = 1.0 - ss_res / ss_tot;

  const VecD ra = average_ranks(s.scores);
  const VecD rb = average_ranks(s.truth);
  const double ma = mean_of(ra), mb = mean_of(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  // constant scores leave the rank correlation undefined; R^2 still stands
  out.spearman_rho = saa == 0.0 || sbb == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                              : sab / std::sqrt(saa * sbb);
  return out;
}

SeparationStats separation_stats(const ScoreSet& s) {
  check_two_classes(s);
  const auto [mn_it, mx_it] = std::minmax_element(s.scores.begin(), s.scores.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mn == mx) throw std::runtime_error("degenerate range: constant scores");

  VecD pos, neg;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const double v = (s.scores[i] - mn) / (mx - mn);
    (s.labels[i] ? pos : neg).push_back(v);
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  SeparationStats out;
  out.median_pos = percentile_sorted(pos, 50.0);
  out.median_neg = percentile_sorted(neg, 50.0);
  out.iqr_pos = percentile_sorted(pos, 75.0) - percentile_sorted(pos, 25.0);
  out.iqr_neg = percentile_sorted(neg, 75.0) - percentile_sorted(neg, 25.0);
  out.separation_delta = std::abs(out.median_pos - out.median_neg);
  return out;
}

double improvement_pct(double delta_reg, double delta_clf) {
  if (!(delta_clf > 0.0))
    throw std::invalid_argument("improvement_pct: classification delta must be positive");
  return 100.0 * (delta_reg - delta_clf) / delta_clf;
}

StatResult rm_anova(const MatD& values) {
  const std::size_t n = values.rows, k = values.cols;
  if (n < 2 || k < 2) throw std::invalid_argument("rm_anova needs n >= 2 subjects, k >= 2 treatments");

  double grand = 0.0;
  for (double v : values.a) grand += v;
  grand /= static_cast<double>(n * k);

  double ss_tot = 0.0, ss_subj = 0.0, ss_treat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_mean = 0.0;
    for (std::size_t j = 0; j < k; ++j) row_mean += values.at(i, j);
    row_mean /= static_cast<double>(k);
    ss_subj += static_cast<double>(k) * (row_mean - grand) * (row_mean - grand);
  }
  for (std::size_t j = 0; j < k; ++j) {
    double col_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) col_mean += values.at(i, j);
    col_mean /= static_cast<double>(n);
    ss_treat += static_cast<double>(n) * (col_mean - grand) * (col_mean - grand);
  }
  for (double v : values.a) ss_tot += (v - grand) * (v - grand);
  const double ss_err = std::max(0.0, ss_tot - ss_subj - ss_treat);
  // numerical noise floor: sums of squares below it count as zero
  const double floor_ = 1e-12 * static_cast<double>(n * k) * (grand * grand + 1e-30);

  StatResult r;
  r.kind = StatKind::rm_anova;
  r.dof1 = static_cast<double>(k - 1);
  r.dof2 = static_cast<double>((k - 1) * (n - 1));
  if (ss_tot <= floor_) throw std::runtime_error("degenerate: constant measurements");
  if (ss_treat <= floor_) {  // identical treatments per subject
    r.statistic = 0.0;
    r.p_value = 1.0;
    return r;
  }
  if (ss_err <= floor_) {
    r.statistic = std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    r.zero_variance = true;
    return r;
  }
  r.statistic = (ss_treat / r.dof1) / (ss_err / r.dof2);
  r.p_value = f_dist_sf(r.statistic, r.dof1, r.dof2);
  return r;
}

StatResult t_test(const VecD& a, const VecD& b, StatKind kind, Sided sided, int m_hypotheses) {
  StatResult r;
  r.kind = kind;
  r.alpha_effective = 0.05 / std::max(1, m_hypotheses);

  double t = 0.0, dof = 0.0;
  bool zero_var = false;
  double mean_sign = 0.0;

  if (kind == StatKind::paired_t) {
    if (a.size() != b.size() || a.size() < 2)
      throw std::invalid_argument("paired t-test needs equal lengths >= 2");
    VecD d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double md = mean_of(d);
    const double sd = sample_sd(d);
    dof = static_cast<double>(d.size() - 1);
    mean_sign = md;
    if (sd == 0.0)
      zero_var = true;
    else
      t = md / (sd / std::sqrt(static_cast<double>(d.size())));
  } else if (kind == StatKind::independent_t) {
    if (a.size() < 2 || b.size() < 2)
      throw std::invalid_argument("independent t-test needs n >= 2 per group");
    const double ma = mean_of(a), mb = mean_of(b);
    const double va = sample_sd(a) * sample_sd(a), vb = sample_sd(b) * sample_sd(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double se2 = va / na + vb / nb;
    mean_sign = ma - mb;
    if (se2 == 0.0) {
      zero_var = true;
      dof = na + nb - 2.0;
    } else {
      t = (ma - mb) / std::sqrt(se2);
      // Welch-Satterthwaite
      dof = se2 * se2 /
            (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
    }
  } else {
    throw std::invalid_argument("t_test: unsupported kind");
  }

  r.dof1 = dof;
  if (zero_var) {
    r.zero_variance = true;
    if (mean_sign == 0.0) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = mean_sign > 0 ? std::numeric_limits<double>::infinity()
                                  : -std::numeric_limits<double>::infinity();
      if (sided == Sided::greater)
        r.p_value = mean_sign > 0 ? 0.0 : 1.0;
      else
        r.p_value = 0.0;
    }
    return r;
  }

  r.statistic = t;
  const double sf = student_t_sf(t, dof);
  r.p_value = sided == Sided::greater ? sf : 2.0 * std::min(sf, 1.0 - sf);
  return r;
}

StatResult class_score_ttest(const ScoreSet& s) {
  check_two_classes(s);
  VecD pos, neg;
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    (s.labels[i] ? pos : neg).push_back(s.scores[i]);
  if (pos.size() < 2 || neg.size() < 2)
    throw std::runtime_error("class score t-test needs n >= 2 per class");
  return t_test(pos, neg, StatKind::independent_t, Sided::two_sided);
}

}  // namespace milreg
