#include "milreg/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "milreg/common.hpp"
#include "milreg/stats.hpp"

namespace milreg {

namespace {
constexpr double kScoreTol = 1e-8;    // max |gradient| at convergence
constexpr double kLoglikTol = 1e-10;  // relative log-likelihood change
constexpr double kBetaDivergeLimit = 20.0;
constexpr int kMaxNewtonIter = 100;
}  // namespace

void SurvivalDataset::validate() const {
  const std::size_t n = times.size();
  if (n == 0 || events.size() != n || x.rows != n)
    throw std::invalid_argument("survival dataset: shape mismatch");
  if (x.cols == 0 || covariate_names.size() != x.cols)
    throw std::invalid_argument("survival dataset: covariate names mismatch");
  std::size_t n_events = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(times[i] > 0.0)) throw std::runtime_error("survival times must be positive");
    n_events += events[i] != 0;
  }
  if (n_events == 0) throw std::runtime_error("survival dataset has no events");
  if (n_events < x.cols + 1)
    throw std::runtime_error("too few events for " + std::to_string(x.cols) + " covariates");

  // full column rank after centering, checked through the Gram matrix
  MatD gram(x.cols, x.cols);
  VecD mean(x.cols, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) mean[j] += x.at(i, j) / double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x.cols; ++j)
      for (std::size_t l = j; l < x.cols; ++l)
        gram.at(j, l) += (x.at(i, j) - mean[j]) * (x.at(i, l) - mean[l]);
  for (std::size_t j = 0; j < x.cols; ++j)
    for (std::size_t l = 0; l < j; ++l) gram.at(j, l) = gram.at(l, j);
  try {
    cholesky_solve(gram, VecD(x.cols, 0.0));
  } catch (const std::exception&) {
    throw std::runtime_error("rank-deficient covariate matrix");
  }
}

double cox_partial_loglik(const SurvivalDataset& data, const VecD& beta, VecD* grad, MatD* info) {
  const std::size_t n = data.times.size(), p = data.x.cols;
  if (beta.size() != p) throw std::invalid_argument("beta size mismatch");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return data.times[a] > data.times[b]; });

  if (grad) grad->assign(p, 0.0);
  if (info) *info = MatD(p, p);

  // risk-set accumulators, built by sweeping times descending
  double s0 = 0.0;
  VecD s1(p, 0.0);
  MatD s2(p, p);

  double ll = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = data.times[order[i]];
    std::size_t j = i;
    // pull every subject with this time into the risk set
    std::vector<std::size_t> deaths;
    while (j < n && data.times[order[j]] == t) {
      const std::size_t idx = order[j];
      const double* xi = data.x.row(idx);
      double eta = 0.0;
      for (std::size_t c = 0; c < p; ++c) eta += beta[c] * xi[c];
      const double r = std::exp(eta);
      s0 += r;
      for (std::size_t c = 0; c < p; ++c) {
        s1[c] += r * xi[c];
        for (std::size_t e = 0; e < p; ++e) s2.at(c, e) += r * xi[c] * xi[e];
      }
      if (data.events[idx]) deaths.push_back(idx);
      ++j;
    }

    if (!deaths.empty()) {
      const double d = static_cast<double>(deaths.size());
      double d0 = 0.0;
      VecD d1(p, 0.0);
      MatD d2(p, p);
      for (std::size_t idx : deaths) {
        const double* xi = data.x.row(idx);
        double eta = 0.0;
        for (std::size_t c = 0; c < p; ++c) eta += beta[c] * xi[c];
        ll += eta;
        const double r = std::exp(eta);
        d0 += r;
        for (std::size_t c = 0; c < p; ++c) {
          if (grad) (*grad)[c] += xi[c];
          d1[c] += r * xi[c];
          for (std::size_t e = 0; e < p; ++e) d2.at(c, e) += r * xi[c] * xi[e];
        }
      }
      for (std::size_t l = 0; l < deaths.size(); ++l) {
        const double f = static_cast<double>(l) / d;
        const double a0 = s0 - f * d0;
        ll -= std::log(a0);
        if (grad || info) {
          VecD a1(p);
          for (std::size_t c = 0; c < p; ++c) a1[c] = s1[c] - f * d1[c];
          if (grad)
            for (std::size_t c = 0; c < p; ++c) (*grad)[c] -= a1[c] / a0;
          if (info) {
            for (std::size_t c = 0; c < p; ++c)
              for (std::size_t e = 0; e < p; ++e) {
                const double a2 = s2.at(c, e) - f * d2.at(c, e);
                info->at(c, e) += a2 / a0 - a1[c] * a1[e] / (a0 * a0);
              }
          }
        }
      }
    }
    i = j;
  }
  return ll;
}

CoxResult fit_cox(const SurvivalDataset& data) {
  data.validate();
  const std::size_t p = data.x.cols;

  CoxResult result;
  VecD beta(p, 0.0);
  double ll = cox_partial_loglik(data, beta, nullptr, nullptr);

  VecD grad(p);
  MatD info(p, p);
  for (int iter = 1; iter <= kMaxNewtonIter; ++iter) {
    result.iterations = iter;
    cox_partial_loglik(data, beta, &grad, &info);

    // a diverging coefficient means a monotone likelihood (perfect
    // separation); the score also vanishes there, so test this first
    double max_beta = 0.0;
    for (double b : beta) max_beta = std::max(max_beta, std::abs(b));
    if (max_beta > kBetaDivergeLimit) {
      result.monotone_likelihood = true;
      result.converged = false;
      break;
    }

    double max_score = 0.0;
    for (double g : grad) max_score = std::max(max_score, std::abs(g));
    if (max_score < kScoreTol) {
      result.converged = true;
      break;
    }

    VecD step;
    try {
      step = cholesky_solve(info, grad);
    } catch (const std::exception&) {
      throw std::runtime_error("rank-deficient information matrix in Cox fit");
    }

    // step halving keeps the partial likelihood non-decreasing
    double lambda = 1.0;
    VecD candidate(p);
    double new_ll = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 40; ++h) {
      for (std::size_t c = 0; c < p; ++c) candidate[c] = beta[c] + lambda * step[c];
      new_ll = cox_partial_loglik(data, candidate, nullptr, nullptr);
      if (new_ll >= ll - 1e-12) break;
      lambda *= 0.5;
    }
    beta = candidate;

    const double rel = std::abs(new_ll - ll) / std::max(1.0, std::abs(ll));
    ll = new_ll;
    if (rel < kLoglikTol) {
      result.converged = true;
      break;
    }
  }

  cox_partial_loglik(data, beta, &grad, &info);
  result.log_likelihood = ll;

  MatD cov;
  try {
    cov = spd_inverse(info);
  } catch (const std::exception&) {
    throw std::runtime_error("rank-deficient information matrix in Cox fit");
  }

  for (std::size_t c = 0; c < p; ++c) {
    CoxRow row;
    row.name = data.covariate_names[c];
    row.beta = beta[c];
    row.se = std::sqrt(std::max(0.0, cov.at(c, c)));
    row.hr = std::exp(beta[c]);
    row.ci_low = std::exp(beta[c] - 1.96 * row.se);
    row.ci_high = std::exp(beta[c] + 1.96 * row.se);
    row.p = row.se > 0.0 ? 2.0 * normal_sf(std::abs(beta[c]) / row.se) : 1.0;
    row.significant = !(row.ci_low <= 1.0 && 1.0 <= row.ci_high);
    // an enormous coefficient with a vanishing Wald statistic is the other
    // face of a monotone likelihood: the score converged on a runaway path
    if (std::abs(row.beta) > 10.0 && (row.se == 0.0 || std::abs(row.beta) / row.se < 0.1)) {
      result.monotone_likelihood = true;
      result.converged = false;
    }
    result.rows.push_back(row);
  }
  return result;
}

PrognosisReport score_prognosis(const Cohort& cohort, const std::vector<ModelParams>& fold_models,
                                ScoreMode mode, CovariateSet covariates) {
  if (fold_models.empty()) throw std::invalid_argument("score_prognosis needs fold models");
  for (const ModelParams& m : fold_models)
    if (m.d != fold_models[0].d || m.out != fold_models[0].out)
      throw std::runtime_error("fold models disagree on architecture");
  const bool classification = fold_models[0].out == 2;

  PrognosisReport report;
  for (const auto& [id, bag] : cohort.bags) {
    if (!cohort.record(id).has_survival()) continue;
    double sum = 0.0;
    for (const ModelParams& m : fold_models) {
      const BagOutput out = forward_bag(bag, m, /*train_mode=*/false);
      if (classification) {
        // dichotomized label per deployed model
        sum += out.prediction[1] > out.prediction[0] ? 1.0 : 0.0;
      } else {
        sum += out.prediction[0];
      }
    }
    report.patient_scores[id] = sum / static_cast<double>(fold_models.size());
  }
  if (report.patient_scores.empty()) throw std::runtime_error("no patients with survival data");

  std::map<std::string, double> scores = report.patient_scores;
  if (classification) {
    // mean of dichotomized deployments -> majority label
    for (auto& [id, s] : scores) s = s >= 0.5 ? 1.0 : 0.0;
  } else if (mode == ScoreMode::binarized_at_median) {
    VecD vals;
    for (const auto& [id, s] : scores) vals.push_back(s);
    const double med = lower_median(vals);
    for (auto& [id, s] : scores) s = s > med ? 1.0 : 0.0;
  }

  SurvivalDataset data;
  data.covariate_names.push_back("score");
  if (covariates == CovariateSet::age_sex_stage) {
    data.covariate_names.push_back("age");
    data.covariate_names.push_back("sex");
    data.covariate_names.push_back("stage");
  }
  std::vector<VecD> rows;
  for (const auto& [id, s] : scores) {
    const PatientRecord& rec = cohort.record(id);
    VecD row{s};
    if (covariates == CovariateSet::age_sex_stage) {
      // listwise deletion of patients with missing covariates
      if (std::isnan(rec.age) || rec.sex == Sex::unknown || rec.stage < 1) {
        ++report.n_dropped_missing;
        continue;
      }
      row.push_back(rec.age);
      row.push_back(rec.sex == Sex::male ? 1.0 : 0.0);
      row.push_back(static_cast<double>(rec.stage));
    }
    rows.push_back(row);
    data.times.push_back(rec.survival_days);
    data.events.push_back(rec.event);
  }
  data.x = MatD(rows.size(), data.covariate_names.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) data.x.at(i, j) = rows[i][j];

  report.n_used = data.times.size();
  for (int e : data.events) report.n_events += e != 0;
  report.cox = fit_cox(data);
  return report;
}

void write_survival_csv(const std::string& path, const std::string& model,
                        const std::string& mode, const PrognosisReport& report) {
  std::ostringstream out;
  out << "model,mode,covariate,hr,ci_low,ci_high,p,n_used,n_events\n";
  for (const CoxRow& row : report.cox.rows)
    out << model << ',' << mode << ',' << row.name << ',' << fmt_double(row.hr) << ','
        << fmt_double(row.ci_low) << ',' << fmt_double(row.ci_high) << ',' << fmt_double(row.p)
        << ',' << report.n_used << ',' << report.n_events << '\n';
  write_file_bytes(path, out.str());
}

}  // namespace milreg
