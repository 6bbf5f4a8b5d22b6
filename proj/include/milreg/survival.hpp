#pragma once
// Cox proportional-hazards fitting (Efron tie handling, Newton-Raphson with
// step halving) and model-score prognosis on a cohort.
#include <map>
#include <string>
#include <vector>

#include "milreg/attmil.hpp"
#include "milreg/data_model.hpp"
#include "milreg/linalg.hpp"

namespace milreg {

struct SurvivalDataset {
  VecD times;               // positive, days
  std::vector<int> events;  // 1 = death observed
  MatD x;                   // n x p covariates
  std::vector<std::string> covariate_names;

  void validate() const;
};

struct CoxRow {
  std::string name;
  double beta = 0.0, se = 0.0;
  double hr = 1.0, ci_low = 1.0, ci_high = 1.0;
  double p = 1.0;
  bool significant = false;  // 1 outside the 95% CI
};

struct CoxResult {
  std::vector<CoxRow> rows;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  bool monotone_likelihood = false;  // |beta| diverging (perfect separation)
};

// Efron partial log-likelihood, gradient and information at beta (exposed
// for the fitting loop; tests carry their own independent version).
double cox_partial_loglik(const SurvivalDataset& data, const VecD& beta, VecD* grad = nullptr,
                          MatD* info = nullptr);

CoxResult fit_cox(const SurvivalDataset& data);

enum class ScoreMode { continuous, binarized_at_median };
enum class CovariateSet { none, age_sex_stage };

struct PrognosisReport {
  CoxResult cox;
  std::size_t n_used = 0, n_events = 0, n_dropped_missing = 0;
  std::map<std::string, double> patient_scores;  // mean over fold models
};

// Deploys every fold model on each patient with survival data, averages the
// scores (classification models contribute dichotomized labels), optionally
// binarizes at the cohort median, and fits the uni-/multivariate Cox model.
PrognosisReport score_prognosis(const Cohort& cohort, const std::vector<ModelParams>& fold_models,
                                ScoreMode mode, CovariateSet covariates);

void write_survival_csv(const std::string& path, const std::string& model,
                        const std::string& mode, const PrognosisReport& report);

}  // namespace milreg
