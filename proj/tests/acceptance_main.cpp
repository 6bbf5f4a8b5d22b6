// Acceptance suite: runs every acceptance experiment at its stated tolerance
// and prints one [PASS]/[FAIL] line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "milreg/attmil.hpp"
#include "milreg/common.hpp"
#include "milreg/evaluation.hpp"
#include "milreg/manifest.hpp"
#include "milreg/pipeline.hpp"
#include "milreg/splitting.hpp"
#include "milreg/survival.hpp"
#include "milreg/synth.hpp"
#include "milreg/tile_prep.hpp"
#include "milreg/training.hpp"

using namespace milreg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void criterion(int index, const std::string& name, const std::function<bool(std::string&)>& fn) {
  std::string detail;
  bool ok = false;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ok = fn(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", index, name.c_str(),
              secs, detail.empty() ? "" : " - ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

// ---------------------------------------------------------------------------
// 1. gradient correctness
// ---------------------------------------------------------------------------

double loss_of(const FeatureBag& bag, const ModelParams& params, int loss_kind, int label,
               double target, const LossConfig& cfg) {
  const BagOutput out = forward_bag(bag, params, false);
  switch (loss_kind) {
    case 0:
      return mse_loss(out.prediction[0], target).loss;
    case 1:
      return balanced_mse(out.prediction[0], target, cfg).loss;
    default:
      return weighted_cross_entropy(out.prediction, label, cfg).loss;
  }
}

bool check_gradients(std::string& detail) {
  Rng rng(20240);
  double worst = 0.0;
  int done = 0;
  while (done < 100) {
    const std::size_t n = 1 + rng.below(8), d = 2 + rng.below(15);
    const int loss_kind = done % 3;  // mse, balanced mse, weighted CE
    const std::size_t out_dim = loss_kind == 2 ? 2 : 1;

    FeatureBag bag;
    bag.patient_id = "A";
    bag.features = MatF(n, d);
    for (float& v : bag.features.a) v = static_cast<float>(rng.normal());
    ModelParams params = init_params(d, 6, 8, out_dim, 0.0, done % 5 == 0, false,
                                     rng.next_u64());

    // central differences need local smoothness; resample when a hidden unit
    // sits on its relu kink
    ForwardCache cache;
    forward_bag(bag, params, false, nullptr, &cache);
    double min_pre = 1e300;
    for (double p : cache.pre1) min_pre = std::min(min_pre, std::abs(p));
    if (min_pre < 1e-3) continue;

    LossConfig cfg;
    cfg.class_weights[0] = 0.6 + rng.uniform();
    cfg.class_weights[1] = 0.6 + rng.uniform();
    cfg.sigma2 = 0.05 + rng.uniform();
    const std::size_t m = 1 + rng.below(8);
    cfg.candidate_labels.resize(m);
    for (double& y : cfg.candidate_labels) y = rng.normal();
    const double target = cfg.candidate_labels[rng.below(m)];
    const int label = static_cast<int>(rng.below(2));

    // analytic gradient through the loss
    const BagOutput fwd = forward_bag(bag, params, false, nullptr, &cache);
    VecD dpred;
    switch (loss_kind) {
      case 0:
        dpred = mse_loss(fwd.prediction[0], target).grad;
        break;
      case 1:
        dpred = balanced_mse(fwd.prediction[0], target, cfg).grad;
        break;
      default:
        dpred = weighted_cross_entropy(fwd.prediction, label, cfg).grad;
        break;
    }
    ParamGrads grads = backward_bag(bag, params, cache, dpred);

    const double h = 1e-4;
    auto ptensors = param_tensors(params);
    auto gtensors = grad_tensors(grads, params);
    for (std::size_t k = 0; k < ptensors.size(); ++k) {
      VecD& theta = *ptensors[k].data;
      const VecD& analytic = *gtensors[k].data;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double save = theta[i];
        theta[i] = save + h;
        const double up = loss_of(bag, params, loss_kind, label, target, cfg);
        theta[i] = save - h;
        const double down = loss_of(bag, params, loss_kind, label, target, cfg);
        theta[i] = save;
        const double fd = (up - down) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-2});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
      }
    }
    ++done;
  }
  std::ostringstream os;
  os << "max rel err " << worst;
  detail = os.str();
  return worst <= 1e-4;
}

// ---------------------------------------------------------------------------
// 2. AUROC oracle equivalence
// ---------------------------------------------------------------------------

double auroc_pairwise_oracle(const ScoreSet& s) {
  double sum = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (!s.labels[i]) continue;
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
      if (s.labels[j]) continue;
      pairs += 1.0;
      if (s.scores[i] > s.scores[j])
        sum += 1.0;
      else if (s.scores[i] == s.scores[j])
        sum += 0.5;
    }
  }
  return sum / pairs;
}

bool check_auroc(std::string& detail) {
  Rng rng(20241);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    ScoreSet s;
    bool has0 = false, has1 = false;
    const bool ties = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s.scores.push_back(ties ? static_cast<double>(rng.below(10)) / 9.0 : rng.normal());
      const int label = static_cast<int>(rng.below(2));
      s.labels.push_back(label);
      (label ? has1 : has0) = true;
    }
    if (!has0) s.labels[0] = 0;
    if (!has1) s.labels[n - 1] = 1;
    if (binary_metrics(s).auroc != auroc_pairwise_oracle(s)) {
      detail = "mismatch at trial " + std::to_string(trial);
      return false;
    }
  }
  detail = "1000/1000 exact, ties included";
  return true;
}

// ---------------------------------------------------------------------------
// 3. Cox correctness
// ---------------------------------------------------------------------------

double efron_loglik_1d(const VecD& times, const std::vector<int>& events, const VecD& x,
                       double beta) {
  const std::size_t n = times.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  double ll = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double t = times[order[i]];
    std::vector<std::size_t> deaths;
    std::size_t j = i;
    while (j < n && times[order[j]] == t) {
      if (events[order[j]]) deaths.push_back(order[j]);
      ++j;
    }
    if (!deaths.empty()) {
      double risk = 0.0, dsum = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (times[k] >= t) risk += std::exp(beta * x[k]);
      for (std::size_t idx : deaths) dsum += std::exp(beta * x[idx]);
      const double d = static_cast<double>(deaths.size());
      for (std::size_t idx : deaths) ll += beta * x[idx];
      for (std::size_t l = 0; l < deaths.size(); ++l)
        ll -= std::log(risk - (static_cast<double>(l) / d) * dsum);
    }
    i = j;
  }
  return ll;
}

bool check_cox(std::string& detail) {
  Rng rng(20242);
  double worst = 0.0;
  int compared = 0;
  while (compared < 50) {
    const std::size_t n = 12;
    VecD times(n), x(n);
    std::vector<int> events(n);
    for (std::size_t i = 0; i < n; ++i) {
      times[i] = 1.0 + rng.below(8);
      x[i] = rng.normal();
      events[i] = rng.below(4) > 0 ? 1 : 0;
    }
    events[0] = events[1] = 1;
    SurvivalDataset data;
    data.times = times;
    data.events = events;
    data.covariate_names = {"x"};
    data.x = MatD(n, 1);
    for (std::size_t i = 0; i < n; ++i) data.x.at(i, 0) = x[i];

    CoxResult fit;
    try {
      fit = fit_cox(data);
    } catch (const std::exception&) {
      continue;
    }
    if (fit.monotone_likelihood) continue;

    double best_beta = 0.0, best_ll = -1e300;
    for (double beta = -5.0; beta <= 5.0 + 1e-12; beta += 1e-4) {
      const double ll = efron_loglik_1d(times, events, x, beta);
      if (ll > best_ll) {
        best_ll = ll;
        best_beta = beta;
      }
    }
    if (std::abs(best_beta) > 4.5) continue;
    worst = std::max(worst, std::abs(fit.rows[0].beta - best_beta));
    ++compared;
  }
  if (worst > 1e-3) {
    detail = "grid-oracle deviation " + fmt_double(worst);
    return false;
  }

  // symmetric dataset: unit hazard ratio
  SurvivalDataset sym;
  sym.times = {1, 1, 2, 2};
  sym.events = {1, 1, 1, 1};
  sym.covariate_names = {"x"};
  sym.x = MatD(4, 1);
  sym.x.at(0, 0) = 1;
  sym.x.at(1, 0) = 0;
  sym.x.at(2, 0) = 0;
  sym.x.at(3, 0) = 1;
  const CoxResult s = fit_cox(sym);
  if (std::abs(s.rows[0].hr - 1.0) > 1e-6) {
    detail = "symmetry hr " + fmt_double(s.rows[0].hr);
    return false;
  }

  // generator-known hazard: hr for the true fraction near exp(-2)
  SynthConfig cfg;
  cfg.n_patients = 500;
  cfg.d = 4;
  cfg.hazard_coef = -2.0;
  cfg.seed = 17;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);
  SurvivalDataset synth;
  synth.covariate_names = {"fraction"};
  synth.x = MatD(cfg.n_patients, 1);
  std::size_t row = 0;
  for (const auto& [id, rec] : cohort.records) {
    synth.times.push_back(rec.survival_days);
    synth.events.push_back(rec.event);
    synth.x.at(row++, 0) = truth.signal_fraction.at(id);
  }
  const CoxResult c = fit_cox(synth);
  const double target_hr = std::exp(-2.0);
  std::ostringstream os;
  os << "grid dev " << fmt_double(worst) << ", synth hr " << fmt_double(c.rows[0].hr)
     << " (target " << fmt_double(target_hr) << " +- 0.05)";
  detail = os.str();
  return std::abs(c.rows[0].hr - target_hr) <= 0.05;
}

// ---------------------------------------------------------------------------
// 4. split safety
// ---------------------------------------------------------------------------

struct SiteCount {
  int n, n_pos;
};

// enumerate partitions of the sites into exactly k unlabeled groups
void enumerate_partitions(std::vector<int>& assign, std::size_t i, int used, int k,
                          const std::function<void(const std::vector<int>&)>& fn) {
  if (i == assign.size()) {
    if (used == k) fn(assign);
    return;
  }
  for (int g = 0; g < std::min(used + 1, k); ++g) {
    assign[i] = g;
    enumerate_partitions(assign, i + 1, std::max(used, g + 1), k, fn);
  }
}

bool check_splits(std::string& detail) {
  Rng rng(20243);
  const int k = 5;
  int oracle_checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n_sites = k + static_cast<int>(rng.below(6));  // 5..10
    std::vector<SiteCount> sites(n_sites);
    Cohort cohort;
    std::map<std::string, int> labels;
    const double rate = 0.2 + 0.6 * rng.uniform();
    int serial = 0;
    for (int s = 0; s < n_sites; ++s) {
      sites[s].n = 3 + static_cast<int>(rng.below(23));
      sites[s].n_pos = 0;
      for (int i = 0; i < sites[s].n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "P%04d", serial++);
        const int label = rng.uniform() < rate ? 1 : 0;
        sites[s].n_pos += label;
        PatientRecord rec;
        rec.patient_id = buf;
        rec.site_id = "S" + std::to_string(s);
        rec.target = label;
        cohort.records[buf] = rec;
        FeatureBag bag;
        bag.patient_id = buf;
        bag.features = MatF(1, 2, 0.0f);
        cohort.bags[buf] = bag;
        labels[buf] = label;
      }
    }

    FoldPlan plan;
    try {
      plan = site_aware_folds(cohort, labels, k, 0.2, rng.next_u64(), 0.1);
    } catch (const std::exception& e) {
      const std::string what = e.what();
      if (what.find("site dominates") != std::string::npos) continue;
      detail = "trial " + std::to_string(trial) + ": " + what;
      return false;
    }

    // hard invariants: site atomicity and exactly-once test membership
    std::map<std::string, int> test_count;
    for (const FoldAssignment& fold : plan.folds) {
      std::set<std::string> test_sites, nontest_sites;
      for (const std::string& id : fold.test_ids) {
        test_sites.insert(cohort.record(id).site_id);
        ++test_count[id];
      }
      for (const std::string& id : fold.train_ids)
        nontest_sites.insert(cohort.record(id).site_id);
      for (const std::string& id : fold.val_ids) nontest_sites.insert(cohort.record(id).site_id);
      for (const std::string& site : test_sites)
        if (nontest_sites.count(site)) {
          detail = "site leakage in trial " + std::to_string(trial);
          return false;
        }
    }
    for (const auto& [id, count] : test_count)
      if (count != 1) {
        detail = "patient in " + std::to_string(count) + " test sets, trial " +
                 std::to_string(trial);
        return false;
      }

    // class-rate deviation against the exhaustive oracle (<= 10 sites)
    double n_total = 0.0, pos_total = 0.0;
    for (const SiteCount& s : sites) {
      n_total += s.n;
      pos_total += s.n_pos;
    }
    const double global_rate = pos_total / n_total;
    double achieved = 0.0;
    for (const FoldAssignment& fold : plan.folds) {
      if (fold.test_ids.empty()) continue;
      double pos = 0.0;
      for (const std::string& id : fold.test_ids) pos += labels.at(id);
      achieved = std::max(achieved,
                          std::abs(pos / static_cast<double>(fold.test_ids.size()) - global_rate));
    }

    double oracle_best = 1e300;
    std::vector<int> assign(n_sites, -1);
    enumerate_partitions(assign, 0, 0, k, [&](const std::vector<int>& a) {
      std::vector<double> size(k, 0.0), pos(k, 0.0);
      for (int s = 0; s < n_sites; ++s) {
        size[a[s]] += sites[s].n;
        pos[a[s]] += sites[s].n_pos;
      }
      double dev = 0.0;
      for (int g = 0; g < k; ++g) dev = std::max(dev, std::abs(pos[g] / size[g] - global_rate));
      oracle_best = std::min(oracle_best, dev);
    });
    ++oracle_checked;
    if (oracle_best <= 0.1 && achieved > 0.1) {
      detail = "trial " + std::to_string(trial) + ": achieved " + fmt_double(achieved) +
               " though " + fmt_double(oracle_best) + " exists";
      return false;
    }
  }
  detail = std::to_string(oracle_checked) + " cohorts, oracle-checked";
  return true;
}

// ---------------------------------------------------------------------------
// 5 + 6. the synthetic comparison experiment and the SGD ablation
// ---------------------------------------------------------------------------

struct ExperimentState {
  Cohort cohort;
  TargetSpec target;
  FoldPlan plan;
  CompareOutcome outcome;
};

ExperimentState g_experiment;

bool check_separation(std::string& detail) {
  SynthConfig cfg;  // the pinned desk-scale cohort
  cfg.n_patients = 200;
  cfg.d = 32;
  cfg.signal_strength = 1.0;
  cfg.label_noise_sd = 0.05;
  cfg.seed = 17;
  g_experiment.cohort = generate_cohort(cfg);

  const auto values = g_experiment.cohort.target_values();
  std::set<std::string> ids;
  for (const auto& [id, v] : values) ids.insert(id);
  const auto labels = binarize_target(values, g_experiment.target, ids);
  g_experiment.plan = site_aware_folds(g_experiment.cohort, labels, 5, 0.2, cfg.seed, 0.1);

  g_experiment.outcome =
      run_compare(g_experiment.cohort, g_experiment.target, g_experiment.plan, cfg.seed);
  const CompareOutcome& out = g_experiment.outcome;

  // held-out R^2 pooled over the five test folds
  const RegressionMetrics rm = regression_metrics(out.pooled.at("camil_regression"));

  double reg_auroc = 0.0, clf_auroc = 0.0;
  for (int f = 0; f < 5; ++f) {
    reg_auroc += out.auroc_matrix.at(f, 2) / 5.0;
    clf_auroc += out.auroc_matrix.at(f, 0) / 5.0;
  }

  int sharper = 0;
  for (int f = 0; f < 5; ++f)
    sharper += out.fold_reports.at("camil_regression")[f].separation.separation_delta >
               out.fold_reports.at("camil_classification")[f].separation.separation_delta;

  std::ostringstream os;
  os << "pooled R^2 " << fmt_double(rm.r2) << ", auroc reg " << fmt_double(reg_auroc) << " vs clf "
     << fmt_double(clf_auroc) << ", regression sharper on " << sharper << "/5 folds";
  detail = os.str();
  return rm.r2 >= 0.5 && reg_auroc >= clf_auroc - 0.02 && sharper >= 4;
}

bool check_ablation(std::string& detail) {
  const ExperimentState& ex = g_experiment;
  if (ex.outcome.fold_models.empty()) {
    detail = "criterion 5 did not run";
    return false;
  }
  const ModelParams& adam_model = ex.outcome.fold_models.at("camil_regression")[0];
  const TrainPreset sgd_preset = ablate(preset(PresetKind::camil_regression), AblationToggle::use_sgd);
  const TrainResult sgd =
      train_model(ex.cohort, ex.plan, 0, sgd_preset, ex.target, derive_seed(17, 0));

  auto range_width = [&](const ModelParams& model) {
    double mn = 1e300, mx = -1e300;
    for (const std::string& id : ex.plan.folds[0].test_ids) {
      const double score = deploy_score(ex.cohort.bag(id), model);
      mn = std::min(mn, score);
      mx = std::max(mx, score);
    }
    return mx - mn;
  };
  const double adam_width = range_width(adam_model);
  const double sgd_width = range_width(sgd.params);
  std::ostringstream os;
  os << "sgd width " << fmt_double(sgd_width) << " vs adam " << fmt_double(adam_width);
  detail = os.str();
  return sgd_width <= 0.5 * adam_width;
}

// ---------------------------------------------------------------------------
// 7 + 8. statistics correctness and the separation-improvement formula
// ---------------------------------------------------------------------------

bool check_statistics(std::string& detail) {
  // dof (k-1, (k-1)(n-1)) for k=3 treatments over n=5 folds
  MatD m(5, 3);
  Rng rng(20247);
  for (double& v : m.a) v = rng.uniform(0.5, 0.9);
  const StatResult anova = rm_anova(m);
  if (anova.dof1 != 2.0 || anova.dof2 != 8.0) {
    detail = "anova dof mismatch";
    return false;
  }

  // from-scratch sums-of-squares oracle
  double grand = 0.0;
  for (double v : m.a) grand += v;
  grand /= 15.0;
  double ss_treat = 0.0, ss_subj = 0.0, ss_tot = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double cm = 0.0;
    for (std::size_t i = 0; i < 5; ++i) cm += m.at(i, j);
    cm /= 5.0;
    ss_treat += 5.0 * (cm - grand) * (cm - grand);
  }
  for (std::size_t i = 0; i < 5; ++i) {
    double rm_ = 0.0;
    for (std::size_t j = 0; j < 3; ++j) rm_ += m.at(i, j);
    rm_ /= 3.0;
    ss_subj += 3.0 * (rm_ - grand) * (rm_ - grand);
  }
  for (double v : m.a) ss_tot += (v - grand) * (v - grand);
  const double f_oracle = (ss_treat / 2.0) / ((ss_tot - ss_subj - ss_treat) / 8.0);
  if (std::abs(anova.statistic - f_oracle) > 1e-10) {
    detail = "anova F deviates from the oracle";
    return false;
  }

  // paired t against the direct formula
  VecD a(5), b(5);
  for (int i = 0; i < 5; ++i) {
    a[i] = rng.uniform(0.4, 0.9);
    b[i] = rng.uniform(0.4, 0.9);
  }
  VecD d(5);
  for (int i = 0; i < 5; ++i) d[i] = a[i] - b[i];
  const double t_oracle = mean_of(d) / (sample_sd(d) / std::sqrt(5.0));
  const StatResult t = t_test(a, b, StatKind::paired_t, Sided::two_sided);
  if (std::abs(t.statistic - t_oracle) > 1e-10) {
    detail = "paired t deviates from the oracle";
    return false;
  }

  const StatResult bonf = t_test(a, b, StatKind::paired_t, Sided::greater, 2);
  if (bonf.alpha_effective != 0.025) {
    detail = "Bonferroni threshold is not 0.025";
    return false;
  }
  detail = "anova F " + fmt_double(anova.statistic) + ", paired t " + fmt_double(t.statistic);
  return true;
}

bool check_improvement(std::string& detail) {
  const double delta_clf = 0.64 - 0.43;
  const double delta_reg = 0.53 - 0.26;
  const double pct = improvement_pct(delta_reg, delta_clf);
  detail = "improvement " + fmt_double(pct) + "% vs published 29.5%";
  return std::abs(pct - 29.5) <= 2.0;
}

// ---------------------------------------------------------------------------
// 9. stain pipeline
// ---------------------------------------------------------------------------

bool check_stains(std::string& detail) {
  Rng rng(20249);
  MatD truth(3, 2);
  {
    const double h[3] = {0.65, 0.70, 0.29}, e[3] = {0.07, 0.99, 0.11};
    const double nh = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
    const double ne = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
    for (int r = 0; r < 3; ++r) {
      truth.at(r, 0) = h[r] / nh;
      truth.at(r, 1) = e[r] / ne;
    }
  }
  Patch p;
  p.pixels.width = kTilePx;
  p.pixels.height = kTilePx;
  p.pixels.pixels.resize(static_cast<std::size_t>(kTilePx) * kTilePx * 3);
  for (int i = 0; i < kTilePx * kTilePx; ++i) {
    double c1, c2;
    const auto kind = rng.below(5);
    if (kind == 0) {
      c1 = rng.uniform(0.4, 1.4);
      c2 = rng.uniform(0.0, 0.02);
    } else if (kind == 1) {
      c1 = rng.uniform(0.0, 0.02);
      c2 = rng.uniform(0.4, 1.4);
    } else {
      c1 = rng.uniform(0.05, 1.4);
      c2 = rng.uniform(0.05, 1.4);
    }
    for (int r = 0; r < 3; ++r) {
      const double od = truth.at(r, 0) * c1 + truth.at(r, 1) * c2;
      p.pixels.pixels[3 * i + r] = static_cast<std::uint8_t>(
          std::clamp(std::round(256.0 * std::pow(10.0, -od) - 1.0), 0.0, 255.0));
    }
  }

  const StainProfile profile = estimate_stains(p);
  double max_angle = 0.0;
  for (int c = 0; c < 2; ++c) {
    double dot = 0.0;
    for (int r = 0; r < 3; ++r) dot += profile.stain_matrix.at(r, c) * truth.at(r, c);
    max_angle = std::max(max_angle,
                         std::acos(std::clamp(std::abs(dot), 0.0, 1.0)) * 180.0 / M_PI);
  }
  if (max_angle > 2.0) {
    detail = "stain recovery angle " + fmt_double(max_angle) + " deg";
    return false;
  }

  const Patch self = normalize_patch(p, profile, profile);
  double mad = 0.0;
  for (std::size_t i = 0; i < p.pixels.pixels.size(); ++i)
    mad += std::abs(double(p.pixels.pixels[i]) - double(self.pixels.pixels[i]));
  mad /= static_cast<double>(p.pixels.pixels.size());
  if (mad > 2.0) {
    detail = "self-normalization MAD " + fmt_double(mad);
    return false;
  }

  Patch white;
  white.pixels.width = kTilePx;
  white.pixels.height = kTilePx;
  white.pixels.pixels.assign(static_cast<std::size_t>(kTilePx) * kTilePx * 3, 255);
  if (!reject_patch(white)) {
    detail = "all-white patch was kept";
    return false;
  }
  detail = "angle " + fmt_double(max_angle) + " deg, self MAD " + fmt_double(mad);
  return true;
}

// ---------------------------------------------------------------------------
// 10. determinism
// ---------------------------------------------------------------------------

struct ChainArtifacts {
  std::string features_bytes, clinical, plan_csv, checkpoint, metrics_csv;
};

ChainArtifacts run_chain(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  SynthConfig cfg;
  cfg.n_patients = 60;
  cfg.d = 8;
  cfg.seed = 4711;
  SynthTruth truth;
  const Cohort cohort = generate_cohort(cfg, &truth);
  write_synth_cohort(cohort, truth, dir.string());

  TargetSpec target;
  const auto values = cohort.target_values();
  std::set<std::string> ids;
  for (const auto& [id, v] : values) ids.insert(id);
  const auto labels = binarize_target(values, target, ids);
  const FoldPlan plan = site_aware_folds(cohort, labels, 4, 0.2, cfg.seed, 1.0);
  write_fold_plan_csv((dir / "foldplan.csv").string(), plan);

  TrainPreset p = preset(PresetKind::camil_regression);
  p.epochs = 5;
  const TrainResult tr = train_model(cohort, plan, 0, p, target, cfg.seed);
  save_checkpoint((dir / "model.milm").string(), tr.params);

  const FoldEvaluation ev = evaluate_fold(cohort, plan, 0, tr.params, target);
  std::ostringstream metrics;
  metrics << fmt_double(ev.report.auroc) << ',' << fmt_double(ev.report.auprc) << ','
          << fmt_double(ev.report.separation.separation_delta);
  write_file_bytes((dir / "metrics.csv").string(), metrics.str());

  ChainArtifacts out;
  std::vector<std::string> feature_files;
  for (const auto& entry : fs::directory_iterator(dir / "features"))
    feature_files.push_back(entry.path().string());
  std::sort(feature_files.begin(), feature_files.end());
  for (const std::string& f : feature_files) out.features_bytes += read_file_bytes(f);
  out.clinical = read_file_bytes((dir / "clinical.csv").string());
  out.plan_csv = read_file_bytes((dir / "foldplan.csv").string());
  out.checkpoint = read_file_bytes((dir / "model.milm").string());
  out.metrics_csv = read_file_bytes((dir / "metrics.csv").string());
  return out;
}

bool check_determinism(std::string& detail) {
  const fs::path base = fs::temp_directory_path() / "milreg_acceptance_det";
  const ChainArtifacts a = run_chain(base / "a");
  const ChainArtifacts b = run_chain(base / "b");
  if (a.features_bytes != b.features_bytes) {
    detail = "feature files differ";
    return false;
  }
  if (a.clinical != b.clinical) {
    detail = "clinical tables differ";
    return false;
  }
  if (a.plan_csv != b.plan_csv) {
    detail = "fold plans differ";
    return false;
  }
  if (a.checkpoint != b.checkpoint) {
    detail = "checkpoints differ";
    return false;
  }
  if (a.metrics_csv != b.metrics_csv) {
    detail = "metric files differ";
    return false;
  }
  detail = "two runs byte-identical (cohort, plan, checkpoint, metrics)";
  return true;
}

}  // namespace

int main() {
  std::printf("acceptance suite (tool %s)\n", kToolVersion);
  criterion(1, "gradient correctness, both heads x all losses", check_gradients);
  criterion(2, "rank AUROC equals the pairwise oracle", check_auroc);
  criterion(3, "Cox fits match the Efron grid oracle and known hazard", check_cox);
  criterion(4, "site-aware splits are leak-free and rate-balanced", check_splits);
  criterion(5, "regression vs classification separation experiment", check_separation);
  criterion(6, "SGD ablation collapses the prediction range", check_ablation);
  criterion(7, "ANOVA and t statistics match formula oracles", check_statistics);
  criterion(8, "separation improvement formula on published medians", check_improvement);
  criterion(9, "stain estimation, self-normalization and blank rejection", check_stains);
  criterion(10, "bit-identical reruns under a fixed seed", check_determinism);

  if (g_failures == 0) {
    std::printf("all criteria passed\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}
