#pragma once
// Orchestration shared by the CLI and the acceptance experiments: fold
// deployment, the three-preset comparison protocol, tile preprocessing, and
// the report-file layouts.
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milreg/data_model.hpp"
#include "milreg/evaluation.hpp"
#include "milreg/heatmaps.hpp"
#include "milreg/splitting.hpp"
#include "milreg/tile_prep.hpp"
#include "milreg/training.hpp"

namespace milreg {

// Continuous deployment score of one model on one bag: positive-class
// probability for classification heads, the raw output for regression.
double deploy_score(const FeatureBag& bag, const ModelParams& model);

struct FoldEvaluation {
  ScoreSet scores;             // test patients only, cohort-id order
  std::vector<std::string> patient_ids;
  MetricReport report;
  double cutoff = 0.0;         // fitted on the fold's non-test side
};

// Deploys a model on the fold's test patients only and computes the metric
// report; labels come from the cutoff fitted on the non-test side.
FoldEvaluation evaluate_fold(const Cohort& cohort, const FoldPlan& plan, int fold,
                             const ModelParams& model, const TargetSpec& target);

struct CompareOutcome {
  std::vector<std::string> preset_names;  // classification, graziani, camil regression
  std::map<std::string, std::vector<MetricReport>> fold_reports;
  std::map<std::string, ScoreSet> pooled;  // test scores pooled over folds
  std::map<std::string, std::vector<ModelParams>> fold_models;
  MatD auroc_matrix;  // folds x presets
  StatResult anova;
  StatResult t_camil_reg_gt_clf;  // paired one-sided
  StatResult t_graziani_gt_clf;   // paired one-sided, Bonferroni m = 2
  std::map<std::string, StatResult> class_ttest;  // pooled, per preset
  std::map<std::string, SeparationStats> pooled_separation;
  double improvement_camil_vs_clf = 0.0;  // from the pooled separation deltas
};

// The full three-preset x k-fold protocol.
CompareOutcome run_compare(const Cohort& cohort, const TargetSpec& target, const FoldPlan& plan,
                           std::uint64_t seed, const TrainOptions& options = {});

void write_fold_metrics_csv(const std::string& path, const std::string& cohort,
                            const CompareOutcome& outcome);
void write_summary_csv(const std::string& path, const std::string& cohort,
                       const CompareOutcome& outcome);
void write_anova_csv(const std::string& path, const std::string& cohort,
                     const CompareOutcome& outcome);
void write_ttests_csv(const std::string& path, const std::string& cohort,
                      const CompareOutcome& outcome);
void write_separation_csv(const std::string& path, const std::string& cohort,
                          const CompareOutcome& outcome);

// ---------------------------------------------------------------------------
// Tile preprocessing stage.
// ---------------------------------------------------------------------------

struct PreprocessStats {
  std::size_t n_tiles = 0, n_rejected = 0, n_written = 0;
};

// Tessellates each raster in tiles_dir, rejects background/blurry patches,
// standardizes brightness, normalizes stains to the reference profile, and
// writes normalized PNGs plus manifest.csv (slide_id, x, y, rejected,
// reject_reason).
PreprocessStats preprocess_tiles(const std::string& tiles_dir, const std::string& out_dir,
                                 double source_mpp, const StainProfile& reference,
                                 const CannyConfig& canny = {});

// ---------------------------------------------------------------------------
// Review bundles: side-by-side classification/regression heatmaps.
// ---------------------------------------------------------------------------

void write_review_bundle(const Cohort& cohort, const ModelParams& classification,
                         const ModelParams& regression, const std::vector<std::string>& patients,
                         const std::string& out_dir, int cell_px = 16);

}  // namespace milreg
