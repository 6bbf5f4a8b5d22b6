#include "milreg/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "milreg/common.hpp"

namespace fs = std::filesystem;

namespace milreg {

double deploy_score(const FeatureBag& bag, const ModelParams& model) {
  const BagOutput out = forward_bag(bag, model, /*train_mode=*/false);
  if (model.out == 2) {
    const double mx = std::max(out.prediction[0], out.prediction[1]);
    const double e0 = std::exp(out.prediction[0] - mx), e1 = std::exp(out.prediction[1] - mx);
    return e1 / (e0 + e1);
  }
  return out.prediction[0];
}

FoldEvaluation evaluate_fold(const Cohort& cohort, const FoldPlan& plan, int fold,
                             const ModelParams& model, const TargetSpec& target) {
  if (fold < 0 || fold >= static_cast<int>(plan.folds.size()))
    throw std::invalid_argument("fold index out of range");
  const FoldAssignment& fa = plan.folds[fold];
  const auto values = cohort.target_values();

  std::set<std::string> fit_ids(fa.train_ids.begin(), fa.train_ids.end());
  fit_ids.insert(fa.val_ids.begin(), fa.val_ids.end());

  FoldEvaluation ev;
  ev.cutoff = fit_cutoff(values, target, fit_ids);
  ev.patient_ids = fa.test_ids;
  for (const std::string& id : fa.test_ids) {
    ev.scores.scores.push_back(deploy_score(cohort.bag(id), model));
    ev.scores.labels.push_back(binarize_value(values.at(id), target, ev.cutoff));
    ev.scores.truth.push_back(values.at(id));
  }

  ev.report.fold = fold;
  const BinaryMetrics bm = binary_metrics(ev.scores);
  ev.report.auroc = bm.auroc;
  ev.report.auprc = bm.auprc;
  if (model.out == 1) {
    const RegressionMetrics rm = regression_metrics(ev.scores);
    ev.report.r2 = rm.r2;
    ev.report.spearman_rho = rm.spearman_rho;
  }
  ev.report.separation = separation_stats(ev.scores);
  return ev;
}

CompareOutcome run_compare(const Cohort& cohort, const TargetSpec& target, const FoldPlan& plan,
                           std::uint64_t seed, const TrainOptions& options) {
  CompareOutcome out;
  const std::vector<TrainPreset> presets = {preset(PresetKind::camil_classification),
                                            preset(PresetKind::graziani_regression),
                                            preset(PresetKind::camil_regression)};
  const int k = static_cast<int>(plan.folds.size());
  out.auroc_matrix = MatD(k, presets.size());

  for (std::size_t p = 0; p < presets.size(); ++p) {
    out.preset_names.push_back(presets[p].name);
    ScoreSet pooled;
    for (int fold = 0; fold < k; ++fold) {
      const TrainResult tr =
          train_model(cohort, plan, fold, presets[p], target, derive_seed(seed, fold), options);
      FoldEvaluation ev = evaluate_fold(cohort, plan, fold, tr.params, target);
      out.auroc_matrix.at(fold, p) = ev.report.auroc;
      out.fold_reports[presets[p].name].push_back(ev.report);
      out.fold_models[presets[p].name].push_back(tr.params);
      pooled.scores.insert(pooled.scores.end(), ev.scores.scores.begin(), ev.scores.scores.end());
      pooled.labels.insert(pooled.labels.end(), ev.scores.labels.begin(), ev.scores.labels.end());
      pooled.truth.insert(pooled.truth.end(), ev.scores.truth.begin(), ev.scores.truth.end());
    }
    out.pooled[presets[p].name] = pooled;
    out.class_ttest[presets[p].name] = class_score_ttest(pooled);
    out.pooled_separation[presets[p].name] = separation_stats(pooled);
  }

  // per-fold separation improvement of regression over classification
  {
    auto& reg_reports = out.fold_reports[presets[2].name];
    const auto& clf_reports = out.fold_reports[presets[0].name];
    for (int fold = 0; fold < k; ++fold) {
      const double dc = clf_reports[fold].separation.separation_delta;
      if (dc > 0.0)
        reg_reports[fold].improvement =
            improvement_pct(reg_reports[fold].separation.separation_delta, dc);
    }
  }

  out.anova = rm_anova(out.auroc_matrix);
  VecD clf(k), grz(k), reg(k);
  for (int f = 0; f < k; ++f) {
    clf[f] = out.auroc_matrix.at(f, 0);
    grz[f] = out.auroc_matrix.at(f, 1);
    reg[f] = out.auroc_matrix.at(f, 2);
  }
  out.t_camil_reg_gt_clf = t_test(reg, clf, StatKind::paired_t, Sided::greater, 1);
  out.t_graziani_gt_clf = t_test(grz, clf, StatKind::paired_t, Sided::greater, 2);

  out.improvement_camil_vs_clf =
      improvement_pct(out.pooled_separation.at(presets[2].name).separation_delta,
                      out.pooled_separation.at(presets[0].name).separation_delta);
  return out;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

void write_fold_metrics_csv(const std::string& path, const std::string& cohort,
                            const CompareOutcome& outcome) {
  std::ostringstream out;
  out << "cohort,model,fold,auroc,auprc,r2,spearman_rho,separation_delta,improvement_pct\n";
  for (const std::string& name : outcome.preset_names) {
    for (const MetricReport& r : outcome.fold_reports.at(name)) {
      out << cohort << ',' << name << ',' << r.fold << ',' << fmt_double(r.auroc) << ','
          << fmt_double(r.auprc) << ',';
      if (r.r2) out << fmt_double(*r.r2);
      out << ',';
      if (r.spearman_rho) out << fmt_double(*r.spearman_rho);
      out << ',' << fmt_double(r.separation.separation_delta) << ',';
      if (r.improvement) out << fmt_double(*r.improvement);
      out << '\n';
    }
  }
  write_file_bytes(path, out.str());
}

void write_summary_csv(const std::string& path, const std::string& cohort,
                       const CompareOutcome& outcome) {
  std::ostringstream out;
  out << "cohort,model,auroc,auroc_ci95,auprc,auprc_ci95,p_value\n";
  for (const std::string& name : outcome.preset_names) {
    const auto& reports = outcome.fold_reports.at(name);
    VecD auroc, auprc;
    for (const MetricReport& r : reports) {
      auroc.push_back(r.auroc);
      auprc.push_back(r.auprc);
    }
    const double n = static_cast<double>(auroc.size());
    const double ci_auroc = n > 1 ? 1.96 * sample_sd(auroc) / std::sqrt(n) : 0.0;
    const double ci_auprc = n > 1 ? 1.96 * sample_sd(auprc) / std::sqrt(n) : 0.0;
    out << cohort << ',' << name << ',' << fmt_double(mean_of(auroc)) << ','
        << fmt_double(ci_auroc) << ',' << fmt_double(mean_of(auprc)) << ','
        << fmt_double(ci_auprc) << ',' << fmt_double(outcome.class_ttest.at(name).p_value)
        << '\n';
  }
  write_file_bytes(path, out.str());
}

void write_anova_csv(const std::string& path, const std::string& cohort,
                     const CompareOutcome& outcome) {
  std::ostringstream out;
  out << "cohort,f_value,dof1,dof2,p_value\n";
  out << cohort << ',' << fmt_double(outcome.anova.statistic) << ','
      << fmt_double(outcome.anova.dof1) << ',' << fmt_double(outcome.anova.dof2) << ','
      << fmt_double(outcome.anova.p_value) << '\n';
  write_file_bytes(path, out.str());
}

void write_ttests_csv(const std::string& path, const std::string& cohort,
                      const CompareOutcome& outcome) {
  std::ostringstream out;
  out << "cohort,comparison,statistic,p_value,alpha_effective\n";
  out << cohort << ",camil_regression_gt_camil_classification,"
      << fmt_double(outcome.t_camil_reg_gt_clf.statistic) << ','
      << fmt_double(outcome.t_camil_reg_gt_clf.p_value) << ','
      << fmt_double(outcome.t_camil_reg_gt_clf.alpha_effective) << '\n';
  out << cohort << ",graziani_regression_gt_camil_classification,"
      << fmt_double(outcome.t_graziani_gt_clf.statistic) << ','
      << fmt_double(outcome.t_graziani_gt_clf.p_value) << ','
      << fmt_double(outcome.t_graziani_gt_clf.alpha_effective) << '\n';
  write_file_bytes(path, out.str());
}

void write_separation_csv(const std::string& path, const std::string& cohort,
                          const CompareOutcome& outcome) {
  std::ostringstream out;
  out << "cohort,model,median_pos,iqr_pos,median_neg,iqr_neg,separation_delta,improvement_pct\n";
  for (const std::string& name : outcome.preset_names) {
    const SeparationStats& s = outcome.pooled_separation.at(name);
    out << cohort << ',' << name << ',' << fmt_double(s.median_pos) << ','
        << fmt_double(s.iqr_pos) << ',' << fmt_double(s.median_neg) << ','
        << fmt_double(s.iqr_neg) << ',' << fmt_double(s.separation_delta) << ',';
    if (name == "camil_regression") out << fmt_double(outcome.improvement_camil_vs_clf);
    out << '\n';
  }
  write_file_bytes(path, out.str());
}

// ---------------------------------------------------------------------------
// Tile preprocessing
// ---------------------------------------------------------------------------

PreprocessStats preprocess_tiles(const std::string& tiles_dir, const std::string& out_dir,
                                 double source_mpp, const StainProfile& reference,
                                 const CannyConfig& canny) {
  if (!fs::is_directory(tiles_dir))
    throw std::runtime_error("tiles directory not found: " + tiles_dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(tiles_dir)) {
    const std::string ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".png" || ext == ".ppm")) files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no PNG/PPM rasters in " + tiles_dir);

  fs::create_directories(out_dir);
  std::ostringstream manifest;
  manifest << "slide_id,x,y,rejected,reject_reason\n";

  PreprocessStats stats;
  for (const std::string& file : files) {
    const std::string slide = fs::path(file).stem().string();
    const ImageU8 raster = read_image(file);
    const TileGrid grid = build_tile_grid(raster.width, raster.height, source_mpp);
    if (grid.positions.empty()) {
      std::fprintf(stderr, "warning: %s is smaller than one tile, skipped\n", file.c_str());
      continue;
    }
    for (const auto& pos : grid.positions) {
      ++stats.n_tiles;
      const Patch patch = extract_tile(raster, grid, pos, source_mpp);
      std::string reason;
      if (reject_patch(patch, canny)) {
        reason = "edges";
      } else {
        try {
          const Patch bright = standardize_brightness(patch);
          const StainProfile profile = estimate_stains(bright);
          const Patch normalized = normalize_patch(bright, profile, reference);
          const std::string name = slide + "_" + std::to_string(pos.first) + "_" +
                                   std::to_string(pos.second) + ".png";
          write_png((fs::path(out_dir) / name).string(), normalized.pixels);
          ++stats.n_written;
        } catch (const std::exception& e) {
          reason = e.what();
          // keep the leading error tag only
          const auto colon = reason.find(':');
          if (colon != std::string::npos) reason = reason.substr(0, colon);
        }
      }
      if (!reason.empty()) ++stats.n_rejected;
      manifest << slide << ',' << pos.first << ',' << pos.second << ',' << (reason.empty() ? 0 : 1)
               << ',' << reason << '\n';
    }
  }
  write_file_bytes((fs::path(out_dir) / "manifest.csv").string(), manifest.str());
  return stats;
}

void write_review_bundle(const Cohort& cohort, const ModelParams& classification,
                         const ModelParams& regression, const std::vector<std::string>& patients,
                         const std::string& out_dir, int cell_px) {
  for (const std::string& id : patients) {
    const fs::path dir = fs::path(out_dir) / id;
    fs::create_directories(dir);
    const FeatureBag& bag = cohort.bag(id);
    const AttentionMap clf_map = extract_attention(bag, classification);
    const AttentionMap reg_map = extract_attention(bag, regression);
    render_heatmap(clf_map, (dir / "classification.png").string(),
                   (dir / "classification.csv").string(), {}, cell_px);
    render_heatmap(reg_map, (dir / "regression.png").string(), (dir / "regression.csv").string(),
                   {}, cell_px);
    nlohmann::json meta;
    meta["patient_id"] = id;
    meta["target"] = cohort.record(id).target;
    meta["classification_model"] = classification.preset_name;
    meta["regression_model"] = regression.preset_name;
    write_file_bytes((dir / "metadata.json").string(), meta.dump(2) + "\n");
  }
}

}  // namespace milreg
