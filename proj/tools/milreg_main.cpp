// Command-line pipeline driver: synth, preprocess, split, train, evaluate,
// compare, survival, heatmap. Every stage writes a run manifest next to its
// artifacts.
#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "milreg/common.hpp"
#include "milreg/config.hpp"
#include "milreg/manifest.hpp"
#include "milreg/pipeline.hpp"
#include "milreg/survival.hpp"
#include "milreg/synth.hpp"

namespace fs = std::filesystem;
using namespace milreg;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> preset_flag;
  std::optional<int> fold;
  int jobs = 0;
  bool print_config = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file (key = value sections)");
  cmd->add_option("--seed", args.seed, "RNG seed (overrides run.seed)");
  cmd->add_option("--out", args.out, "output directory (overrides run.out)");
  cmd->add_option("--jobs", args.jobs, "worker cap for parallel stages");
  cmd->add_flag("--print-config", args.print_config, "print the effective configuration and exit");
  cmd->add_option("overrides", args.overrides, "key=value configuration overrides");
}

Config build_config(const CommonArgs& args, const std::map<std::string, std::string>& defaults) {
  Config cfg;
  for (const auto& [k, v] : defaults) cfg.set(k, v);
  if (!args.config_path.empty()) {
    if (!fs::exists(args.config_path))
      throw UsageError("config file not found: " + args.config_path);
    cfg.load_file(args.config_path);
  }
  if (args.seed) cfg.set("run.seed", std::to_string(*args.seed));
  if (args.out) cfg.set("run.out", *args.out);
  if (args.preset_flag) cfg.set("train.preset", *args.preset_flag);
  if (args.fold) cfg.set("train.fold", std::to_string(*args.fold));
  for (const std::string& kv : args.overrides) cfg.apply_override(kv);
  if (args.jobs > 0) omp_set_num_threads(args.jobs);
  return cfg;
}

TargetSpec target_from_config(const Config& cfg) {
  TargetSpec spec;
  spec.name = cfg.get("target.name", "target");
  const std::string kind = cfg.get("target.kind", "median_split");
  if (kind == "fixed_cutoff") {
    spec.kind = TargetSpec::Kind::fixed_cutoff;
    if (!cfg.has("target.cutoff")) throw UsageError("fixed_cutoff target needs target.cutoff");
    spec.cutoff = cfg.get_double("target.cutoff", 0.0);
  } else if (kind == "median_split") {
    spec.kind = TargetSpec::Kind::median_split;
  } else {
    throw UsageError("unknown target.kind: " + kind);
  }
  const std::string dir = cfg.get("target.direction",
                                  kind == "fixed_cutoff" ? "positive_if_ge" : "positive_if_gt");
  if (dir == "positive_if_ge")
    spec.direction = TargetSpec::Direction::positive_if_ge;
  else if (dir == "positive_if_gt")
    spec.direction = TargetSpec::Direction::positive_if_gt;
  else
    throw UsageError("unknown target.direction: " + dir);
  return spec;
}

Cohort cohort_from_config(const Config& cfg, const TargetSpec& target, LoadReport* report) {
  const std::string features = cfg.require("data.features");
  const std::string clinical = cfg.require("data.clinical");
  if (!fs::is_directory(features)) throw UsageError("features directory not found: " + features);
  if (!fs::exists(clinical)) throw UsageError("clinical table not found: " + clinical);
  return load_cohort(features, clinical, target, report);
}

std::string require_out(const Config& cfg) {
  const std::string out = cfg.get("run.out", "");
  if (out.empty()) throw UsageError("missing output directory (run.out or --out)");
  return out;
}

std::string digest_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& f : files) {
    h = fnv1a64(f.data(), f.size(), h);
    const std::uint64_t fh = hash_file(f);
    h = fnv1a64(&fh, sizeof(fh), h);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

RunManifest start_manifest(const std::string& command, const Config& cfg, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config_snapshot = cfg.entries();
  m.seed = seed;
  return m;
}

TrainOptions train_options(const Config& cfg) {
  TrainOptions opt;
  opt.h_att = static_cast<std::size_t>(cfg.get_int("model.h_att", 128));
  opt.h_mlp = static_cast<std::size_t>(cfg.get_int("model.h_mlp", 256));
  opt.gated = cfg.get_bool("model.gated", false);
  opt.max_instances = static_cast<std::size_t>(cfg.get_int("train.max_instances", 512));
  opt.sigma2_override = cfg.get_double("train.sigma2", 0.0);
  opt.pct_start = cfg.get_double("train.pct_start", 0.25);
  opt.div_start = cfg.get_double("train.div_start", 25.0);
  opt.div_final = cfg.get_double("train.div_final", 1e4);
  return opt;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// --- command bodies ---------------------------------------------------------

int cmd_synth(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"synth.n_patients", "200"},
                                         {"synth.n_sites", "8"},
                                         {"synth.instances_min", "16"},
                                         {"synth.instances_max", "64"},
                                         {"synth.d", "32"},
                                         {"synth.signal_dim_count", "4"},
                                         {"synth.signal_strength", "1.0"},
                                         {"synth.label_noise_sd", "0.05"},
                                         {"synth.hazard_coef", "-2.0"},
                                         {"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);

  SynthConfig sc;
  sc.n_patients = static_cast<std::size_t>(cfg.get_int("synth.n_patients", 200));
  sc.n_sites = static_cast<std::size_t>(cfg.get_int("synth.n_sites", 8));
  sc.instances_min = static_cast<std::size_t>(cfg.get_int("synth.instances_min", 16));
  sc.instances_max = static_cast<std::size_t>(cfg.get_int("synth.instances_max", 64));
  sc.d = static_cast<std::size_t>(cfg.get_int("synth.d", 32));
  sc.signal_dim_count = static_cast<std::size_t>(cfg.get_int("synth.signal_dim_count", 4));
  sc.signal_strength = cfg.get_double("synth.signal_strength", 1.0);
  sc.label_noise_sd = cfg.get_double("synth.label_noise_sd", 0.05);
  sc.hazard_coef = cfg.get_double("synth.hazard_coef", -2.0);
  sc.seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 17));

  const auto t0 = std::chrono::steady_clock::now();
  SynthTruth truth;
  const Cohort cohort = generate_cohort(sc, &truth);
  fs::create_directories(out);
  write_synth_cohort(cohort, truth, out);

  RunManifest m = start_manifest("synth", cfg, sc.seed);
  m.outputs = {out + "/features", out + "/clinical.csv", out + "/truth.csv",
               out + "/truth_instances.csv"};
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "synth: " << cohort.bags.size() << " patients, " << sc.n_sites
            << " sites, d=" << sc.d << ", target range [" << fmt_double(truth.target_min) << ", "
            << fmt_double(truth.target_max) << "]\n";
  return 0;
}

int cmd_split(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"split.k", "5"},
                                         {"split.val_frac", "0.2"},
                                         {"split.tol", "0.1"},
                                         {"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);
  const TargetSpec target = target_from_config(cfg);
  LoadReport report;
  const Cohort cohort = cohort_from_config(cfg, target, &report);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 17));

  const auto t0 = std::chrono::steady_clock::now();
  // plan-time stratification labels use the cutoff fitted on the full cohort
  const auto values = cohort.target_values();
  std::set<std::string> all_ids;
  for (const auto& [id, v] : values) all_ids.insert(id);
  const auto labels = binarize_target(values, target, all_ids);

  const FoldPlan plan =
      site_aware_folds(cohort, labels, static_cast<int>(cfg.get_int("split.k", 5)),
                       cfg.get_double("split.val_frac", 0.2), seed, cfg.get_double("split.tol", 0.1));
  const FoldValidation check = validate_folds(plan, cohort, labels, cfg.get_double("split.tol", 0.1));
  if (!check.ok) {
    for (const std::string& f : check.failures) std::cerr << "fold plan: " << f << '\n';
    throw std::runtime_error("fold plan failed validation");
  }

  fs::create_directories(out);
  write_fold_plan_csv((fs::path(out) / "foldplan.csv").string(), plan);

  RunManifest m = start_manifest("split", cfg, seed);
  m.input_digests[cfg.require("data.features")] = digest_dir(cfg.require("data.features"));
  m.add_input(cfg.require("data.clinical"));
  m.outputs = {(fs::path(out) / "foldplan.csv").string()};
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "split: " << cohort.bags.size() << " patients (overlap " << report.n_target_overlap
            << "), k=" << plan.k << "; per-fold test class-rate deviation:";
  for (double d : plan.test_rate_deviation) std::cout << ' ' << fmt_double(d);
  std::cout << '\n';
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"train.preset", "camil_regression"},
                                         {"train.fold", "0"},
                                         {"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);
  const TargetSpec target = target_from_config(cfg);
  const Cohort cohort = cohort_from_config(cfg, target, nullptr);
  const std::string plan_path = cfg.require("data.plan");
  if (!fs::exists(plan_path)) throw UsageError("fold plan not found: " + plan_path);
  const FoldPlan plan = read_fold_plan_csv(plan_path);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 17));
  const int fold = static_cast<int>(cfg.get_int("train.fold", 0));

  TrainPreset p = preset_by_name(cfg.require("train.preset"));
  if (cfg.has("train.ablate")) {
    const std::string toggle = cfg.get("train.ablate", "");
    if (toggle == "add_dropout_20")
      p = ablate(p, AblationToggle::add_dropout_20);
    else if (toggle == "use_sgd")
      p = ablate(p, AblationToggle::use_sgd);
    else if (toggle == "epochs_100")
      p = ablate(p, AblationToggle::epochs_100);
    else if (toggle == "no_balancing")
      p = ablate(p, AblationToggle::no_balancing);
    else
      throw UsageError("unknown ablation toggle: " + toggle);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result = train_model(cohort, plan, fold, p, target, seed, train_options(cfg));

  fs::create_directories(out);
  const std::string ckpt =
      (fs::path(out) / (p.name + "_fold" + std::to_string(fold) + ".milm")).string();
  save_checkpoint(ckpt, result.params);
  const std::string log_path =
      (fs::path(out) / (p.name + "_fold" + std::to_string(fold) + "_trainlog.csv")).string();
  write_train_log_csv(log_path, result.log);

  RunManifest m = start_manifest("train", cfg, seed);
  m.input_digests[cfg.require("data.features")] = digest_dir(cfg.require("data.features"));
  m.add_input(cfg.require("data.clinical"));
  m.add_input(plan_path);
  m.outputs = {ckpt, log_path};
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "train: " << p.name << " fold " << fold << ", best epoch "
            << result.log.best_epoch << (result.log.stopped_early ? " (early stop)" : "")
            << ", val loss " << fmt_double(result.log.val_loss[result.log.best_epoch]) << '\n';
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"train.fold", "0"}, {"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);
  const TargetSpec target = target_from_config(cfg);
  const Cohort cohort = cohort_from_config(cfg, target, nullptr);
  const std::string plan_path = cfg.require("data.plan");
  const std::string ckpt_path = cfg.require("data.checkpoint");
  if (!fs::exists(plan_path)) throw UsageError("fold plan not found: " + plan_path);
  if (!fs::exists(ckpt_path)) throw UsageError("checkpoint not found: " + ckpt_path);
  const int fold = static_cast<int>(cfg.get_int("train.fold", 0));

  const auto t0 = std::chrono::steady_clock::now();
  const FoldPlan plan = read_fold_plan_csv(plan_path);
  const ModelParams model = load_checkpoint(ckpt_path);
  const FoldEvaluation ev = evaluate_fold(cohort, plan, fold, model, target);

  fs::create_directories(out);
  std::ostringstream metrics;
  metrics << "fold,auroc,auprc,r2,spearman_rho,median_pos,iqr_pos,median_neg,iqr_neg,"
             "separation_delta\n";
  metrics << fold << ',' << fmt_double(ev.report.auroc) << ',' << fmt_double(ev.report.auprc)
          << ',';
  if (ev.report.r2) metrics << fmt_double(*ev.report.r2);
  metrics << ',';
  if (ev.report.spearman_rho) metrics << fmt_double(*ev.report.spearman_rho);
  metrics << ',' << fmt_double(ev.report.separation.median_pos) << ','
          << fmt_double(ev.report.separation.iqr_pos) << ','
          << fmt_double(ev.report.separation.median_neg) << ','
          << fmt_double(ev.report.separation.iqr_neg) << ','
          << fmt_double(ev.report.separation.separation_delta) << '\n';
  write_file_bytes((fs::path(out) / "metrics.csv").string(), metrics.str());

  std::ostringstream preds;
  preds << "patient_id,score,label,truth\n";
  for (std::size_t i = 0; i < ev.patient_ids.size(); ++i)
    preds << ev.patient_ids[i] << ',' << fmt_double(ev.scores.scores[i]) << ','
          << ev.scores.labels[i] << ',' << fmt_double(ev.scores.truth[i]) << '\n';
  write_file_bytes((fs::path(out) / "predictions.csv").string(), preds.str());

  RunManifest m = start_manifest("evaluate", cfg, static_cast<std::uint64_t>(cfg.get_int("run.seed", 17)));
  m.add_input(plan_path);
  m.add_input(ckpt_path);
  m.outputs = {(fs::path(out) / "metrics.csv").string(),
               (fs::path(out) / "predictions.csv").string()};
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "evaluate: fold " << fold << " auroc " << fmt_double(ev.report.auroc) << " auprc "
            << fmt_double(ev.report.auprc) << '\n';
  return 0;
}

int cmd_compare(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);
  const TargetSpec target = target_from_config(cfg);
  const Cohort cohort = cohort_from_config(cfg, target, nullptr);
  const std::string plan_path = cfg.require("data.plan");
  if (!fs::exists(plan_path)) throw UsageError("fold plan not found: " + plan_path);
  const FoldPlan plan = read_fold_plan_csv(plan_path);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("run.seed", 17));
  const std::string cohort_name = cfg.get("data.cohort_name", cohort.name);

  const auto t0 = std::chrono::steady_clock::now();
  const CompareOutcome outcome = run_compare(cohort, target, plan, seed, train_options(cfg));

  fs::create_directories(out);
  fs::create_directories(fs::path(out) / "models");
  for (const auto& [name, models] : outcome.fold_models)
    for (std::size_t f = 0; f < models.size(); ++f)
      save_checkpoint(
          (fs::path(out) / "models" / (name + "_fold" + std::to_string(f) + ".milm")).string(),
          models[f]);

  write_fold_metrics_csv((fs::path(out) / "fold_metrics.csv").string(), cohort_name, outcome);
  write_summary_csv((fs::path(out) / "summary.csv").string(), cohort_name, outcome);
  write_anova_csv((fs::path(out) / "anova.csv").string(), cohort_name, outcome);
  write_ttests_csv((fs::path(out) / "ttests.csv").string(), cohort_name, outcome);
  write_separation_csv((fs::path(out) / "separation.csv").string(), cohort_name, outcome);

  RunManifest m = start_manifest("compare", cfg, seed);
  m.input_digests[cfg.require("data.features")] = digest_dir(cfg.require("data.features"));
  m.add_input(cfg.require("data.clinical"));
  m.add_input(plan_path);
  m.outputs = {(fs::path(out) / "summary.csv").string(), (fs::path(out) / "anova.csv").string(),
               (fs::path(out) / "ttests.csv").string(),
               (fs::path(out) / "separation.csv").string(),
               (fs::path(out) / "fold_metrics.csv").string()};
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "compare: anova F=" << fmt_double(outcome.anova.statistic) << " dof=("
            << outcome.anova.dof1 << "," << outcome.anova.dof2 << ") p="
            << fmt_double(outcome.anova.p_value)
            << "; separation improvement (regression vs classification) "
            << fmt_double(outcome.improvement_camil_vs_clf) << "%\n";
  return 0;
}

int cmd_survival(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"survival.mode", "continuous"},
                                         {"survival.covariates", "none"},
                                         {"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);
  const TargetSpec target = target_from_config(cfg);
  const Cohort cohort = cohort_from_config(cfg, target, nullptr);
  const std::vector<std::string> ckpts = split_list(cfg.require("data.checkpoints"));
  if (ckpts.empty()) throw UsageError("data.checkpoints must list the fold checkpoints");
  for (const std::string& c : ckpts)
    if (!fs::exists(c)) throw UsageError("checkpoint not found: " + c);

  const std::string mode_s = cfg.get("survival.mode", "continuous");
  ScoreMode mode;
  if (mode_s == "continuous")
    mode = ScoreMode::continuous;
  else if (mode_s == "binarized_at_median")
    mode = ScoreMode::binarized_at_median;
  else
    throw UsageError("unknown survival.mode: " + mode_s);
  const std::string cov_s = cfg.get("survival.covariates", "none");
  CovariateSet cov;
  if (cov_s == "none")
    cov = CovariateSet::none;
  else if (cov_s == "age_sex_stage")
    cov = CovariateSet::age_sex_stage;
  else
    throw UsageError("unknown survival.covariates: " + cov_s);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ModelParams> models;
  for (const std::string& c : ckpts) models.push_back(load_checkpoint(c));
  const PrognosisReport report = score_prognosis(cohort, models, mode, cov);

  fs::create_directories(out);
  const std::string csv = (fs::path(out) / "survival.csv").string();
  write_survival_csv(csv, models[0].preset_name, mode_s, report);

  RunManifest m = start_manifest("survival", cfg, static_cast<std::uint64_t>(cfg.get_int("run.seed", 17)));
  for (const std::string& c : ckpts) m.add_input(c);
  m.outputs = {csv};
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "survival: " << report.n_used << " patients, " << report.n_events << " events";
  if (report.n_dropped_missing)
    std::cout << " (" << report.n_dropped_missing << " dropped for missing covariates)";
  for (const CoxRow& row : report.cox.rows)
    std::cout << "; " << row.name << " HR " << fmt_double(row.hr) << " [" << fmt_double(row.ci_low)
              << ", " << fmt_double(row.ci_high) << "]";
  std::cout << '\n';
  if (report.cox.monotone_likelihood)
    std::cerr << "warning: monotone likelihood, estimates did not converge\n";
  return 0;
}

int cmd_heatmap(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"heatmap.cell_px", "16"},
                                         {"heatmap.top_n", "42"},
                                         {"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);
  const TargetSpec target = target_from_config(cfg);
  const Cohort cohort = cohort_from_config(cfg, target, nullptr);
  const int cell_px = static_cast<int>(cfg.get_int("heatmap.cell_px", 16));

  std::vector<std::string> patients;
  if (cfg.has("heatmap.patient")) {
    patients = split_list(cfg.get("heatmap.patient", ""));
  } else {
    const std::size_t n =
        std::min<std::size_t>(cohort.ids().size(),
                              static_cast<std::size_t>(cfg.get_int("heatmap.top_n", 42)));
    patients = select_top_expressers(cohort, cohort.target_values(), n);
  }

  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out);
  RunManifest m = start_manifest("heatmap", cfg, static_cast<std::uint64_t>(cfg.get_int("run.seed", 17)));

  if (cfg.has("data.clf_checkpoint") && cfg.has("data.reg_checkpoint")) {
    const std::string clf = cfg.require("data.clf_checkpoint");
    const std::string reg = cfg.require("data.reg_checkpoint");
    if (!fs::exists(clf) || !fs::exists(reg)) throw UsageError("review checkpoints not found");
    write_review_bundle(cohort, load_checkpoint(clf), load_checkpoint(reg), patients, out,
                        cell_px);
    m.add_input(clf);
    m.add_input(reg);
  } else {
    const std::string ckpt = cfg.require("data.checkpoint");
    if (!fs::exists(ckpt)) throw UsageError("checkpoint not found: " + ckpt);
    const ModelParams model = load_checkpoint(ckpt);
    for (const std::string& id : patients) {
      const AttentionMap map = extract_attention(cohort.bag(id), model);
      render_heatmap(map, (fs::path(out) / (id + ".png")).string(),
                     (fs::path(out) / (id + ".csv")).string(), {}, cell_px);
    }
    m.add_input(ckpt);
  }
  for (const std::string& id : patients) m.outputs.push_back((fs::path(out) / id).string());
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "heatmap: " << patients.size() << " patients rendered to " << out << '\n';
  return 0;
}

int cmd_preprocess(const CommonArgs& args) {
  const Config cfg = build_config(args, {{"preprocess.mpp", "1.142857"},
                                         {"run.seed", "17"}});
  if (args.print_config) {
    std::cout << cfg.render();
    return 0;
  }
  const std::string out = require_out(cfg);
  const std::string tiles = cfg.require("data.tiles");
  if (!fs::is_directory(tiles)) throw UsageError("tiles directory not found: " + tiles);

  StainProfile reference = default_reference_profile();
  if (cfg.has("preprocess.profile")) {
    const std::string profile_path = cfg.get("preprocess.profile", "");
    if (!fs::exists(profile_path)) throw UsageError("stain profile not found: " + profile_path);
    reference = read_stain_profile_csv(profile_path);
  }
  CannyConfig canny;
  canny.sigma = cfg.get_double("preprocess.canny_sigma", canny.sigma);
  canny.low = cfg.get_double("preprocess.canny_low", canny.low);
  canny.high = cfg.get_double("preprocess.canny_high", canny.high);
  canny.min_segment_len =
      static_cast<int>(cfg.get_int("preprocess.min_segment_len", canny.min_segment_len));
  canny.max_segments_reject =
      static_cast<int>(cfg.get_int("preprocess.max_segments_reject", canny.max_segments_reject));

  const auto t0 = std::chrono::steady_clock::now();
  const PreprocessStats stats =
      preprocess_tiles(tiles, out, cfg.get_double("preprocess.mpp", 1.142857), reference, canny);

  RunManifest m = start_manifest("preprocess", cfg, static_cast<std::uint64_t>(cfg.get_int("run.seed", 17)));
  m.input_digests[tiles] = digest_dir(tiles);
  m.outputs = {(fs::path(out) / "manifest.csv").string()};
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(out);

  std::cout << "preprocess: " << stats.n_tiles << " tiles, " << stats.n_rejected << " rejected, "
            << stats.n_written << " written\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-MIL regression/classification biomarker pipeline"};
  app.require_subcommand(1);

  std::map<std::string, CommonArgs> cmd_args;
  std::map<std::string, int (*)(const CommonArgs&)> handlers = {
      {"synth", cmd_synth},       {"split", cmd_split},      {"train", cmd_train},
      {"evaluate", cmd_evaluate}, {"compare", cmd_compare},  {"survival", cmd_survival},
      {"heatmap", cmd_heatmap},   {"preprocess", cmd_preprocess}};

  const std::map<std::string, std::string> descriptions = {
      {"synth", "generate a synthetic cohort with hidden truth"},
      {"split", "build a site-aware stratified fold plan"},
      {"train", "train one preset on one fold"},
      {"evaluate", "deploy a checkpoint on a test fold"},
      {"compare", "full three-preset cross-validation protocol"},
      {"survival", "Cox prognosis of deployed fold models"},
      {"heatmap", "attention heatmaps / review bundles"},
      {"preprocess", "tessellate, filter and stain-normalize rasters"}};

  for (const auto& [name, fn] : handlers) {
    (void)fn;
    CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
    CommonArgs& ca = cmd_args[name];
    add_common(sub, ca);
    if (name == "train" || name == "evaluate") {
      sub->add_option("--preset", ca.preset_flag, "training preset");
      sub->add_option("--fold", ca.fold, "fold index");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const auto& [name, fn] : handlers) {
    if (app.got_subcommand(name)) {
      try {
        return fn(cmd_args[name]);
      } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
      }
    }
  }
  return 2;
}
