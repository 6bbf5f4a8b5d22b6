#pragma once
// Losses, optimizers, one-cycle schedule, early stopping, and the three
// named head presets plus their ablation toggles.
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "milreg/attmil.hpp"
#include "milreg/data_model.hpp"
#include "milreg/splitting.hpp"

namespace milreg {

enum class PresetKind { camil_classification, graziani_regression, camil_regression };
enum class Optimizer { adam, sgd };
enum class LossKind { weighted_cross_entropy, mse, balanced_mse };
enum class Balancing { inverse_weighted, none, kernel_based };
enum class AblationToggle { add_dropout_20, use_sgd, epochs_100, no_balancing };

struct TrainPreset {
  std::string name;
  int batch_size = 1;
  Optimizer optimizer = Optimizer::adam;
  LossKind loss = LossKind::mse;
  int epochs = 25;
  double dropout_rate = 0.0;
  Balancing balancing = Balancing::none;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int patience = 12;
  bool batch_norm = false;
};

TrainPreset preset(PresetKind kind);
TrainPreset preset_by_name(const std::string& name);
PresetKind preset_kind(const TrainPreset& p);

// Changes exactly one field of the camil_regression preset.
TrainPreset ablate(const TrainPreset& base, AblationToggle toggle);

// ---------------------------------------------------------------------------
// Losses. Each returns the loss value and the analytic gradient with respect
// to the model output.
// ---------------------------------------------------------------------------

struct LossConfig {
  double sigma2 = 1.0;          // balanced-MSE noise variance
  VecD candidate_labels;        // all train-fold targets (balanced_mse)
  double class_weights[2] = {1.0, 1.0};
};

// class_weights[c] = N / (2 * count_c), fitted on the training fold.
void fit_class_weights(const std::vector<int>& train_labels, LossConfig& cfg);
// sigma2 = squared Silverman bandwidth of the train targets; candidates are
// the sorted train targets.
void fit_balanced_mse(const VecD& train_targets, LossConfig& cfg);

struct LossValue {
  double loss;
  VecD grad;  // d loss / d prediction
};

LossValue weighted_cross_entropy(const VecD& logits, int label, const LossConfig& cfg);
LossValue mse_loss(double pred, double target);
LossValue balanced_mse(double pred, double target, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Optimizer (Adam with decoupled weight decay, or plain SGD) and the
// one-cycle learning-rate policy.
// ---------------------------------------------------------------------------

struct OptimState {
  std::vector<VecD> m, v;  // Adam moments per tensor
  std::int64_t t = 0;
};

void optimizer_step(ModelParams& params, ParamGrads& grads, OptimState& state,
                    const TrainPreset& preset, double lr);

double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double lr_max,
                    double pct_start = 0.25, double div_start = 25.0, double div_final = 1e4);

// ---------------------------------------------------------------------------
// Training driver.
// ---------------------------------------------------------------------------

struct TrainLog {
  VecD train_loss, val_loss, lr;  // per epoch; lr at the epoch's first step
  int best_epoch = 0;
  bool stopped_early = false;
};

struct TrainOptions {
  std::size_t h_att = 128;
  std::size_t h_mlp = 256;
  bool gated = false;
  std::size_t max_instances = 512;  // train-time bag subsample cap
  double sigma2_override = 0.0;     // > 0 replaces the Silverman default
  double pct_start = 0.25, div_start = 25.0, div_final = 1e4;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
  double fitted_cutoff = 0.0;  // binarization cutoff fitted on the non-test side
};

TrainResult train_model(const Cohort& cohort, const FoldPlan& plan, int fold,
                        const TrainPreset& preset, const TargetSpec& target, std::uint64_t seed,
                        const TrainOptions& options = {});

void write_train_log_csv(const std::string& path, const TrainLog& log);

}  // namespace milreg
