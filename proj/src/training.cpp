#include "milreg/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "milreg/common.hpp"

namespace milreg {

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;  // running = m * running + (1 - m) * batch
}  // namespace

TrainPreset preset(PresetKind kind) {
  TrainPreset p;
  switch (kind) {
    case PresetKind::camil_classification:
      p.name = "camil_classification";
      p.batch_size = 64;
      p.optimizer = Optimizer::adam;
      p.loss = LossKind::weighted_cross_entropy;
      p.epochs = 25;
      p.dropout_rate = 0.50;
      p.balancing = Balancing::inverse_weighted;
      p.batch_norm = true;
      break;
    case PresetKind::graziani_regression:
      p.name = "graziani_regression";
      p.batch_size = 1;
      p.optimizer = Optimizer::sgd;
      p.loss = LossKind::mse;
      p.epochs = 100;
      p.dropout_rate = 0.20;
      p.balancing = Balancing::none;
      p.batch_norm = false;
      break;
    case PresetKind::camil_regression:
      p.name = "camil_regression";
      p.batch_size = 1;
      p.optimizer = Optimizer::adam;
      p.loss = LossKind::balanced_mse;
      p.epochs = 25;
      p.dropout_rate = 0.0;
      p.balancing = Balancing::kernel_based;
      p.batch_norm = false;
      break;
  }
  return p;
}

TrainPreset preset_by_name(const std::string& name) {
  if (name == "camil_classification") return preset(PresetKind::camil_classification);
  if (name == "graziani_regression") return preset(PresetKind::graziani_regression);
  if (name == "camil_regression") return preset(PresetKind::camil_regression);
  throw std::runtime_error("unknown preset: " + name);
}

PresetKind preset_kind(const TrainPreset& p) {
  if (p.loss == LossKind::weighted_cross_entropy) return PresetKind::camil_classification;
  if (p.optimizer == Optimizer::sgd && p.loss == LossKind::mse)
    return PresetKind::graziani_regression;
  return PresetKind::camil_regression;
}

TrainPreset ablate(const TrainPreset& base, AblationToggle toggle) {
  if (base.name != "camil_regression")
    throw std::runtime_error("ablation toggles apply to the camil_regression preset only");
  TrainPreset p = base;
  switch (toggle) {
    case AblationToggle::add_dropout_20:
      p.dropout_rate = 0.20;
      p.name = "camil_regression+dropout20";
      break;
    case AblationToggle::use_sgd:
      p.optimizer = Optimizer::sgd;
      p.name = "camil_regression+sgd";
      break;
    case AblationToggle::epochs_100:
      p.epochs = 100;
      p.name = "camil_regression+epochs100";
      break;
    case AblationToggle::no_balancing:
      p.balancing = Balancing::none;
      p.name = "camil_regression+no_balancing";
      break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

void fit_class_weights(const std::vector<int>& train_labels, LossConfig& cfg) {
  double counts[2] = {0.0, 0.0};
  for (int l : train_labels) counts[l != 0] += 1.0;
  if (counts[0] == 0.0 || counts[1] == 0.0)
    throw std::runtime_error("degenerate class weights: a class has zero training count");
  const double n = counts[0] + counts[1];
  cfg.class_weights[0] = n / (2.0 * counts[0]);
  cfg.class_weights[1] = n / (2.0 * counts[1]);
}

void fit_balanced_mse(const VecD& train_targets, LossConfig& cfg) {
  if (train_targets.empty()) throw std::runtime_error("balanced MSE needs training targets");
  cfg.candidate_labels = train_targets;
  std::sort(cfg.candidate_labels.begin(), cfg.candidate_labels.end());
  const std::size_t n = cfg.candidate_labels.size();
  double h = 0.0;
  if (n >= 2) {
    const double sd = sample_sd(cfg.candidate_labels);
    const double iqr = percentile_sorted(cfg.candidate_labels, 75.0) -
                       percentile_sorted(cfg.candidate_labels, 25.0);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  }
  cfg.sigma2 = h > 0.0 ? h * h : 1.0;  // degenerate target spread: unit variance
}

LossValue weighted_cross_entropy(const VecD& logits, int label, const LossConfig& cfg) {
  if (logits.size() != 2) throw std::invalid_argument("weighted CE expects two logits");
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
  const double mx = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
  const double denom = e0 + e1;
  const double p[2] = {e0 / denom, e1 / denom};
  const double w = cfg.class_weights[label];
  LossValue out;
  out.loss = -w * (logits[label] - mx - std::log(denom));
  out.grad = {w * (p[0] - (label == 0 ? 1.0 : 0.0)), w * (p[1] - (label == 1 ? 1.0 : 0.0))};
  return out;
}

LossValue mse_loss(double pred, double target) {
  const double diff = pred - target;
  return {diff * diff, {2.0 * diff}};
}

LossValue balanced_mse(double pred, double target, const LossConfig& cfg) {
  const VecD& s = cfg.candidate_labels;
  if (s.empty()) throw std::runtime_error("balanced MSE with an empty candidate set");
  const double inv2s = 1.0 / (2.0 * cfg.sigma2);
  // log-sum-exp over -(pred - y')^2 / (2 sigma^2)
  double mx = -std::numeric_limits<double>::infinity();
  for (double y : s) mx = std::max(mx, -(pred - y) * (pred - y) * inv2s);
  double denom = 0.0, weighted = 0.0;
  for (double y : s) {
    const double t = std::exp(-(pred - y) * (pred - y) * inv2s - mx);
    denom += t;
    weighted += t * (pred - y);
  }
  LossValue out;
  out.loss = (pred - target) * (pred - target) * inv2s + mx + std::log(denom);
  out.grad = {(pred - target) / cfg.sigma2 - weighted / denom / cfg.sigma2};
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

void optimizer_step(ModelParams& params, ParamGrads& grads, OptimState& state,
                    const TrainPreset& preset, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  auto ptensors = param_tensors(params);
  auto gtensors = grad_tensors(grads, params);
  if (ptensors.size() != gtensors.size())
    throw std::runtime_error("optimizer: tensor list mismatch");

  for (const TensorRef& g : gtensors)
    if (!all_finite(std::span<const double>(*g.data)))
      throw std::runtime_error("diverged: non-finite gradient");

  if (preset.optimizer == Optimizer::sgd) {
    for (std::size_t k = 0; k < ptensors.size(); ++k) {
      VecD& th = *ptensors[k].data;
      const VecD& g = *gtensors[k].data;
      const double wd = ptensors[k].is_weight ? preset.weight_decay : 0.0;
      for (std::size_t i = 0; i < th.size(); ++i) th[i] -= lr * (g[i] + wd * th[i]);
    }
    ++state.t;
    return;
  }

  if (state.m.empty()) {
    state.m.resize(ptensors.size());
    state.v.resize(ptensors.size());
    for (std::size_t k = 0; k < ptensors.size(); ++k) {
      state.m[k].assign(ptensors[k].data->size(), 0.0);
      state.v[k].assign(ptensors[k].data->size(), 0.0);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < ptensors.size(); ++k) {
    VecD& th = *ptensors[k].data;
    const VecD& g = *gtensors[k].data;
    VecD& m = state.m[k];
    VecD& v = state.v[k];
    if (ptensors[k].is_weight) {
      const double decay = 1.0 - lr * preset.weight_decay;
      for (double& x : th) x *= decay;
    }
    for (std::size_t i = 0; i < th.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      th[i] -= lr * mh / (std::sqrt(vh) + kEps);
    }
  }
}

double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double pct_start,
                    double div_start, double div_final) {
  if (total_steps <= 0) throw std::invalid_argument("one_cycle_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("one_cycle_lr: step out of range");
  const double lr_start = lr_max / div_start;
  const double lr_final = lr_max / div_final;
  const double s1 = pct_start * static_cast<double>(total_steps);
  const double t = static_cast<double>(step);
  if (t <= s1 && s1 > 0.0) {
    const double tau = t / s1;
    return lr_start + (lr_max - lr_start) * 0.5 * (1.0 - std::cos(M_PI * tau));
  }
  const double tau = (t - s1) / (static_cast<double>(total_steps) - s1);
  return lr_final + (lr_max - lr_final) * 0.5 * (1.0 + std::cos(M_PI * tau));
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

namespace {

FeatureBag subsample_bag(const FeatureBag& bag, std::size_t cap, Rng& rng) {
  if (bag.n_instances() <= cap) return bag;
  std::vector<std::uint32_t> idx(bag.n_instances());
  for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // partial Fisher-Yates: first `cap` entries are a uniform sample
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  FeatureBag sub;
  sub.patient_id = bag.patient_id;
  sub.site_id = bag.site_id;
  sub.features = MatF(cap, bag.dim());
  for (std::size_t i = 0; i < cap; ++i)
    std::memcpy(sub.features.row(i), bag.features.row(idx[i]), bag.dim() * sizeof(float));
  return sub;
}

struct LossFn {
  LossKind kind;
  const LossConfig* cfg;

  LossValue operator()(const VecD& pred, int label, double target) const {
    switch (kind) {
      case LossKind::weighted_cross_entropy:
        return weighted_cross_entropy(pred, label, *cfg);
      case LossKind::mse:
        return mse_loss(pred[0], target);
      case LossKind::balanced_mse: {
        // train-time rescaling by 2 sigma^2 keeps gradients on the MSE
        // scale independent of the kernel bandwidth (reference Balanced-MSE
        // behavior); the balanced_mse op itself stays normalized
        LossValue lv = balanced_mse(pred[0], target, *cfg);
        lv.loss *= 2.0 * cfg->sigma2;
        for (double& g : lv.grad) g *= 2.0 * cfg->sigma2;
        return lv;
      }
    }
    throw std::logic_error("unreachable");
  }
};

}  // namespace

TrainResult train_model(const Cohort& cohort, const FoldPlan& plan, int fold,
                        const TrainPreset& preset, const TargetSpec& target, std::uint64_t seed,
                        const TrainOptions& options) {
  if (fold < 0 || fold >= static_cast<int>(plan.folds.size()))
    throw std::invalid_argument("fold index out of range");
  const FoldAssignment& fa = plan.folds[fold];
  if (fa.train_ids.empty()) throw std::runtime_error("empty train split in fold " + std::to_string(fold));

  const auto values = cohort.target_values();
  std::set<std::string> fit_ids(fa.train_ids.begin(), fa.train_ids.end());
  fit_ids.insert(fa.val_ids.begin(), fa.val_ids.end());
  const double cutoff = fit_cutoff(values, target, fit_ids);

  const bool classification = preset.loss == LossKind::weighted_cross_entropy;
  // Removing kernel-based balancing reduces the balanced objective to MSE.
  LossKind eff_loss = preset.loss;
  if (eff_loss == LossKind::balanced_mse && preset.balancing != Balancing::kernel_based)
    eff_loss = LossKind::mse;

  LossConfig loss_cfg;
  {
    std::vector<int> train_labels;
    VecD train_targets;
    for (const std::string& id : fa.train_ids) {
      train_labels.push_back(binarize_value(values.at(id), target, cutoff));
      train_targets.push_back(values.at(id));
    }
    if (classification) fit_class_weights(train_labels, loss_cfg);
    if (eff_loss == LossKind::balanced_mse) {
      fit_balanced_mse(train_targets, loss_cfg);
      if (options.sigma2_override > 0.0) loss_cfg.sigma2 = options.sigma2_override;
    }
  }
  const LossFn loss_fn{eff_loss, &loss_cfg};

  const std::size_t d = cohort.bag(fa.train_ids.front()).dim();
  ModelParams params = init_params(d, options.h_att, options.h_mlp, classification ? 2 : 1,
                                   preset.dropout_rate, options.gated, preset.batch_norm, seed);
  params.preset_name = preset.name;

  // output bias starts at the training-label statistics so every fold's
  // initial prediction is centered
  if (classification) {
    double pos = 0.0;
    for (const std::string& id : fa.train_ids)
      pos += binarize_value(values.at(id), target, cutoff);
    const double rate = pos / static_cast<double>(fa.train_ids.size());
    params.head_b2[0] = std::log(std::max(1e-12, 1.0 - rate));
    params.head_b2[1] = std::log(std::max(1e-12, rate));
  } else {
    double mean = 0.0;
    for (const std::string& id : fa.train_ids) mean += values.at(id);
    params.head_b2[0] = mean / static_cast<double>(fa.train_ids.size());
  }

  const std::size_t n_train = fa.train_ids.size();
  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>((n_train + preset.batch_size - 1) / preset.batch_size);
  const std::int64_t total_steps = static_cast<std::int64_t>(preset.epochs) * steps_per_epoch;

  Rng rng(derive_seed(seed, 0x7247));
  OptimState opt;
  TrainLog log;
  ModelParams best_params = params;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;
  std::int64_t global_step = 0;

  auto eval_loss = [&](const std::vector<std::string>& ids) {
    double sum = 0.0;
    for (const std::string& id : ids) {
      const BagOutput out = forward_bag(cohort.bag(id), params, /*train_mode=*/false);
      sum += loss_fn(out.prediction, binarize_value(values.at(id), target, cutoff),
                     values.at(id))
                 .loss;
    }
    return sum / static_cast<double>(ids.size());
  };

  for (int epoch = 0; epoch < preset.epochs; ++epoch) {
    log.lr.push_back(one_cycle_lr(static_cast<std::int64_t>(epoch) * steps_per_epoch, total_steps,
                                  preset.lr, options.pct_start, options.div_start,
                                  options.div_final));

    std::vector<std::string> order = fa.train_ids;
    rng.shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += preset.batch_size) {
      const std::size_t stop = std::min(order.size(), start + preset.batch_size);
      const std::size_t bsz = stop - start;
      const double inv_b = 1.0 / static_cast<double>(bsz);

      ParamGrads grads = zero_grads(params);
      std::vector<FeatureBag> bags;
      std::vector<ForwardCache> caches(bsz);
      bags.reserve(bsz);
      for (std::size_t b = 0; b < bsz; ++b)
        bags.push_back(subsample_bag(cohort.bag(order[start + b]), options.max_instances, rng));

      const bool use_batch_bn = params.bn_enabled && bsz >= 2;
      if (use_batch_bn) {
        // pooled embeddings for the whole batch, then batch statistics
        for (std::size_t b = 0; b < bsz; ++b) attention_pool(bags[b], params, caches[b]);
        VecD mu(d, 0.0), var(d, 0.0);
        for (std::size_t b = 0; b < bsz; ++b)
          for (std::size_t j = 0; j < d; ++j) mu[j] += caches[b].z[j] * inv_b;
        for (std::size_t b = 0; b < bsz; ++b)
          for (std::size_t j = 0; j < d; ++j) {
            const double c = caches[b].z[j] - mu[j];
            var[j] += c * c * inv_b;
          }
        for (std::size_t j = 0; j < d; ++j) {
          params.bn_running_mean[j] = kBnMomentum * params.bn_running_mean[j] +
                                      (1.0 - kBnMomentum) * mu[j];
          params.bn_running_var[j] = kBnMomentum * params.bn_running_var[j] +
                                     (1.0 - kBnMomentum) * var[j];
        }

        MatD zhat(bsz, d), dzn_all(bsz, d);
        for (std::size_t b = 0; b < bsz; ++b) {
          VecD zn(d);
          for (std::size_t j = 0; j < d; ++j) {
            zhat.at(b, j) = (caches[b].z[j] - mu[j]) / std::sqrt(var[j] + kBnEps);
            zn[j] = params.bn_gamma[j] * zhat.at(b, j) + params.bn_beta[j];
          }
          const VecD pred = head_forward(zn, params, /*train_mode=*/true, &rng, caches[b], nullptr);
          const std::string& id = order[start + b];
          LossValue lv = loss_fn(pred, binarize_value(values.at(id), target, cutoff), values.at(id));
          epoch_loss += lv.loss;
          for (double& g : lv.grad) g *= inv_b;
          const VecD dzn = head_backward(params, caches[b], lv.grad, grads);
          for (std::size_t j = 0; j < d; ++j) dzn_all.at(b, j) = dzn[j];
        }

        // batch-norm backward over the batch
        for (std::size_t j = 0; j < d; ++j) {
          const double inv_sd = 1.0 / std::sqrt(var[j] + kBnEps);
          double dgamma = 0.0, dbeta = 0.0, sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t b = 0; b < bsz; ++b) {
            const double dzn = dzn_all.at(b, j);
            dgamma += dzn * zhat.at(b, j);
            dbeta += dzn;
            const double dxhat = dzn * params.bn_gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * zhat.at(b, j);
          }
          grads.bn_gamma[j] += dgamma;
          grads.bn_beta[j] += dbeta;
          for (std::size_t b = 0; b < bsz; ++b) {
            const double dxhat = dzn_all.at(b, j) * params.bn_gamma[j];
            const double dz = inv_sd * (dxhat - sum_dxhat * inv_b -
                                        zhat.at(b, j) * sum_dxhat_xhat * inv_b);
            dzn_all.at(b, j) = dz;
          }
        }
        for (std::size_t b = 0; b < bsz; ++b) {
          VecD dz(d);
          for (std::size_t j = 0; j < d; ++j) dz[j] = dzn_all.at(b, j);
          attention_backward(bags[b], params, caches[b], dz, grads);
        }
      } else {
        for (std::size_t b = 0; b < bsz; ++b) {
          const std::string& id = order[start + b];
          const BagOutput out =
              forward_bag(bags[b], params, /*train_mode=*/true, &rng, &caches[b]);
          LossValue lv =
              loss_fn(out.prediction, binarize_value(values.at(id), target, cutoff), values.at(id));
          epoch_loss += lv.loss;
          for (double& g : lv.grad) g *= inv_b;
          const ParamGrads bag_grads = backward_bag(bags[b], params, caches[b], lv.grad);
          accumulate_grads(grads, bag_grads, 1.0);
        }
      }

      const double lr = one_cycle_lr(global_step, total_steps, preset.lr, options.pct_start,
                                     options.div_start, options.div_final);
      optimizer_step(params, grads, opt, preset, lr);
      ++global_step;
    }

    const double train_loss = epoch_loss / static_cast<double>(order.size());
    if (!std::isfinite(train_loss)) throw std::runtime_error("diverged: non-finite training loss");
    log.train_loss.push_back(train_loss);
    // no validation patients: fall back to the training loss for stopping
    const double val_loss = fa.val_ids.empty() ? train_loss : eval_loss(fa.val_ids);
    log.val_loss.push_back(val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_params = params;
      log.best_epoch = epoch;
      epochs_since_improve = 0;
    } else {
      ++epochs_since_improve;
      if (epochs_since_improve >= preset.patience) {
        log.stopped_early = true;
        break;
      }
    }
  }

  TrainResult result;
  result.params = std::move(best_params);
  result.log = std::move(log);
  result.fitted_cutoff = cutoff;
  return result;
}

void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr\n";
  for (std::size_t e = 0; e < log.train_loss.size(); ++e)
    out << e << ',' << fmt_double(log.train_loss[e]) << ',' << fmt_double(log.val_loss[e]) << ','
        << fmt_double(log.lr[e]) << '\n';
  write_file_bytes(path, out.str());
}

}  // namespace milreg
