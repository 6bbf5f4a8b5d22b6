#pragma once
// Attention-pooled multiple-instance model: softmax attention over instance
// features, bag embedding, and a swappable 2-logit classification or scalar
// regression head, with analytic reverse-mode gradients.
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "milreg/common.hpp"
#include "milreg/data_model.hpp"
#include "milreg/linalg.hpp"

namespace milreg {

struct ModelParams {
  std::size_t d = 0, h_att = 128, h_mlp = 256, out = 1;
  double dropout_rate = 0.0;
  bool gated = false;  // gated attention variant (sigmoid branch)
  std::string preset_name;

  MatD v;        // h_att x d attention projection
  MatD u_gate;   // h_att x d, gated variant only
  VecD w;        // h_att attention scorer
  MatD head_w1;  // h_mlp x d
  VecD head_b1;  // h_mlp
  MatD head_w2;  // out x h_mlp
  VecD head_b2;  // out

  // batch normalization of the bag embedding (classification preset)
  bool bn_enabled = false;
  VecD bn_gamma, bn_beta, bn_running_mean, bn_running_var;
};

struct ParamGrads {
  MatD v, u_gate, head_w1, head_w2;
  VecD w, head_b1, head_b2;
  VecD bn_gamma, bn_beta;
};

// Tensors addressed uniformly for the optimizer; weight decay applies to
// weights only, never biases or the BN affine pair.
struct TensorRef {
  VecD* data;
  bool is_weight;
};
std::vector<TensorRef> param_tensors(ModelParams& p);
std::vector<TensorRef> grad_tensors(ParamGrads& g, const ModelParams& p);
ParamGrads zero_grads(const ModelParams& p);
void accumulate_grads(ParamGrads& acc, const ParamGrads& g, double scale);

// He-style uniform fan-in init, seeded; biases zero, BN identity.
ModelParams init_params(std::size_t d, std::size_t h_att, std::size_t h_mlp, std::size_t out,
                        double dropout_rate, bool gated, bool bn, std::uint64_t seed);

struct BagOutput {
  VecD prediction;  // class logits (out = 2) or scalar score (out = 1)
  VecD attention;   // per instance, nonnegative, sums to 1
};

// Forward/backward workspace. The canonical instance order makes every
// reduction independent of the bag's storage order, so predictions are
// bit-equal under instance permutation.
struct ForwardCache {
  std::vector<std::uint32_t> order;
  MatD tanh_act, gate_act;
  VecD e, a, z, zn, pre1, hidden;
  std::vector<std::uint8_t> dropout_mask;  // empty = no dropout applied
};

// Eval-mode BN (running statistics) is applied inside when enabled. In
// train mode, dropout draws a mask from `rng` unless `fixed_mask` is given.
BagOutput forward_bag(const FeatureBag& bag, const ModelParams& params, bool train_mode,
                      Rng* rng = nullptr, ForwardCache* cache = nullptr,
                      const std::vector<std::uint8_t>* fixed_mask = nullptr);

// dLoss/dparams for one bag given dLoss/dprediction; requires the cache of
// the matching forward pass.
ParamGrads backward_bag(const FeatureBag& bag, const ModelParams& params,
                        const ForwardCache& cache, const VecD& dpred);

// Pieces used by the batched training path (batch normalization needs the
// whole batch between pooling and the head).
void attention_pool(const FeatureBag& bag, const ModelParams& params, ForwardCache& cache);
VecD head_forward(const VecD& z_normed, const ModelParams& params, bool train_mode, Rng* rng,
                  ForwardCache& cache, const std::vector<std::uint8_t>* fixed_mask);
// Returns dLoss/dz_normed and fills head weight grads.
VecD head_backward(const ModelParams& params, const ForwardCache& cache, const VecD& dpred,
                   ParamGrads& grads);
// Backprop from dLoss/dz through pooling and attention; fills v/u/w grads.
void attention_backward(const FeatureBag& bag, const ModelParams& params,
                        const ForwardCache& cache, const VecD& dz, ParamGrads& grads);

// Versioned binary checkpoint ("MILM"), little-endian f32 tensors.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace milreg
