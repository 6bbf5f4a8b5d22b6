#include "milreg/attmil.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "milreg/kernels.hpp"

namespace milreg {

namespace {
constexpr double kBnEps = 1e-5;

void he_uniform(Rng& rng, VecD& t, std::size_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& x : t) x = rng.uniform(-limit, limit);
}

void check_shapes(const FeatureBag& bag, const ModelParams& p) {
  if (bag.dim() != p.d)
    throw std::runtime_error("bag width " + std::to_string(bag.dim()) +
                             " does not match model d " + std::to_string(p.d));
  if (bag.n_instances() == 0) throw std::runtime_error("empty bag: " + bag.patient_id);
}

// Canonical instance order: ascending attention logit, ties broken by the
// raw feature bytes. Reductions in this order are permutation-independent.
std::vector<std::uint32_t> canonical_order(const VecD& e, const MatF& h) {
  std::vector<std::uint32_t> order(e.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::uint32_t i, std::uint32_t j) {
    if (e[i] != e[j]) return e[i] < e[j];
    return std::memcmp(h.row(i), h.row(j), h.cols * sizeof(float)) < 0;
  });
  return order;
}

}  // namespace

std::vector<TensorRef> param_tensors(ModelParams& p) {
  std::vector<TensorRef> t;
  t.push_back({&p.v.a, true});
  if (p.gated) t.push_back({&p.u_gate.a, true});
  t.push_back({&p.w, true});
  t.push_back({&p.head_w1.a, true});
  t.push_back({&p.head_b1, false});
  t.push_back({&p.head_w2.a, true});
  t.push_back({&p.head_b2, false});
  if (p.bn_enabled) {
    t.push_back({&p.bn_gamma, false});
    t.push_back({&p.bn_beta, false});
  }
  return t;
}

std::vector<TensorRef> grad_tensors(ParamGrads& g, const ModelParams& p) {
  std::vector<TensorRef> t;
  t.push_back({&g.v.a, true});
  if (p.gated) t.push_back({&g.u_gate.a, true});
  t.push_back({&g.w, true});
  t.push_back({&g.head_w1.a, true});
  t.push_back({&g.head_b1, false});
  t.push_back({&g.head_w2.a, true});
  t.push_back({&g.head_b2, false});
  if (p.bn_enabled) {
    t.push_back({&g.bn_gamma, false});
    t.push_back({&g.bn_beta, false});
  }
  return t;
}

ParamGrads zero_grads(const ModelParams& p) {
  ParamGrads g;
  g.v = MatD(p.h_att, p.d);
  if (p.gated) g.u_gate = MatD(p.h_att, p.d);
  g.w.assign(p.h_att, 0.0);
  g.head_w1 = MatD(p.h_mlp, p.d);
  g.head_b1.assign(p.h_mlp, 0.0);
  g.head_w2 = MatD(p.out, p.h_mlp);
  g.head_b2.assign(p.out, 0.0);
  if (p.bn_enabled) {
    g.bn_gamma.assign(p.d, 0.0);
    g.bn_beta.assign(p.d, 0.0);
  }
  return g;
}

void accumulate_grads(ParamGrads& acc, const ParamGrads& g, double scale) {
  auto add = [scale](VecD& dst, const VecD& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  add(acc.v.a, g.v.a);
  if (!acc.u_gate.a.empty()) add(acc.u_gate.a, g.u_gate.a);
  add(acc.w, g.w);
  add(acc.head_w1.a, g.head_w1.a);
  add(acc.head_b1, g.head_b1);
  add(acc.head_w2.a, g.head_w2.a);
  add(acc.head_b2, g.head_b2);
  if (!acc.bn_gamma.empty()) {
    add(acc.bn_gamma, g.bn_gamma);
    add(acc.bn_beta, g.bn_beta);
  }
}

ModelParams init_params(std::size_t d, std::size_t h_att, std::size_t h_mlp, std::size_t out,
                        double dropout_rate, bool gated, bool bn, std::uint64_t seed) {
  if (out != 1 && out != 2) throw std::invalid_argument("head must have 1 or 2 outputs");
  ModelParams p;
  p.d = d;
  p.h_att = h_att;
  p.h_mlp = h_mlp;
  p.out = out;
  p.dropout_rate = dropout_rate;
  p.gated = gated;
  p.bn_enabled = bn;

  Rng rng(derive_seed(seed, 0xA77));
  p.v = MatD(h_att, d);
  he_uniform(rng, p.v.a, d);
  if (gated) {
    p.u_gate = MatD(h_att, d);
    he_uniform(rng, p.u_gate.a, d);
  }
  p.w.assign(h_att, 0.0);
  he_uniform(rng, p.w, h_att);
  p.head_w1 = MatD(h_mlp, d);
  he_uniform(rng, p.head_w1.a, d);
  p.head_b1.assign(h_mlp, 0.0);
  p.head_w2 = MatD(out, h_mlp);
  he_uniform(rng, p.head_w2.a, h_mlp);
  // small output layer: keeps the initial prediction near the output bias,
  // which train_model sets from the training targets
  for (double& x : p.head_w2.a) x *= 0.1;
  p.head_b2.assign(out, 0.0);
  if (bn) {
    p.bn_gamma.assign(d, 1.0);
    p.bn_beta.assign(d, 0.0);
    p.bn_running_mean.assign(d, 0.0);
    p.bn_running_var.assign(d, 1.0);
  }
  return p;
}

void attention_pool(const FeatureBag& bag, const ModelParams& params, ForwardCache& cache) {
  check_shapes(bag, params);
  const MatF& h = bag.features;

  if (params.gated)
    kernels::attention_scores_gated(h, params.v, params.u_gate, params.w, cache.tanh_act,
                                    cache.gate_act, cache.e);
  else
    kernels::attention_scores(h, params.v, params.w, cache.tanh_act, cache.e);
  if (!all_finite(std::span<const double>(cache.e)))
    throw std::runtime_error("numeric overflow in attention logits");

  cache.order = canonical_order(cache.e, h);

  // stabilized softmax; the denominator accumulates in canonical order
  double mx = cache.e[0];
  for (double v : cache.e) mx = std::max(mx, v);
  cache.a.assign(cache.e.size(), 0.0);
  double denom = 0.0;
  for (std::uint32_t i : cache.order) denom += std::exp(cache.e[i] - mx);
  for (std::size_t i = 0; i < cache.e.size(); ++i)
    cache.a[i] = std::exp(cache.e[i] - mx) / denom;

  kernels::weighted_pool(h, cache.a, cache.order, cache.z);
}

VecD head_forward(const VecD& z_normed, const ModelParams& params, bool train_mode, Rng* rng,
                  ForwardCache& cache, const std::vector<std::uint8_t>* fixed_mask) {
  cache.zn = z_normed;
  kernels::matvec(params.head_w1, z_normed, params.head_b1, cache.pre1);
  cache.hidden.assign(params.h_mlp, 0.0);
  for (std::size_t i = 0; i < params.h_mlp; ++i)
    cache.hidden[i] = cache.pre1[i] > 0.0 ? cache.pre1[i] : 0.0;

  cache.dropout_mask.clear();
  if (train_mode && params.dropout_rate > 0.0) {
    if (fixed_mask) {
      cache.dropout_mask = *fixed_mask;
    } else {
      if (!rng) throw std::runtime_error("dropout requires an rng in train mode");
      cache.dropout_mask.resize(params.h_mlp);
      for (auto& m : cache.dropout_mask) m = rng->uniform() >= params.dropout_rate ? 1 : 0;
    }
    const double keep = 1.0 - params.dropout_rate;
    for (std::size_t i = 0; i < params.h_mlp; ++i)
      cache.hidden[i] = cache.dropout_mask[i] ? cache.hidden[i] / keep : 0.0;
  }

  VecD pred;
  kernels::matvec(params.head_w2, cache.hidden, params.head_b2, pred);
  if (!all_finite(std::span<const double>(pred)))
    throw std::runtime_error("numeric overflow in head output");
  return pred;
}

BagOutput forward_bag(const FeatureBag& bag, const ModelParams& params, bool train_mode,
                      Rng* rng, ForwardCache* cache_out, const std::vector<std::uint8_t>* fixed_mask) {
  ForwardCache local;
  ForwardCache& cache = cache_out ? *cache_out : local;
  attention_pool(bag, params, cache);

  VecD zn = cache.z;
  if (params.bn_enabled) {
    // single-bag path: always the running statistics
    for (std::size_t j = 0; j < params.d; ++j)
      zn[j] = params.bn_gamma[j] * (cache.z[j] - params.bn_running_mean[j]) /
                  std::sqrt(params.bn_running_var[j] + kBnEps) +
              params.bn_beta[j];
  }

  BagOutput out;
  out.prediction = head_forward(zn, params, train_mode, rng, cache, fixed_mask);
  out.attention = cache.a;
  return out;
}

VecD head_backward(const ModelParams& params, const ForwardCache& cache, const VecD& dpred,
                   ParamGrads& grads) {
  // W2 / b2
  for (std::size_t r = 0; r < params.out; ++r) {
    grads.head_b2[r] += dpred[r];
    double* row = grads.head_w2.row(r);
    for (std::size_t c = 0; c < params.h_mlp; ++c) row[c] += dpred[r] * cache.hidden[c];
  }
  VecD dhidden;
  kernels::matvec_t(params.head_w2, dpred, dhidden);

  if (!cache.dropout_mask.empty()) {
    const double keep = 1.0 - params.dropout_rate;
    for (std::size_t i = 0; i < dhidden.size(); ++i)
      dhidden[i] = cache.dropout_mask[i] ? dhidden[i] / keep : 0.0;
  }
  for (std::size_t i = 0; i < dhidden.size(); ++i)
    if (cache.pre1[i] <= 0.0) dhidden[i] = 0.0;

  for (std::size_t r = 0; r < params.h_mlp; ++r) {
    grads.head_b1[r] += dhidden[r];
    double* row = grads.head_w1.row(r);
    for (std::size_t c = 0; c < params.d; ++c) row[c] += dhidden[r] * cache.zn[c];
  }
  VecD dzn;
  kernels::matvec_t(params.head_w1, dhidden, dzn);
  return dzn;
}

void attention_backward(const FeatureBag& bag, const ModelParams& params,
                        const ForwardCache& cache, const VecD& dz, ParamGrads& grads) {
  const MatF& h = bag.features;
  VecD da;
  kernels::pool_backward_da(h, dz, da);

  // softmax backward: de_i = a_i * (da_i - sum_j a_j da_j)
  double s = 0.0;
  for (std::uint32_t i : cache.order) s += cache.a[i] * da[i];
  VecD de(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) de[i] = cache.a[i] * (da[i] - s);

  MatD dv, du;
  VecD dw;
  kernels::attn_param_grads(h, cache.tanh_act, params.gated ? cache.gate_act : MatD{}, params.w,
                            de, cache.order, dv, du, dw);
  for (std::size_t i = 0; i < dv.a.size(); ++i) grads.v.a[i] += dv.a[i];
  if (params.gated)
    for (std::size_t i = 0; i < du.a.size(); ++i) grads.u_gate.a[i] += du.a[i];
  for (std::size_t i = 0; i < dw.size(); ++i) grads.w[i] += dw[i];
}

ParamGrads backward_bag(const FeatureBag& bag, const ModelParams& params,
                        const ForwardCache& cache, const VecD& dpred) {
  ParamGrads grads = zero_grads(params);
  VecD dzn = head_backward(params, cache, dpred, grads);
  if (params.bn_enabled) {
    // eval-mode BN is per-dimension affine in z
    for (std::size_t j = 0; j < params.d; ++j) {
      const double inv_sd = 1.0 / std::sqrt(params.bn_running_var[j] + kBnEps);
      const double zhat = (cache.z[j] - params.bn_running_mean[j]) * inv_sd;
      grads.bn_gamma[j] += dzn[j] * zhat;
      grads.bn_beta[j] += dzn[j];
      dzn[j] *= params.bn_gamma[j] * inv_sd;
    }
  }
  attention_backward(bag, params, cache, dzn, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "MILM" | version u16 | d u32 | h_att u32 |
// h_mlp u32 | out u32 | flags u8 (bit0 gated, bit1 bn) | dropout f32 |
// preset u16+bytes | tensors f32 in declaration order.
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'M', 'I', 'L', 'M'};
constexpr std::uint16_t kCkptVersion = 1;

void append_tensor(std::string& buf, const VecD& t) {
  for (double v : t) le::append<float>(buf, static_cast<float>(v));
}

void read_tensor(const std::string& buf, std::size_t& off, VecD& t) {
  for (double& v : t) v = static_cast<double>(le::read<float>(buf, off));
}
}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& p) {
  std::string buf;
  buf.append(kCkptMagic, 4);
  le::append<std::uint16_t>(buf, kCkptVersion);
  le::append<std::uint32_t>(buf, static_cast<std::uint32_t>(p.d));
  le::append<std::uint32_t>(buf, static_cast<std::uint32_t>(p.h_att));
  le::append<std::uint32_t>(buf, static_cast<std::uint32_t>(p.h_mlp));
  le::append<std::uint32_t>(buf, static_cast<std::uint32_t>(p.out));
  le::append<std::uint8_t>(buf, (p.gated ? 1 : 0) | (p.bn_enabled ? 2 : 0));
  le::append<float>(buf, static_cast<float>(p.dropout_rate));
  le::append<std::uint16_t>(buf, static_cast<std::uint16_t>(p.preset_name.size()));
  buf += p.preset_name;
  append_tensor(buf, p.v.a);
  if (p.gated) append_tensor(buf, p.u_gate.a);
  append_tensor(buf, p.w);
  append_tensor(buf, p.head_w1.a);
  append_tensor(buf, p.head_b1);
  append_tensor(buf, p.head_w2.a);
  append_tensor(buf, p.head_b2);
  if (p.bn_enabled) {
    append_tensor(buf, p.bn_gamma);
    append_tensor(buf, p.bn_beta);
    append_tensor(buf, p.bn_running_mean);
    append_tensor(buf, p.bn_running_var);
  }
  write_file_bytes(path, buf);
}

ModelParams load_checkpoint(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  if (buf.size() < 25 || std::memcmp(buf.data(), kCkptMagic, 4) != 0)
    throw std::runtime_error("bad magic in checkpoint: " + path);
  std::size_t off = 4;
  if (le::read<std::uint16_t>(buf, off) != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  ModelParams p;
  p.d = le::read<std::uint32_t>(buf, off);
  p.h_att = le::read<std::uint32_t>(buf, off);
  p.h_mlp = le::read<std::uint32_t>(buf, off);
  p.out = le::read<std::uint32_t>(buf, off);
  const auto flags = le::read<std::uint8_t>(buf, off);
  p.gated = flags & 1;
  p.bn_enabled = flags & 2;
  p.dropout_rate = static_cast<double>(le::read<float>(buf, off));
  const auto name_len = le::read<std::uint16_t>(buf, off);
  if (off + name_len > buf.size()) throw std::runtime_error("truncated checkpoint: " + path);
  p.preset_name = buf.substr(off, name_len);
  off += name_len;

  p.v = MatD(p.h_att, p.d);
  read_tensor(buf, off, p.v.a);
  if (p.gated) {
    p.u_gate = MatD(p.h_att, p.d);
    read_tensor(buf, off, p.u_gate.a);
  }
  p.w.assign(p.h_att, 0.0);
  read_tensor(buf, off, p.w);
  p.head_w1 = MatD(p.h_mlp, p.d);
  read_tensor(buf, off, p.head_w1.a);
  p.head_b1.assign(p.h_mlp, 0.0);
  read_tensor(buf, off, p.head_b1);
  p.head_w2 = MatD(p.out, p.h_mlp);
  read_tensor(buf, off, p.head_w2.a);
  p.head_b2.assign(p.out, 0.0);
  read_tensor(buf, off, p.head_b2);
  if (p.bn_enabled) {
    p.bn_gamma.assign(p.d, 0.0);
    p.bn_beta.assign(p.d, 0.0);
    p.bn_running_mean.assign(p.d, 0.0);
    p.bn_running_var.assign(p.d, 0.0);
    read_tensor(buf, off, p.bn_gamma);
    read_tensor(buf, off, p.bn_beta);
    read_tensor(buf, off, p.bn_running_mean);
    read_tensor(buf, off, p.bn_running_var);
  }
  if (off != buf.size()) throw std::runtime_error("trailing bytes in checkpoint: " + path);
  return p;
}

}  // namespace milreg
