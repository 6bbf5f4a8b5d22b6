#include "milreg/kernels.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace milreg::kernels {

Exec& exec_mode() {
  static Exec mode = Exec::parallel;
  return mode;
}

namespace {

// --- per-output-element bodies shared by both lanes -------------------------

inline void score_row(const MatF& h, const MatD& v, const VecD& w, MatD& tanh_out, VecD& e_out,
                      std::size_t i) {
  const float* hi = h.row(i);
  double e = 0.0;
  double* ti = tanh_out.row(i);
  for (std::size_t r = 0; r < v.rows; ++r) {
    const double* vr = v.row(r);
    double pre = 0.0;
    for (std::size_t c = 0; c < v.cols; ++c) pre += vr[c] * static_cast<double>(hi[c]);
    const double t = std::tanh(pre);
    ti[r] = t;
    e += w[r] * t;
  }
  e_out[i] = e;
}

inline void score_row_gated(const MatF& h, const MatD& v, const MatD& u, const VecD& w,
                            MatD& tanh_out, MatD& gate_out, VecD& e_out, std::size_t i) {
  const float* hi = h.row(i);
  double e = 0.0;
  double* ti = tanh_out.row(i);
  double* gi = gate_out.row(i);
  for (std::size_t r = 0; r < v.rows; ++r) {
    const double* vr = v.row(r);
    const double* ur = u.row(r);
    double pre_t = 0.0, pre_g = 0.0;
    for (std::size_t c = 0; c < v.cols; ++c) {
      const double x = static_cast<double>(hi[c]);
      pre_t += vr[c] * x;
      pre_g += ur[c] * x;
    }
    const double t = std::tanh(pre_t);
    const double g = 1.0 / (1.0 + std::exp(-pre_g));
    ti[r] = t;
    gi[r] = g;
    e += w[r] * t * g;
  }
  e_out[i] = e;
}

inline void pool_col(const MatF& h, const VecD& a, const std::vector<std::uint32_t>& order,
                     VecD& z_out, std::size_t c) {
  double s = 0.0;
  for (std::uint32_t i : order) s += a[i] * static_cast<double>(h.at(i, c));
  z_out[c] = s;
}

inline void da_row(const MatF& h, const VecD& dz, VecD& da_out, std::size_t i) {
  const float* hi = h.row(i);
  double s = 0.0;
  for (std::size_t c = 0; c < h.cols; ++c) s += static_cast<double>(hi[c]) * dz[c];
  da_out[i] = s;
}

inline void param_grad_row(const MatF& h, const MatD& tanh_act, const MatD& gate, const VecD& w,
                           const VecD& de, const std::vector<std::uint32_t>& order, MatD& dv_out,
                           MatD& du_out, VecD& dw_out, std::size_t r) {
  const bool gated = gate.rows != 0;
  double* dvr = dv_out.row(r);
  double* dur = gated ? du_out.row(r) : nullptr;
  std::memset(dvr, 0, sizeof(double) * dv_out.cols);
  if (gated) std::memset(dur, 0, sizeof(double) * du_out.cols);
  double dw = 0.0;
  for (std::uint32_t i : order) {
    const double t = tanh_act.at(i, r);
    const float* hi = h.row(i);
    if (gated) {
      const double g = gate.at(i, r);
      dw += de[i] * t * g;
      const double dpre_t = de[i] * w[r] * g * (1.0 - t * t);
      const double dpre_g = de[i] * w[r] * t * g * (1.0 - g);
      for (std::size_t c = 0; c < h.cols; ++c) {
        const double x = static_cast<double>(hi[c]);
        dvr[c] += dpre_t * x;
        dur[c] += dpre_g * x;
      }
    } else {
      dw += de[i] * t;
      const double dpre_t = de[i] * w[r] * (1.0 - t * t);
      for (std::size_t c = 0; c < h.cols; ++c) dvr[c] += dpre_t * static_cast<double>(hi[c]);
    }
  }
  dw_out[r] = dw;
}

inline void matvec_row(const MatD& w, const VecD& x, const VecD& bias, VecD& y_out,
                       std::size_t r) {
  const double* wr = w.row(r);
  double s = bias.empty() ? 0.0 : bias[r];
  for (std::size_t c = 0; c < w.cols; ++c) s += wr[c] * x[c];
  y_out[r] = s;
}

inline void matvec_t_col(const MatD& w, const VecD& g, VecD& y_out, std::size_t c) {
  double s = 0.0;
  for (std::size_t r = 0; r < w.rows; ++r) s += w.at(r, c) * g[r];
  y_out[c] = s;
}

// reflective border index
inline int reflect(int i, int n) {
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - 1 - i;
  return i;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

inline void blur_row_pass(const std::vector<double>& img, int w, const std::vector<double>& k,
                          int radius, std::vector<double>& out, int y) {
  for (int x = 0; x < w; ++x) {
    double s = 0.0;
    for (int j = -radius; j <= radius; ++j) s += k[j + radius] * img[y * w + reflect(x + j, w)];
    out[y * w + x] = s;
  }
}

inline void blur_col_pass(const std::vector<double>& img, int w, int h,
                          const std::vector<double>& k, int radius, std::vector<double>& out,
                          int y) {
  for (int x = 0; x < w; ++x) {
    double s = 0.0;
    for (int j = -radius; j <= radius; ++j) s += k[j + radius] * img[reflect(y + j, h) * w + x];
    out[y * w + x] = s;
  }
}

inline void sobel_row(const std::vector<double>& img, int w, int h, std::vector<double>& gx,
                      std::vector<double>& gy, int y) {
  const int ym = reflect(y - 1, h), yp = reflect(y + 1, h);
  for (int x = 0; x < w; ++x) {
    const int xm = reflect(x - 1, w), xp = reflect(x + 1, w);
    const double a = img[ym * w + xm], b = img[ym * w + x], c = img[ym * w + xp];
    const double d = img[y * w + xm], f = img[y * w + xp];
    const double g = img[yp * w + xm], hh = img[yp * w + x], ii = img[yp * w + xp];
    gx[y * w + x] = (c + 2.0 * f + ii) - (a + 2.0 * d + g);
    gy[y * w + x] = (g + 2.0 * hh + ii) - (a + 2.0 * b + c);
  }
}

inline void od_pixel(const std::uint8_t* rgb, double* od, std::size_t i) {
  for (int c = 0; c < 3; ++c) {
    const double v = static_cast<double>(rgb[3 * i + c]);
    od[3 * i + c] = -std::log10((v + 1.0) / 256.0);
  }
}

// Exact NNLS for two variables: interior solution or the best clamped face.
inline void nnls2_pixel(const double* od, const double s[6], double* conc, std::size_t i) {
  const double* y = od + 3 * i;
  // normal equations: A = S^T S (2x2), b = S^T y
  double a11 = 0.0, a12 = 0.0, a22 = 0.0, b1 = 0.0, b2 = 0.0;
  for (int r = 0; r < 3; ++r) {
    const double s1 = s[2 * r], s2 = s[2 * r + 1];
    a11 += s1 * s1;
    a12 += s1 * s2;
    a22 += s2 * s2;
    b1 += s1 * y[r];
    b2 += s2 * y[r];
  }
  const double det = a11 * a22 - a12 * a12;
  double c1 = 0.0, c2 = 0.0;
  if (det > 1e-12) {
    c1 = (b1 * a22 - b2 * a12) / det;
    c2 = (b2 * a11 - b1 * a12) / det;
  }
  if (det <= 1e-12 || c1 < 0.0 || c2 < 0.0) {
    const double f1 = a11 > 0.0 ? std::max(0.0, b1 / a11) : 0.0;
    const double f2 = a22 > 0.0 ? std::max(0.0, b2 / a22) : 0.0;
    // residual^2 up to the constant |y|^2: c^T A c - 2 c^T b
    const double r1 = f1 * f1 * a11 - 2.0 * f1 * b1;
    const double r2 = f2 * f2 * a22 - 2.0 * f2 * b2;
    if (r1 <= r2) {
      c1 = f1;
      c2 = 0.0;
    } else {
      c1 = 0.0;
      c2 = f2;
    }
  }
  conc[2 * i] = c1;
  conc[2 * i + 1] = c2;
}

inline void rgb_pixel(const double* conc, const double s[6], std::uint8_t* rgb, std::size_t i) {
  const double c1 = conc[2 * i], c2 = conc[2 * i + 1];
  for (int r = 0; r < 3; ++r) {
    const double od = s[2 * r] * c1 + s[2 * r + 1] * c2;
    double v = std::round(256.0 * std::pow(10.0, -od) - 1.0);
    v = std::min(255.0, std::max(0.0, v));
    rgb[3 * i + r] = static_cast<std::uint8_t>(v);
  }
}

}  // namespace

// --- serial lane -------------------------------------------------------------

namespace serial {

void attention_scores(const MatF& h, const MatD& v, const VecD& w, MatD& tanh_out, VecD& e_out) {
  tanh_out = MatD(h.rows, v.rows);
  e_out.assign(h.rows, 0.0);
  for (std::size_t i = 0; i < h.rows; ++i) score_row(h, v, w, tanh_out, e_out, i);
}

void attention_scores_gated(const MatF& h, const MatD& v, const MatD& u, const VecD& w,
                            MatD& tanh_out, MatD& gate_out, VecD& e_out) {
  tanh_out = MatD(h.rows, v.rows);
  gate_out = MatD(h.rows, v.rows);
  e_out.assign(h.rows, 0.0);
  for (std::size_t i = 0; i < h.rows; ++i)
    score_row_gated(h, v, u, w, tanh_out, gate_out, e_out, i);
}

void weighted_pool(const MatF& h, const VecD& a, const std::vector<std::uint32_t>& order,
                   VecD& z_out) {
  z_out.assign(h.cols, 0.0);
  for (std::size_t c = 0; c < h.cols; ++c) pool_col(h, a, order, z_out, c);
}

void pool_backward_da(const MatF& h, const VecD& dz, VecD& da_out) {
  da_out.assign(h.rows, 0.0);
  for (std::size_t i = 0; i < h.rows; ++i) da_row(h, dz, da_out, i);
}

void attn_param_grads(const MatF& h, const MatD& tanh_act, const MatD& gate, const VecD& w,
                      const VecD& de, const std::vector<std::uint32_t>& order, MatD& dv_out,
                      MatD& du_out, VecD& dw_out) {
  dv_out = MatD(tanh_act.cols, h.cols);
  if (gate.rows != 0) du_out = MatD(tanh_act.cols, h.cols);
  dw_out.assign(tanh_act.cols, 0.0);
  for (std::size_t r = 0; r < tanh_act.cols; ++r)
    param_grad_row(h, tanh_act, gate, w, de, order, dv_out, du_out, dw_out, r);
}

void matvec(const MatD& w, const VecD& x, const VecD& bias, VecD& y_out) {
  y_out.assign(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) matvec_row(w, x, bias, y_out, r);
}

void matvec_t(const MatD& w, const VecD& g, VecD& y_out) {
  y_out.assign(w.cols, 0.0);
  for (std::size_t c = 0; c < w.cols; ++c) matvec_t_col(w, g, y_out, c);
}

void gaussian_blur(const std::vector<double>& img, int w, int h, double sigma,
                   std::vector<double>& out) {
  const auto k = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(k.size()) - 1) / 2;
  std::vector<double> tmp(img.size());
  for (int y = 0; y < h; ++y) blur_row_pass(img, w, k, radius, tmp, y);
  out.resize(img.size());
  for (int y = 0; y < h; ++y) blur_col_pass(tmp, w, h, k, radius, out, y);
}

void sobel(const std::vector<double>& img, int w, int h, std::vector<double>& gx,
           std::vector<double>& gy) {
  gx.resize(img.size());
  gy.resize(img.size());
  for (int y = 0; y < h; ++y) sobel_row(img, w, h, gx, gy, y);
}

void od_from_rgb(const std::uint8_t* rgb, std::size_t n_pixels, double* od) {
  for (std::size_t i = 0; i < n_pixels; ++i) od_pixel(rgb, od, i);
}

void nnls2_batch(const double* od, std::size_t n_pixels, const double stain[6], double* conc) {
  for (std::size_t i = 0; i < n_pixels; ++i) nnls2_pixel(od, stain, conc, i);
}

void rgb_from_conc(const double* conc, std::size_t n_pixels, const double stain[6],
                   std::uint8_t* rgb) {
  for (std::size_t i = 0; i < n_pixels; ++i) rgb_pixel(conc, stain, rgb, i);
}

}  // namespace serial

// --- OpenMP lane --------------------------------------------------------------

namespace omp {

void attention_scores(const MatF& h, const MatD& v, const VecD& w, MatD& tanh_out, VecD& e_out) {
  tanh_out = MatD(h.rows, v.rows);
  e_out.assign(h.rows, 0.0);
  const std::int64_t n = static_cast<std::int64_t>(h.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) score_row(h, v, w, tanh_out, e_out, i);
}

void attention_scores_gated(const MatF& h, const MatD& v, const MatD& u, const VecD& w,
                            MatD& tanh_out, MatD& gate_out, VecD& e_out) {
  tanh_out = MatD(h.rows, v.rows);
  gate_out = MatD(h.rows, v.rows);
  e_out.assign(h.rows, 0.0);
  const std::int64_t n = static_cast<std::int64_t>(h.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) score_row_gated(h, v, u, w, tanh_out, gate_out, e_out, i);
}

void weighted_pool(const MatF& h, const VecD& a, const std::vector<std::uint32_t>& order,
                   VecD& z_out) {
  z_out.assign(h.cols, 0.0);
  const std::int64_t d = static_cast<std::int64_t>(h.cols);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < d; ++c) pool_col(h, a, order, z_out, c);
}

void pool_backward_da(const MatF& h, const VecD& dz, VecD& da_out) {
  da_out.assign(h.rows, 0.0);
  const std::int64_t n = static_cast<std::int64_t>(h.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) da_row(h, dz, da_out, i);
}

void attn_param_grads(const MatF& h, const MatD& tanh_act, const MatD& gate, const VecD& w,
                      const VecD& de, const std::vector<std::uint32_t>& order, MatD& dv_out,
                      MatD& du_out, VecD& dw_out) {
  dv_out = MatD(tanh_act.cols, h.cols);
  if (gate.rows != 0) du_out = MatD(tanh_act.cols, h.cols);
  dw_out.assign(tanh_act.cols, 0.0);
  const std::int64_t m = static_cast<std::int64_t>(tanh_act.cols);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < m; ++r)
    param_grad_row(h, tanh_act, gate, w, de, order, dv_out, du_out, dw_out, r);
}

void matvec(const MatD& w, const VecD& x, const VecD& bias, VecD& y_out) {
  y_out.assign(w.rows, 0.0);
  const std::int64_t m = static_cast<std::int64_t>(w.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < m; ++r) matvec_row(w, x, bias, y_out, r);
}

void matvec_t(const MatD& w, const VecD& g, VecD& y_out) {
  y_out.assign(w.cols, 0.0);
  const std::int64_t n = static_cast<std::int64_t>(w.cols);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < n; ++c) matvec_t_col(w, g, y_out, c);
}

void gaussian_blur(const std::vector<double>& img, int w, int h, double sigma,
                   std::vector<double>& out) {
  const auto k = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(k.size()) - 1) / 2;
  std::vector<double> tmp(img.size());
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) blur_row_pass(img, w, k, radius, tmp, y);
  out.resize(img.size());
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) blur_col_pass(tmp, w, h, k, radius, out, y);
}

void sobel(const std::vector<double>& img, int w, int h, std::vector<double>& gx,
           std::vector<double>& gy) {
  gx.resize(img.size());
  gy.resize(img.size());
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) sobel_row(img, w, h, gx, gy, y);
}

void od_from_rgb(const std::uint8_t* rgb, std::size_t n_pixels, double* od) {
  const std::int64_t n = static_cast<std::int64_t>(n_pixels);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) od_pixel(rgb, od, i);
}

void nnls2_batch(const double* od, std::size_t n_pixels, const double stain[6], double* conc) {
  const std::int64_t n = static_cast<std::int64_t>(n_pixels);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) nnls2_pixel(od, stain, conc, i);
}

void rgb_from_conc(const double* conc, std::size_t n_pixels, const double stain[6],
                   std::uint8_t* rgb) {
  const std::int64_t n = static_cast<std::int64_t>(n_pixels);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) rgb_pixel(conc, stain, rgb, i);
}

}  // namespace omp

// --- lane dispatch ------------------------------------------------------------

#define MILREG_DISPATCH(fn, ...)                 \
  do {                                           \
    if (exec_mode() == Exec::parallel)           \
      omp::fn(__VA_ARGS__);                      \
    else                                         \
      serial::fn(__VA_ARGS__);                   \
  } while (0)

void attention_scores(const MatF& h, const MatD& v, const VecD& w, MatD& tanh_out, VecD& e_out) {
  MILREG_DISPATCH(attention_scores, h, v, w, tanh_out, e_out);
}
void attention_scores_gated(const MatF& h, const MatD& v, const MatD& u, const VecD& w,
                            MatD& tanh_out, MatD& gate_out, VecD& e_out) {
  MILREG_DISPATCH(attention_scores_gated, h, v, u, w, tanh_out, gate_out, e_out);
}
void weighted_pool(const MatF& h, const VecD& a, const std::vector<std::uint32_t>& order,
                   VecD& z_out) {
  MILREG_DISPATCH(weighted_pool, h, a, order, z_out);
}
void pool_backward_da(const MatF& h, const VecD& dz, VecD& da_out) {
  MILREG_DISPATCH(pool_backward_da, h, dz, da_out);
}
void attn_param_grads(const MatF& h, const MatD& tanh_act, const MatD& gate, const VecD& w,
                      const VecD& de, const std::vector<std::uint32_t>& order, MatD& dv_out,
                      MatD& du_out, VecD& dw_out) {
  MILREG_DISPATCH(attn_param_grads, h, tanh_act, gate, w, de, order, dv_out, du_out, dw_out);
}
void matvec(const MatD& w, const VecD& x, const VecD& bias, VecD& y_out) {
  MILREG_DISPATCH(matvec, w, x, bias, y_out);
}
void matvec_t(const MatD& w, const VecD& g, VecD& y_out) {
  MILREG_DISPATCH(matvec_t, w, g, y_out);
}
void gaussian_blur(const std::vector<double>& img, int w, int h, double sigma,
                   std::vector<double>& out) {
  MILREG_DISPATCH(gaussian_blur, img, w, h, sigma, out);
}
void sobel(const std::vector<double>& img, int w, int h, std::vector<double>& gx,
           std::vector<double>& gy) {
  MILREG_DISPATCH(sobel, img, w, h, gx, gy);
}
void od_from_rgb(const std::uint8_t* rgb, std::size_t n_pixels, double* od) {
  MILREG_DISPATCH(od_from_rgb, rgb, n_pixels, od);
}
void nnls2_batch(const double* od, std::size_t n_pixels, const double stain[6], double* conc) {
  MILREG_DISPATCH(nnls2_batch, od, n_pixels, stain, conc);
}
void rgb_from_conc(const double* conc, std::size_t n_pixels, const double stain[6],
                   std::uint8_t* rgb) {
  MILREG_DISPATCH(rgb_from_conc, conc, n_pixels, stain, rgb);
}

#undef MILREG_DISPATCH

}  // namespace milreg::kernels
