#pragma once
// Data-parallel inner loops, each in two lanes: a serial reference and an
// OpenMP version. Parallelism is only ever across independent output
// elements; every reduction runs in the caller-supplied instance order, so
// the two lanes produce bit-identical results and the parallel lane is
// insensitive to thread count.
#include <cstdint>
#include <vector>

#include "milreg/linalg.hpp"

namespace milreg::kernels {

enum class Exec { serial, parallel };

// Process-wide lane selector (default parallel).
Exec& exec_mode();

// ---------------------------------------------------------------------------
// Attention / MLP kernels. H is the (n x d) instance-feature matrix.
// ---------------------------------------------------------------------------

// tanh_out(i,r) = tanh(V.row(r) . H.row(i)); e_out(i) = w . tanh_out.row(i)
void attention_scores(const MatF& h, const MatD& v, const VecD& w, MatD& tanh_out, VecD& e_out);

// Gated variant: gate(i,r) = sigmoid(U.row(r) . H.row(i));
// e_out(i) = sum_r w_r * tanh_out(i,r) * gate(i,r)
void attention_scores_gated(const MatF& h, const MatD& v, const MatD& u, const VecD& w,
                            MatD& tanh_out, MatD& gate_out, VecD& e_out);

// z_c = sum_{i in order} a_i * H(i,c)
void weighted_pool(const MatF& h, const VecD& a, const std::vector<std::uint32_t>& order,
                   VecD& z_out);

// da_i = H.row(i) . dz
void pool_backward_da(const MatF& h, const VecD& dz, VecD& da_out);

// Parameter gradients of the attention stage given de = dLoss/de.
// Pass gate as an empty MatD for the non-gated model (du_out ignored then).
void attn_param_grads(const MatF& h, const MatD& tanh_act, const MatD& gate, const VecD& w,
                      const VecD& de, const std::vector<std::uint32_t>& order, MatD& dv_out,
                      MatD& du_out, VecD& dw_out);

// y_r = W.row(r) . x + b_r  (pass empty bias for none)
void matvec(const MatD& w, const VecD& x, const VecD& bias, VecD& y_out);

// y_c = sum_r W(r,c) * g_r
void matvec_t(const MatD& w, const VecD& g, VecD& y_out);

// ---------------------------------------------------------------------------
// Per-pixel image kernels (grayscale buffers are row-major doubles).
// ---------------------------------------------------------------------------

// Separable Gaussian blur, reflective borders, kernel radius ceil(3*sigma).
void gaussian_blur(const std::vector<double>& img, int w, int h, double sigma,
                   std::vector<double>& out);

// 3x3 Sobel gradients, reflective borders.
void sobel(const std::vector<double>& img, int w, int h, std::vector<double>& gx,
           std::vector<double>& gy);

// od = -log10((v + 1) / 256) per channel of interleaved RGB.
void od_from_rgb(const std::uint8_t* rgb, std::size_t n_pixels, double* od);

// Exact 2-variable nonnegative least squares of od rows against the 3x2
// stain matrix; conc is n x 2.
void nnls2_batch(const double* od, std::size_t n_pixels, const double stain[6], double* conc);

// rgb = clamp(round(256 * 10^-(S c) - 1), 0, 255)
void rgb_from_conc(const double* conc, std::size_t n_pixels, const double stain[6],
                   std::uint8_t* rgb);

// Serial reference lane, kept for differential tests and benchmarks.
namespace serial {
void attention_scores(const MatF& h, const MatD& v, const VecD& w, MatD& tanh_out, VecD& e_out);
void attention_scores_gated(const MatF& h, const MatD& v, const MatD& u, const VecD& w,
                            MatD& tanh_out, MatD& gate_out, VecD& e_out);
void weighted_pool(const MatF& h, const VecD& a, const std::vector<std::uint32_t>& order,
                   VecD& z_out);
void pool_backward_da(const MatF& h, const VecD& dz, VecD& da_out);
void attn_param_grads(const MatF& h, const MatD& tanh_act, const MatD& gate, const VecD& w,
                      const VecD& de, const std::vector<std::uint32_t>& order, MatD& dv_out,
                      MatD& du_out, VecD& dw_out);
void matvec(const MatD& w, const VecD& x, const VecD& bias, VecD& y_out);
void matvec_t(const MatD& w, const VecD& g, VecD& y_out);
void gaussian_blur(const std::vector<double>& img, int w, int h, double sigma,
                   std::vector<double>& out);
void sobel(const std::vector<double>& img, int w, int h, std::vector<double>& gx,
           std::vector<double>& gy);
void od_from_rgb(const std::uint8_t* rgb, std::size_t n_pixels, double* od);
void nnls2_batch(const double* od, std::size_t n_pixels, const double stain[6], double* conc);
void rgb_from_conc(const double* conc, std::size_t n_pixels, const double stain[6],
                   std::uint8_t* rgb);
}  // namespace serial

// OpenMP lane.
namespace omp {
void attention_scores(const MatF& h, const MatD& v, const VecD& w, MatD& tanh_out, VecD& e_out);
void attention_scores_gated(const MatF& h, const MatD& v, const MatD& u, const VecD& w,
                            MatD& tanh_out, MatD& gate_out, VecD& e_out);
void weighted_pool(const MatF& h, const VecD& a, const std::vector<std::uint32_t>& order,
                   VecD& z_out);
void pool_backward_da(const MatF& h, const VecD& dz, VecD& da_out);
void attn_param_grads(const MatF& h, const MatD& tanh_act, const MatD& gate, const VecD& w,
                      const VecD& de, const std::vector<std::uint32_t>& order, MatD& dv_out,
                      MatD& du_out, VecD& dw_out);
void matvec(const MatD& w, const VecD& x, const VecD& bias, VecD& y_out);
void matvec_t(const MatD& w, const VecD& g, VecD& y_out);
void gaussian_blur(const std::vector<double>& img, int w, int h, double sigma,
                   std::vector<double>& out);
void sobel(const std::vector<double>& img, int w, int h, std::vector<double>& gx,
           std::vector<double>& gy);
void od_from_rgb(const std::uint8_t* rgb, std::size_t n_pixels, double* od);
void nnls2_batch(const double* od, std::size_t n_pixels, const double stain[6], double* conc);
void rgb_from_conc(const double* conc, std::size_t n_pixels, const double stain[6],
                   std::uint8_t* rgb);
}  // namespace omp

}  // namespace milreg::kernels
