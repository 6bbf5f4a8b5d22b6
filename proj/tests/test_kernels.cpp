#include <doctest.h>

#include <cstring>

#include "milreg/common.hpp"
#include "milreg/kernels.hpp"

using namespace milreg;

namespace {

MatF random_features(Rng& rng, std::size_t n, std::size_t d) {
  MatF h(n, d);
  for (float& v : h.a) v = static_cast<float>(rng.normal());
  return h;
}

MatD random_mat(Rng& rng, std::size_t r, std::size_t c, double scale) {
  MatD m(r, c);
  for (double& v : m.a) v = rng.normal() * scale;
  return m;
}

VecD random_vec(Rng& rng, std::size_t n, double scale) {
  VecD v(n);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

bool bitwise_equal(const VecD& a, const VecD& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("kernels") {

// The parallel lane must be bit-identical to the serial reference: it only
// parallelizes across independent outputs.
TEST_CASE("serial and OpenMP lanes agree bitwise") {
  Rng rng(101);
  const std::size_t n = 37, d = 19, h_att = 11;
  const MatF h = random_features(rng, n, d);
  const MatD v = random_mat(rng, h_att, d, 0.3);
  const MatD u = random_mat(rng, h_att, d, 0.3);
  const VecD w = random_vec(rng, h_att, 0.5);
  std::vector<std::uint32_t> order(n);
  for (std::uint32_t i = 0; i < n; ++i) order[i] = (i * 7) % n;  // any fixed order

  MatD t_s, t_p, g_s, g_p;
  VecD e_s, e_p;
  kernels::serial::attention_scores(h, v, w, t_s, e_s);
  kernels::omp::attention_scores(h, v, w, t_p, e_p);
  CHECK(bitwise_equal(e_s, e_p));
  CHECK(bitwise_equal(t_s.a, t_p.a));

  kernels::serial::attention_scores_gated(h, v, u, w, t_s, g_s, e_s);
  kernels::omp::attention_scores_gated(h, v, u, w, t_p, g_p, e_p);
  CHECK(bitwise_equal(e_s, e_p));
  CHECK(bitwise_equal(g_s.a, g_p.a));

  VecD a = random_vec(rng, n, 1.0);
  VecD z_s, z_p;
  kernels::serial::weighted_pool(h, a, order, z_s);
  kernels::omp::weighted_pool(h, a, order, z_p);
  CHECK(bitwise_equal(z_s, z_p));

  VecD dz = random_vec(rng, d, 1.0), da_s, da_p;
  kernels::serial::pool_backward_da(h, dz, da_s);
  kernels::omp::pool_backward_da(h, dz, da_p);
  CHECK(bitwise_equal(da_s, da_p));

  VecD de = random_vec(rng, n, 1.0);
  MatD dv_s, dv_p, du_s, du_p;
  VecD dw_s, dw_p;
  kernels::serial::attn_param_grads(h, t_s, g_s, w, de, order, dv_s, du_s, dw_s);
  kernels::omp::attn_param_grads(h, t_p, g_p, w, de, order, dv_p, du_p, dw_p);
  CHECK(bitwise_equal(dv_s.a, dv_p.a));
  CHECK(bitwise_equal(du_s.a, du_p.a));
  CHECK(bitwise_equal(dw_s, dw_p));

  const MatD m = random_mat(rng, 17, 23, 0.7);
  const VecD x = random_vec(rng, 23, 1.0);
  const VecD bias = random_vec(rng, 17, 1.0);
  VecD y_s, y_p;
  kernels::serial::matvec(m, x, bias, y_s);
  kernels::omp::matvec(m, x, bias, y_p);
  CHECK(bitwise_equal(y_s, y_p));

  const VecD g = random_vec(rng, 17, 1.0);
  kernels::serial::matvec_t(m, g, y_s);
  kernels::omp::matvec_t(m, g, y_p);
  CHECK(bitwise_equal(y_s, y_p));
}

TEST_CASE("image kernels agree bitwise across lanes") {
  Rng rng(202);
  const int w = 61, h = 47;
  std::vector<double> img(static_cast<std::size_t>(w) * h);
  for (double& v : img) v = rng.uniform() * 255.0;

  std::vector<double> out_s, out_p, gx_s, gx_p, gy_s, gy_p;
  kernels::serial::gaussian_blur(img, w, h, 1.4, out_s);
  kernels::omp::gaussian_blur(img, w, h, 1.4, out_p);
  CHECK(bitwise_equal(out_s, out_p));

  kernels::serial::sobel(img, w, h, gx_s, gy_s);
  kernels::omp::sobel(img, w, h, gx_p, gy_p);
  CHECK(bitwise_equal(gx_s, gx_p));
  CHECK(bitwise_equal(gy_s, gy_p));

  const std::size_t n = 997;
  std::vector<std::uint8_t> rgb(3 * n);
  for (auto& v : rgb) v = static_cast<std::uint8_t>(rng.below(256));
  std::vector<double> od_s(3 * n), od_p(3 * n);
  kernels::serial::od_from_rgb(rgb.data(), n, od_s.data());
  kernels::omp::od_from_rgb(rgb.data(), n, od_p.data());
  CHECK(std::memcmp(od_s.data(), od_p.data(), od_s.size() * sizeof(double)) == 0);

  const double stain[6] = {0.6511, 0.0701, 0.7012, 0.9914, 0.2905, 0.1102};
  std::vector<double> c_s(2 * n), c_p(2 * n);
  kernels::serial::nnls2_batch(od_s.data(), n, stain, c_s.data());
  kernels::omp::nnls2_batch(od_p.data(), n, stain, c_p.data());
  CHECK(std::memcmp(c_s.data(), c_p.data(), c_s.size() * sizeof(double)) == 0);

  std::vector<std::uint8_t> rgb_s(3 * n), rgb_p(3 * n);
  kernels::serial::rgb_from_conc(c_s.data(), n, stain, rgb_s.data());
  kernels::omp::rgb_from_conc(c_p.data(), n, stain, rgb_p.data());
  CHECK(rgb_s == rgb_p);
}

TEST_CASE("nnls2 satisfies the KKT conditions") {
  Rng rng(303);
  const double stain[6] = {0.6511, 0.0701, 0.7012, 0.9914, 0.2905, 0.1102};
  for (int trial = 0; trial < 500; ++trial) {
    double od[3];
    for (double& v : od) v = rng.uniform(-0.2, 2.0);  // include infeasible directions
    double conc[2];
    kernels::serial::nnls2_batch(od, 1, stain, conc);
    CHECK(conc[0] >= 0.0);
    CHECK(conc[1] >= 0.0);
    // gradient of 0.5||S c - od||^2 wrt c: S^T (S c - od)
    double grad[2] = {0, 0};
    for (int r = 0; r < 3; ++r) {
      const double resid = stain[2 * r] * conc[0] + stain[2 * r + 1] * conc[1] - od[r];
      grad[0] += stain[2 * r] * resid;
      grad[1] += stain[2 * r + 1] * resid;
    }
    for (int k = 0; k < 2; ++k) {
      if (conc[k] > 1e-12)
        CHECK(std::abs(grad[k]) < 1e-9);  // interior coordinate: stationary
      else
        CHECK(grad[k] > -1e-9);  // active bound: ascent direction only
    }
  }
}

TEST_CASE("matvec matches a naive loop") {
  Rng rng(404);
  const MatD m = random_mat(rng, 9, 13, 1.0);
  const VecD x = random_vec(rng, 13, 1.0);
  VecD y;
  kernels::matvec(m, x, {}, y);
  for (std::size_t r = 0; r < 9; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 13; ++c) s += m.at(r, c) * x[c];
    CHECK(y[r] == doctest::Approx(s).epsilon(1e-14));
  }
}

TEST_CASE("gaussian blur preserves constants") {
  std::vector<double> img(40 * 30, 7.25);
  std::vector<double> out;
  kernels::gaussian_blur(img, 40, 30, 2.0, out);
  for (double v : out) CHECK(v == doctest::Approx(7.25).epsilon(1e-12));
}

}  // TEST_SUITE
