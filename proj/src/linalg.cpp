#include "milreg/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace milreg {

void eigen_sym3(const double mat[9], double vals[3], double vecs[9]) {
  double a[3][3];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a[r][c] = mat[3 * r + c];
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off < 1e-14) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::array<int, 3> idx = {0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](int i, int j) { return a[i][i] > a[j][j]; });
  for (int j = 0; j < 3; ++j) {
    const int src = idx[j];
    vals[j] = a[src][src];
    // sign convention: largest-|component| positive
    int big = 0;
    for (int k = 1; k < 3; ++k)
      if (std::abs(v[k][src]) > std::abs(v[big][src])) big = k;
    const double sgn = v[big][src] < 0 ? -1.0 : 1.0;
    for (int k = 0; k < 3; ++k) vecs[3 * k + j] = sgn * v[k][src];
  }
}

VecD cholesky_solve(MatD a, VecD b) {
  const std::size_t n = a.rows;
  if (a.cols != n || b.size() != n) throw std::invalid_argument("cholesky_solve: shape mismatch");
  // in-place lower Cholesky
  for (std::size_t j = 0; j < n; ++j) {
    double d = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a.at(j, k) * a.at(j, k);
    if (!(d > 0.0)) throw std::runtime_error("rank-deficient: matrix not positive definite");
    const double l = std::sqrt(d);
    a.at(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
      a.at(i, j) = s / l;
    }
  }
  // forward then backward substitution
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a.at(i, k) * b[k];
    b[i] = s / a.at(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= a.at(k, ii) * b[k];
    b[ii] = s / a.at(ii, ii);
  }
  return b;
}

MatD spd_inverse(const MatD& a) {
  const std::size_t n = a.rows;
  MatD inv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    VecD e(n, 0.0);
    e[j] = 1.0;
    const VecD col = cholesky_solve(a, e);
    for (std::size_t i = 0; i < n; ++i) inv.at(i, j) = col[i];
  }
  return inv;
}

}  // namespace milreg
