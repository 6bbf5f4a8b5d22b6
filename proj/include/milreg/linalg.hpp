#pragma once
// Small dense matrix containers and the few factorizations the pipeline
// needs (symmetric 3x3 eigen, SPD Cholesky). Row-major storage.
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace milreg {

using VecD = std::vector<double>;

struct MatD {
  std::size_t rows = 0, cols = 0;
  VecD a;

  MatD() = default;
  MatD(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
};

// 32-bit float storage for instance-feature matrices.
struct MatF {
  std::size_t rows = 0, cols = 0;
  std::vector<float> a;

  MatF() = default;
  MatF(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), a(r * c, fill) {}

  float& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  float* row(std::size_t r) { return a.data() + r * cols; }
  const float* row(std::size_t r) const { return a.data() + r * cols; }
};

// Jacobi eigendecomposition of a symmetric 3x3 matrix. Eigenvalues returned
// descending with matching unit eigenvector columns in `vecs` (row-major).
// Each eigenvector's sign is fixed so its largest-|component| is positive.
void eigen_sym3(const double mat[9], double vals[3], double vecs[9]);

// Cholesky solve of an SPD system; throws on a non-positive pivot.
VecD cholesky_solve(MatD a, VecD b);

// Inverse of an SPD matrix via Cholesky; throws on a non-positive pivot.
MatD spd_inverse(const MatD& a);

}  // namespace milreg
