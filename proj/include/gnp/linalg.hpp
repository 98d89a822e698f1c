#pragma once

// Plain row-major dense kernels on raw spans. Everything here accumulates
// each output element sequentially in a fixed index order, so an element's
// value depends only on the operand rows/columns it reads and never on the
// overall problem size. The consistency properties of the models rely on it.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "gnp/tensor.hpp"

namespace gnp::linalg {

/// C[n,m] += A[n,k] * B[k,m]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                     std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[k,m] += A[n,k]^T * B[n,m]
inline void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t n,
                        std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::vector<double> transpose(const double* a, std::size_t n, std::size_t m) {
  std::vector<double> t(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) t[j * n + i] = a[i * m + j];
  return t;
}

/// C[n,m] += A[n,k] * B[m,k]^T
inline void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t n,
                        std::size_t k, std::size_t m) {
  const auto bt = transpose(b, m, k);
  gemm_acc(a, bt.data(), c, n, k, m);
}

/// In-place lower Cholesky of the lower triangle of `a` (n x n). The strict
/// upper triangle is zeroed on success. Returns n on success, otherwise the
/// index of the first failing pivot (contents are then unspecified).
inline std::size_t cholesky_inplace(std::span<double> a, std::size_t n, double* bad_pivot = nullptr) {
  for (std::size_t j = 0; j < n; ++j) {
    double* rj = a.data() + j * n;
    double d = rj[j];
    for (std::size_t k = 0; k < j; ++k) d -= rj[k] * rj[k];
    if (!(d > 0.0) || !std::isfinite(d)) {
      if (bad_pivot) *bad_pivot = d;
      return j;
    }
    const double ljj = std::sqrt(d);
    rj[j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double* ri = a.data() + i * n;
      double s = ri[j];
      for (std::size_t k = 0; k < j; ++k) s -= ri[k] * rj[k];
      ri[j] = s / ljj;
    }
    for (std::size_t k = j + 1; k < n; ++k) rj[k] = 0.0;
  }
  return n;
}

struct JitteredCholesky {
  std::vector<double> factor;  // row-major lower triangle
  double jitter = 0.0;         // added to the diagonal
};

/// Cholesky with the retry policy: jitter 0, then 1e-10 * mean|diag|,
/// growing x10 per retry, at most 5 retries. Throws CholeskyError carrying
/// the failing pivot of the last attempt.
inline JitteredCholesky cholesky_jittered(std::span<const double> a, std::size_t n) {
  if (a.size() != n * n) throw ShapeError("cholesky: expected square matrix");
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_diag += std::abs(a[i * n + i]);
  mean_diag = n ? mean_diag / static_cast<double>(n) : 0.0;
  if (!(mean_diag > 0.0)) mean_diag = 1.0;

  constexpr int kMaxRetries = 5;
  double jitter = 0.0;
  std::size_t pivot = 0;
  double pivot_value = 0.0;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    if (attempt == 1) jitter = 1e-10 * mean_diag;
    if (attempt > 1) jitter *= 10.0;
    std::vector<double> l(a.begin(), a.end());
    for (std::size_t i = 0; i < n; ++i) l[i * n + i] += jitter;
    pivot = cholesky_inplace(l, n, &pivot_value);
    if (pivot == n) return {std::move(l), jitter};
  }
  throw CholeskyError(pivot, pivot_value);
}

/// Solve L X = B in place; L lower (n x n), B is n x m.
inline void solve_lower_inplace(const double* l, double* b, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* bi = b + i * m;
    const double* li = l + i * n;
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = li[k];
      if (lik == 0.0) continue;
      const double* bk = b + k * m;
      for (std::size_t j = 0; j < m; ++j) bi[j] -= lik * bk[j];
    }
    const double inv = 1.0 / li[i];
    for (std::size_t j = 0; j < m; ++j) bi[j] *= inv;
  }
}

/// Solve L^T X = B in place; L lower (n x n), B is n x m.
inline void solve_lower_transposed_inplace(const double* l, double* b, std::size_t n,
                                           std::size_t m) {
  for (std::size_t i = n; i-- > 0;) {
    double* bi = b + i * m;
    for (std::size_t k = i + 1; k < n; ++k) {
      const double lki = l[k * n + i];
      if (lki == 0.0) continue;
      const double* bk = b + k * m;
      for (std::size_t j = 0; j < m; ++j) bi[j] -= lki * bk[j];
    }
    const double inv = 1.0 / l[i * n + i];
    for (std::size_t j = 0; j < m; ++j) bi[j] *= inv;
  }
}

}  // namespace gnp::linalg
