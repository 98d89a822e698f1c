#pragma once

// Exact GP posterior under the generating kernel: the performance ceiling for
// the learned models, plus its mean-field ("diagonalized") variant.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "gnp/kernels.hpp"
#include "gnp/linalg.hpp"

namespace gnp {

struct GPPosterior {
  std::vector<double> mean;  // [M]
  std::vector<double> cov;   // [M x M] row-major, noise-free
  double noise_var = 0.0;

  std::size_t size() const noexcept { return mean.size(); }
};

/// m = K_tc (K_cc + s I)^-1 y_c,  K = K_tt - K_tc (K_cc + s I)^-1 K_ct.
inline GPPosterior gp_posterior(const KernelSpec& spec, double noise_var,
                                std::span<const double> x_c, std::span<const double> y_c,
                                std::span<const double> x_t) {
  if (x_c.size() != y_c.size()) throw std::invalid_argument("gp_posterior: x_c/y_c size mismatch");
  if (!(noise_var > 0.0)) throw std::invalid_argument("gp_posterior: noise_var must be positive");
  const std::size_t n = x_c.size(), m = x_t.size();
  GPPosterior post;
  post.noise_var = noise_var;
  post.cov = kernel_matrix(spec, x_t, x_t);
  post.mean.assign(m, 0.0);
  if (n == 0) return post;

  auto kcc = kernel_matrix(spec, x_c, x_c);
  for (std::size_t i = 0; i < n; ++i) kcc[i * n + i] += noise_var;
  const auto chol = linalg::cholesky_jittered(kcc, n);
  const double* l = chol.factor.data();

  std::vector<double> alpha(y_c.begin(), y_c.end());
  linalg::solve_lower_inplace(l, alpha.data(), n, 1);
  auto v = kernel_matrix(spec, x_c, x_t);  // [n x m], becomes L^-1 K_ct
  linalg::solve_lower_inplace(l, v.data(), n, m);

  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < m; ++j) post.mean[j] += v[k * m + j] * alpha[k];
  std::vector<double> vtv(m * m, 0.0);
  linalg::gemm_tn_acc(v.data(), v.data(), vtv.data(), n, m, m);
  for (std::size_t i = 0; i < m * m; ++i) post.cov[i] -= vtv[i];
  // Restore exact symmetry lost to round-off in the subtraction order.
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double s = 0.5 * (post.cov[i * m + j] + post.cov[j * m + i]);
      post.cov[i * m + j] = post.cov[j * m + i] = s;
    }
  return post;
}

/// Same mean; off-diagonal covariance zeroed.
inline GPPosterior diagonalize(const GPPosterior& p) {
  GPPosterior out = p;
  const std::size_t m = p.size();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) out.cov[i * m + j] = 0.0;
  return out;
}

/// log N(y; mean, cov + noise_var I) in nats, through a Cholesky factor.
inline double gaussian_loglik(std::span<const double> mean, std::span<const double> cov,
                              double noise_var, std::span<const double> y) {
  const std::size_t m = mean.size();
  if (y.size() != m || cov.size() != m * m) {
    throw std::invalid_argument("gaussian_loglik: dimension mismatch");
  }
  std::vector<double> a(cov.begin(), cov.end());
  for (std::size_t i = 0; i < m; ++i) a[i * m + i] += noise_var;
  const auto chol = linalg::cholesky_jittered(a, m);
  std::vector<double> r(m);
  for (std::size_t i = 0; i < m; ++i) r[i] = y[i] - mean[i];
  linalg::solve_lower_inplace(chol.factor.data(), r.data(), m, 1);
  double quad = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    quad += r[i] * r[i];
    logdet += std::log(chol.factor[i * m + i]);
  }
  return -0.5 * quad - logdet - 0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
}

inline double gaussian_loglik(const GPPosterior& p, std::span<const double> y) {
  return gaussian_loglik(p.mean, p.cov, p.noise_var, y);
}

}  // namespace gnp
