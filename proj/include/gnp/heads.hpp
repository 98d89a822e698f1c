#pragma once

// Gaussian predictive heads. Given per-target features, produce the mean and
// one of three covariance representations:
//   MeanField : independent variances            (Diagonal, var [M])
//   Linear    : K = Phi Phi^T, Phi = g(.)         (LowRank,  Phi [M, D_g])
//   Kvv       : K_ij = exp(-|g_i - g_j|^2 / 2) v_i v_j   (Dense, K [M, M])
// plus a learned homoscedastic noise variance added to the diagonal.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "gnp/model_spec.hpp"
#include "gnp/nn.hpp"
#include "gnp/ops.hpp"

namespace gnp {

enum class CovKind { Diagonal, LowRank, Dense };

struct GaussianPredictive {
  Tensor mean;       // [M]
  CovKind kind = CovKind::Diagonal;
  Tensor cov;        // Diagonal: var [M]; LowRank: Phi [M, D]; Dense: K [M, M]
  Tensor noise_var;  // scalar, > 0

  std::size_t size() const { return mean.numel(); }

  /// K materialized as [M, M], without the noise term.
  Tensor dense_cov() const {
    switch (kind) {
      case CovKind::Diagonal: {
        const std::size_t m = size();
        return mul(Tensor::eye(m), reshape(cov, Shape{1, m}));
      }
      case CovKind::LowRank: return matmul(cov, transpose(cov));
      case CovKind::Dense: return cov;
    }
    return cov;
  }

  /// Marginal variances of y: diag(K) + noise.
  std::vector<double> marginal_variance() const {
    const std::size_t m = size();
    std::vector<double> v(m);
    const double nv = noise_var.item();
    for (std::size_t i = 0; i < m; ++i) {
      switch (kind) {
        case CovKind::Diagonal: v[i] = cov[i]; break;
        case CovKind::LowRank: {
          const std::size_t d = cov.dim(1);
          double s = 0.0;
          for (std::size_t k = 0; k < d; ++k) s += cov[i * d + k] * cov[i * d + k];
          v[i] = s;
          break;
        }
        case CovKind::Dense: v[i] = cov[i * m + i]; break;
      }
      v[i] += nv;
    }
    return v;
  }
};

inline std::vector<std::size_t> head_dims(const ModelSpec& s, std::size_t in, std::size_t out) {
  std::vector<std::size_t> d{in};
  for (std::size_t i = 1; i < s.mlp_layers; ++i) d.push_back(s.width);
  d.push_back(out);
  return d;
}

inline void init_head(const ModelSpec& s, Params& p, std::size_t feature_dim, Rng& rng) {
  init_mlp(p, "head.f", head_dims(s, feature_dim, 1), rng);
  switch (s.head) {
    case HeadKind::MeanField: init_mlp(p, "head.s", head_dims(s, feature_dim, 1), rng); break;
    case HeadKind::Linear: init_mlp(p, "head.g", head_dims(s, feature_dim, s.basis_dim()), rng); break;
    case HeadKind::Kvv:
      init_mlp(p, "head.g", head_dims(s, feature_dim, s.basis_dim()), rng, 0.1);
      init_mlp(p, "head.v", head_dims(s, feature_dim, 1), rng);
      break;
  }
  p["noise.raw"] = Tensor::scalar(softplus_inverse(s.noise_init));
}

inline Tensor head_noise(const Params& p) { return softplus(param(p, "noise.raw")); }

inline Tensor head_mean(const ModelSpec& s, const Params& p, const Tensor& features) {
  return reshape(mlp(p, "head.f", features, s.mlp_layers), Shape{features.dim(0)});
}

inline GaussianPredictive head_meanfield(const ModelSpec& s, const Params& p,
                                         const Tensor& features) {
  const std::size_t m = features.dim(0);
  return {head_mean(s, p, features), CovKind::Diagonal,
          reshape(softplus(mlp(p, "head.s", features, s.mlp_layers)), Shape{m}), head_noise(p)};
}

inline GaussianPredictive head_linear(const ModelSpec& s, const Params& p, const Tensor& features) {
  return {head_mean(s, p, features), CovKind::LowRank, mlp(p, "head.g", features, s.mlp_layers),
          head_noise(p)};
}

/// K_ij = exp(-|g_i - g_j|^2 / 2) v_i v_j for embeddings g [M, D] and
/// scalars v [M, 1].
inline Tensor kvv_covariance(const Tensor& g, const Tensor& v) {
  return mul(exp(scale(sqdist(g, g), -0.5)), matmul(v, transpose(v)));
}

inline GaussianPredictive head_kvv(const ModelSpec& s, const Params& p, const Tensor& features) {
  const Tensor g = mlp(p, "head.g", features, s.mlp_layers);
  const Tensor v = mlp(p, "head.v", features, s.mlp_layers);
  return {head_mean(s, p, features), CovKind::Dense, kvv_covariance(g, v), head_noise(p)};
}

inline GaussianPredictive apply_head(const ModelSpec& s, const Params& p, const Tensor& features) {
  switch (s.head) {
    case HeadKind::MeanField: return head_meanfield(s, p, features);
    case HeadKind::Linear: return head_linear(s, p, features);
    case HeadKind::Kvv: return head_kvv(s, p, features);
  }
  throw std::logic_error("unknown head");
}

/// log N(y; m, K + noise I) in nats, differentiable. LowRank goes through the
/// Woodbury identity and the matrix determinant lemma with
/// A = noise I_D + Phi^T Phi:
///   log|K + noise I| = log|A| + (M - D) log noise
///   r^T (K + noise I)^-1 r = (r^T r - |L_A^-1 Phi^T r|^2) / noise
inline Tensor predictive_loglik(const GaussianPredictive& p, std::span<const double> y) {
  const std::size_t m = p.size();
  if (y.size() != m) throw ShapeError("predictive_loglik: target count mismatch");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const Tensor r = sub(Tensor::vector(std::vector<double>(y.begin(), y.end())), p.mean);  // [M]
  switch (p.kind) {
    case CovKind::Diagonal: {
      const Tensor var = add(p.cov, p.noise_var);
      const Tensor terms = add(log(var), div(square(r), var));
      return add_scalar(scale(sum_all(terms), -0.5), -0.5 * static_cast<double>(m) * log2pi);
    }
    case CovKind::LowRank: {
      const std::size_t d = p.cov.dim(1);
      const Tensor rc = reshape(r, Shape{m, 1});
      const Tensor a = add(matmul(transpose(p.cov), p.cov), mul(Tensor::eye(d), p.noise_var));
      const Tensor l = cholesky(a);
      const Tensor alpha = solve_lower(l, matmul(transpose(p.cov), rc));
      const Tensor quad = div(sub(sum_all(square(r)), sum_all(square(alpha))), p.noise_var);
      const Tensor logdet =
          add(scale(sum_all(log(diagonal(l))), 2.0),
              scale(log(p.noise_var), static_cast<double>(m) - static_cast<double>(d)));
      return add_scalar(scale(add(quad, logdet), -0.5), -0.5 * static_cast<double>(m) * log2pi);
    }
    case CovKind::Dense: {
      const Tensor k = add(p.cov, mul(Tensor::eye(m), p.noise_var));
      const Tensor l = cholesky(k);
      const Tensor alpha = solve_lower(l, reshape(r, Shape{m, 1}));
      const Tensor quad = sum_all(square(alpha));
      const Tensor logdet = scale(sum_all(log(diagonal(l))), 2.0);
      return add_scalar(scale(add(quad, logdet), -0.5), -0.5 * static_cast<double>(m) * log2pi);
    }
  }
  throw std::logic_error("unknown covariance kind");
}

}  // namespace gnp
