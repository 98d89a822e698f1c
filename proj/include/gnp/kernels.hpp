#pragma once

// Ground-truth covariance functions for the synthetic regression tasks.
// Pure f64, never on a tape.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnp {

enum class KernelKind { EQ, Matern52, NoisyMixture, WeaklyPeriodic };

inline std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::EQ: return "eq";
    case KernelKind::Matern52: return "matern52";
    case KernelKind::NoisyMixture: return "noisy_mixture";
    case KernelKind::WeaklyPeriodic: return "weakly_periodic";
  }
  return "?";
}

inline KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "eq") return KernelKind::EQ;
  if (s == "matern52") return KernelKind::Matern52;
  if (s == "noisy_mixture") return KernelKind::NoisyMixture;
  if (s == "weakly_periodic") return KernelKind::WeaklyPeriodic;
  throw std::invalid_argument("unknown kernel kind '" + s + "'");
}

/// Kernel family plus its parameters. Unused fields are ignored by the
/// family that does not need them:
///   EQ, Matern52     : variance, lengthscale
///   NoisyMixture     : (variance, lengthscale) + (variance2, lengthscale2)
///   WeaklyPeriodic   : EQ (variance, lengthscale) times periodic (period,
///                      periodic_lengthscale)
struct KernelSpec {
  KernelKind kind = KernelKind::EQ;
  double variance = 1.0;
  double lengthscale = 1.0;
  double variance2 = 1.0;
  double lengthscale2 = 0.25;
  double period = 0.25;
  double periodic_lengthscale = 1.0;

  static KernelSpec eq() { return {KernelKind::EQ, 1.0, 1.0}; }
  static KernelSpec matern52() { return {KernelKind::Matern52, 1.0, 1.0}; }
  static KernelSpec noisy_mixture() { return {KernelKind::NoisyMixture, 1.0, 1.0, 1.0, 0.25}; }
  static KernelSpec weakly_periodic() {
    KernelSpec s{KernelKind::WeaklyPeriodic, 1.0, 1.0};
    s.period = 0.25;
    s.periodic_lengthscale = 1.0;
    return s;
  }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string("kernel parameter '") + name +
                                    "' must be positive and finite");
      }
    };
    positive(variance, "variance");
    positive(lengthscale, "lengthscale");
    if (kind == KernelKind::NoisyMixture) {
      positive(variance2, "variance2");
      positive(lengthscale2, "lengthscale2");
    }
    if (kind == KernelKind::WeaklyPeriodic) {
      positive(period, "period");
      positive(periodic_lengthscale, "periodic_lengthscale");
    }
  }

  /// k(x, x') for scalar inputs.
  double operator()(double x, double xp) const {
    const double r = std::abs(x - xp);
    auto eq = [r](double var, double ell) { return var * std::exp(-0.5 * r * r / (ell * ell)); };
    switch (kind) {
      case KernelKind::EQ: return eq(variance, lengthscale);
      case KernelKind::Matern52: {
        const double s = r / lengthscale;
        return variance * (1.0 + s + s * s / 3.0) * std::exp(-s);
      }
      case KernelKind::NoisyMixture: return eq(variance, lengthscale) + eq(variance2, lengthscale2);
      case KernelKind::WeaklyPeriodic: {
        const double sn = std::sin(std::numbers::pi * r / period);
        return eq(variance, lengthscale) *
               std::exp(-2.0 * sn * sn / (periodic_lengthscale * periodic_lengthscale));
      }
    }
    return 0.0;
  }
};

/// Row-major [xa.size() x xb.size()] Gram matrix.
inline std::vector<double> kernel_matrix(const KernelSpec& spec, std::span<const double> xa,
                                         std::span<const double> xb) {
  spec.validate();
  std::vector<double> k(xa.size() * xb.size());
  for (std::size_t i = 0; i < xa.size(); ++i) {
    if (!std::isfinite(xa[i])) throw std::invalid_argument("kernel_matrix: non-finite input");
    for (std::size_t j = 0; j < xb.size(); ++j) k[i * xb.size() + j] = spec(xa[i], xb[j]);
  }
  for (double v : xb) {
    if (!std::isfinite(v)) throw std::invalid_argument("kernel_matrix: non-finite input");
  }
  return k;
}

}  // namespace gnp
