#pragma once

// Synthetic meta-learning episodes drawn from a GP prior.
//
// Draw order for one episode (fixed, so corpora are reproducible):
//   N ~ UniformInt[n_context_min, n_context_max]
//   x_c[0..N), then x_t[0..M) ~ Uniform[x_lo, x_hi)
//   z[0..N+M) ~ N(0, 1);  f = L z  with L L^T = K(x_c ++ x_t)
//   e[0..N+M) ~ N(0, 1);  y = f + sqrt(noise_var) e

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "gnp/kernels.hpp"
#include "gnp/linalg.hpp"
#include "gnp/rng.hpp"

namespace gnp {

/// One episode: a context set and a target set.
struct Dataset {
  std::vector<double> x_c, y_c, x_t, y_t;

  std::size_t n_context() const noexcept { return x_c.size(); }
  std::size_t n_target() const noexcept { return x_t.size(); }
  bool operator==(const Dataset&) const = default;
};

struct TaskSpec {
  KernelSpec kernel = KernelSpec::eq();
  double noise_var = 0.05 * 0.05;
  std::int64_t n_context_min = 3;
  std::int64_t n_context_max = 50;
  std::int64_t n_target = 50;
  double x_lo = -2.0;
  double x_hi = 2.0;
  std::uint64_t seed = 0;

  void validate() const {
    kernel.validate();
    if (!(noise_var > 0.0)) throw std::invalid_argument("task: noise_var must be positive");
    if (n_context_min < 1 || n_context_max < n_context_min) {
      throw std::invalid_argument("task: need 1 <= n_context_min <= n_context_max");
    }
    if (n_target < 1) throw std::invalid_argument("task: n_target must be >= 1");
    if (!(x_lo < x_hi)) throw std::invalid_argument("task: x_lo must be < x_hi");
  }
};

/// Noisy GP draw at fixed inputs: f ~ GP(0, k), y = f + noise.
inline std::vector<double> sample_gp_outputs(const KernelSpec& kernel, double noise_var,
                                             std::span<const double> x, Rng& rng) {
  const std::size_t n = x.size();
  const auto k = kernel_matrix(kernel, x, x);
  const auto chol = linalg::cholesky_jittered(k, n);
  std::vector<double> z(n), y(n, 0.0);
  for (auto& v : z) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += chol.factor[i * n + j] * z[j];
    y[i] = s;
  }
  const double sd = std::sqrt(noise_var);
  for (auto& v : y) v += sd * rng.normal();
  return y;
}

inline Dataset sample_episode(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  Dataset d;
  const auto n = static_cast<std::size_t>(rng.uniform_int(spec.n_context_min, spec.n_context_max));
  const auto m = static_cast<std::size_t>(spec.n_target);
  d.x_c.resize(n);
  d.x_t.resize(m);
  for (auto& v : d.x_c) v = rng.uniform(spec.x_lo, spec.x_hi);
  for (auto& v : d.x_t) v = rng.uniform(spec.x_lo, spec.x_hi);
  std::vector<double> x_all(d.x_c);
  x_all.insert(x_all.end(), d.x_t.begin(), d.x_t.end());
  const auto y = sample_gp_outputs(spec.kernel, spec.noise_var, x_all, rng);
  d.y_c.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n));
  d.y_t.assign(y.begin() + static_cast<std::ptrdiff_t>(n), y.end());
  return d;
}

/// `batch_size` consecutive episodes from `rng`.
inline std::vector<Dataset> sample_batch(const TaskSpec& spec, std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  std::vector<Dataset> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(sample_episode(spec, rng));
  return out;
}

/// Episode `index` of the corpus identified by `seed`; random access.
inline Dataset corpus_episode(const TaskSpec& spec, std::uint64_t seed, std::uint64_t index) {
  Rng rng = Rng(seed).split(index);
  return sample_episode(spec, rng);
}

inline std::vector<Dataset> generate_corpus(const TaskSpec& spec, std::uint64_t seed,
                                            std::size_t count) {
  std::vector<Dataset> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(corpus_episode(spec, seed, i));
  return out;
}

}  // namespace gnp
