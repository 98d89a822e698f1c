#pragma once

// Scoring against the oracle, coherent function samples, covariance
// extraction and event probabilities.

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnp/heads.hpp"
#include "gnp/linalg.hpp"
#include "gnp/model.hpp"
#include "gnp/oracle.hpp"
#include "gnp/trainer.hpp"

namespace gnp {

struct EvalSummary {
  CorpusScore model;
  std::optional<CorpusScore> oracle;
  std::optional<CorpusScore> diagonal_oracle;
};

inline std::vector<EpisodeScore> score_oracle(const TaskSpec& task,
                                              const std::vector<Dataset>& corpus, bool diagonal) {
  std::vector<EpisodeScore> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& d = corpus[i];
    try {
      auto post = gp_posterior(task.kernel, task.noise_var, d.x_c, d.y_c, d.x_t);
      if (diagonal) post = diagonalize(post);
      const double joint = gaussian_loglik(post, d.y_t);
      out.push_back({joint, joint / static_cast<double>(d.n_target())});
    } catch (const std::runtime_error& e) {
      throw NumericError("oracle, episode " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

/// Model scores on `corpus`; with `task`, also the exact and diagonalized
/// oracle under the task's generating kernel.
inline EvalSummary evaluate(const ModelSpec& spec, const Params& params,
                            const std::vector<Dataset>& corpus,
                            const TaskSpec* task = nullptr) {
  if (corpus.empty()) throw std::invalid_argument("evaluate: empty corpus");
  EvalSummary s;
  s.model = summarize_scores(score_episodes(spec, params, corpus));
  if (task) {
    s.oracle = summarize_scores(score_oracle(*task, corpus, false));
    s.diagonal_oracle = summarize_scores(score_oracle(*task, corpus, true));
  }
  return s;
}

/// Draws [n_samples x M], row-major. Without `noiseless`, each draw includes
/// the homoscedastic observation noise.
inline std::vector<double> sample_functions(const GaussianPredictive& p, std::size_t n_samples,
                                            Rng& rng, bool noiseless = false) {
  if (n_samples < 1) throw std::invalid_argument("sample_functions: n_samples must be >= 1");
  const std::size_t m = p.size();
  const auto mean = p.mean.data();
  const auto cov = p.cov.data();
  const double sn = noiseless ? 0.0 : std::sqrt(p.noise_var.item());
  std::vector<double> out(n_samples * m);

  std::vector<double> chol;
  if (p.kind == CovKind::Dense) chol = linalg::cholesky_jittered(cov, m).factor;
  const std::size_t d = p.kind == CovKind::LowRank ? p.cov.dim(1) : 0;
  std::vector<double> z(p.kind == CovKind::LowRank ? d : m);

  for (std::size_t s = 0; s < n_samples; ++s) {
    double* y = out.data() + s * m;
    for (auto& v : z) v = rng.normal();
    switch (p.kind) {
      case CovKind::Diagonal:
        for (std::size_t i = 0; i < m; ++i) y[i] = mean[i] + std::sqrt(cov[i]) * z[i];
        break;
      case CovKind::LowRank:
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < d; ++k) acc += cov[i * d + k] * z[k];
          y[i] = mean[i] + acc;
        }
        break;
      case CovKind::Dense:
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k <= i; ++k) acc += chol[i * m + k] * z[k];
          y[i] = mean[i] + acc;
        }
        break;
    }
    if (sn > 0.0)
      for (std::size_t i = 0; i < m; ++i) y[i] += sn * rng.normal();
  }
  return out;
}

/// Noise-free predictive covariance K over `x_grid` given the episode's
/// context, [G x G] row-major.
inline std::vector<double> extract_covariance(const ModelSpec& spec, const Params& params,
                                              const Dataset& episode,
                                              std::span<const double> x_grid) {
  if (x_grid.empty()) throw std::invalid_argument("extract_covariance: empty grid");
  return predict(spec, params, episode.x_c, episode.y_c, x_grid).dense_cov().to_vector();
}

enum class EventMode { AllAbove, AnyBelow };

inline std::string to_string(EventMode m) { return m == EventMode::AllAbove ? "all_above" : "any_below"; }

inline EventMode event_mode_from_string(const std::string& s) {
  if (s == "all_above") return EventMode::AllAbove;
  if (s == "any_below") return EventMode::AnyBelow;
  throw std::invalid_argument("unknown event mode '" + s + "'");
}

struct EventProbability {
  double probability = 0.0;
  double standard_error = 0.0;
  std::size_t n_samples = 0;
  std::optional<double> independent_product;  // MeanField heads only
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Monte Carlo probability that every target lies above `threshold`
/// (AllAbove) or that at least one lies below it (AnyBelow), from coherent
/// joint samples including observation noise.
inline EventProbability event_probability(const GaussianPredictive& p, double threshold,
                                          EventMode mode, std::size_t n_samples, Rng& rng) {
  if (n_samples < 100) throw std::invalid_argument("event_probability: n_samples must be >= 100");
  const std::size_t m = p.size();
  const auto ys = sample_functions(p, n_samples, rng);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    bool all_above = true;
    for (std::size_t i = 0; i < m && all_above; ++i) all_above = ys[s * m + i] > threshold;
    hits += (mode == EventMode::AllAbove) == all_above ? 1 : 0;
  }
  EventProbability out;
  out.n_samples = n_samples;
  out.probability = static_cast<double>(hits) / static_cast<double>(n_samples);
  out.standard_error =
      std::sqrt(out.probability * (1.0 - out.probability) / static_cast<double>(n_samples));
  if (p.kind == CovKind::Diagonal) {
    const auto mean = p.mean.data();
    const auto var = p.marginal_variance();
    double prod = 1.0;
    for (std::size_t i = 0; i < m; ++i) prod *= 1.0 - normal_cdf((threshold - mean[i]) / std::sqrt(var[i]));
    out.independent_product = mode == EventMode::AllAbove ? prod : 1.0 - prod;
  }
  return out;
}

}  // namespace gnp
