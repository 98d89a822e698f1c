#pragma once

// A prediction map: context set + target inputs -> Gaussian over target outputs.

#include <algorithm>
#include <cstdint>
#include <span>

#include "gnp/encoders.hpp"
#include "gnp/heads.hpp"
#include "gnp/model_spec.hpp"
#include "gnp/nn.hpp"
#include "gnp/tasks.hpp"

namespace gnp {

inline std::size_t feature_dim(const ModelSpec& s) {
  switch (s.encoder) {
    case EncoderKind::DeepSet: return 1 + s.rep_dim;
    case EncoderKind::Attentive: return 1 + s.attention_dim * (s.attention_global ? 2 : 1);
    case EncoderKind::Conv: return s.conv_channels;
  }
  return 0;
}

/// Fresh parameters for `spec`, deterministic in `seed`.
inline Params init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Params p;
  Rng rng(seed);
  switch (spec.encoder) {
    case EncoderKind::DeepSet: init_deepset(spec, p, rng); break;
    case EncoderKind::Attentive: init_attentive(spec, p, rng); break;
    case EncoderKind::Conv: init_conv_encoder(spec, p, rng); break;
  }
  init_head(spec, p, feature_dim(spec), rng);
  return p;
}

/// Per-target feature rows [M, feature_dim].
inline Tensor target_features(const ModelSpec& spec, const Params& p, std::span<const double> x_c,
                              std::span<const double> y_c, std::span<const double> x_t) {
  switch (spec.encoder) {
    case EncoderKind::DeepSet: return query_deepset(encode_deepset(spec, p, x_c, y_c), x_t);
    case EncoderKind::Attentive:
      return query_attentive(spec, p, encode_attentive(spec, p, x_c, y_c), x_t);
    case EncoderKind::Conv: {
      double lo = 0.0, hi = 0.0;
      if (!x_t.empty()) {
        const auto [mn, mx] = std::minmax_element(x_t.begin(), x_t.end());
        lo = *mn;
        hi = *mx;
      } else if (!x_c.empty()) {
        lo = hi = *std::min_element(x_c.begin(), x_c.end());
      }
      return query_conv(spec, p, encode_conv(spec, p, x_c, y_c, lo, hi), x_t);
    }
  }
  throw std::logic_error("unknown encoder");
}

inline GaussianPredictive predict(const ModelSpec& spec, const Params& p,
                                  std::span<const double> x_c, std::span<const double> y_c,
                                  std::span<const double> x_t) {
  return apply_head(spec, p, target_features(spec, p, x_c, y_c, x_t));
}

inline GaussianPredictive predict(const ModelSpec& spec, const Params& p, const Dataset& d) {
  return predict(spec, p, d.x_c, d.y_c, d.x_t);
}

/// Joint log-likelihood of the episode's targets, in nats.
inline Tensor episode_loglik(const ModelSpec& spec, const Params& p, const Dataset& d) {
  return predictive_loglik(predict(spec, p, d), d.y_t);
}

/// Attach every parameter to `tape`, preserving names.
inline Params watch_all(Tape& tape, const Params& p) {
  Params out;
  for (const auto& [name, t] : p) out.emplace(name, tape.watch(t));
  return out;
}

inline std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  for (const auto& [name, t] : p) n += t.numel();
  return n;
}

}  // namespace gnp
