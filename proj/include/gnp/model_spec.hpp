#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gnp {

enum class EncoderKind { DeepSet, Attentive, Conv };
enum class HeadKind { MeanField, Linear, Kvv };

inline std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::DeepSet: return "deepset";
    case EncoderKind::Attentive: return "attentive";
    case EncoderKind::Conv: return "conv";
  }
  return "?";
}

inline std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::MeanField: return "meanfield";
    case HeadKind::Linear: return "linear";
    case HeadKind::Kvv: return "kvv";
  }
  return "?";
}

inline EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "deepset") return EncoderKind::DeepSet;
  if (s == "attentive") return EncoderKind::Attentive;
  if (s == "conv") return EncoderKind::Conv;
  throw std::invalid_argument("unknown encoder '" + s + "'");
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "meanfield") return HeadKind::MeanField;
  if (s == "linear") return HeadKind::Linear;
  if (s == "kvv") return HeadKind::Kvv;
  throw std::invalid_argument("unknown head '" + s + "'");
}

/// Architecture of one model: encoder x covariance head plus sizes.
struct ModelSpec {
  EncoderKind encoder = EncoderKind::Conv;
  HeadKind head = HeadKind::Kvv;

  // DeepSet phi / rho and every head network: `mlp_layers` linear layers of
  // width `width`.
  std::size_t width = 128;
  std::size_t mlp_layers = 3;
  std::size_t rep_dim = 128;

  // Cross-attention.
  std::size_t attention_heads = 8;
  std::size_t attention_dim = 128;
  bool attention_global = false;  // also append mean-pooled values

  // SetConv + CNN. Grid spacing is conv_lengthscale / 2 / grid_density.
  double conv_lengthscale = 0.2;
  std::size_t conv_channels = 64;
  std::size_t conv_layers = 6;
  std::size_t conv_kernel = 5;
  std::size_t grid_density = 1;
  double density_eps = 1e-8;

  // Covariance head. 0 picks the default: 128 for linear, 16 for kvv.
  std::size_t d_g = 0;
  double noise_init = 0.01;  // initial observation-noise variance

  std::size_t basis_dim() const {
    if (d_g) return d_g;
    return head == HeadKind::Kvv ? 16 : 128;
  }

  std::string name() const { return to_string(encoder) + "-" + to_string(head); }

  void validate() const {
    if (width == 0 || rep_dim == 0 || mlp_layers == 0) {
      throw std::invalid_argument("model: widths and layer counts must be positive");
    }
    if (attention_heads == 0 || attention_dim % attention_heads != 0) {
      throw std::invalid_argument("model: attention_dim must be a multiple of attention_heads");
    }
    if (!(conv_lengthscale > 0.0) || conv_channels == 0 || conv_layers == 0 ||
        conv_kernel % 2 == 0 || grid_density == 0) {
      throw std::invalid_argument("model: invalid convolutional settings");
    }
    if (head != HeadKind::MeanField && basis_dim() < 1) {
      throw std::invalid_argument("model: d_g must be >= 1");
    }
    if (!(noise_init > 0.0)) throw std::invalid_argument("model: noise_init must be positive");
  }
};

}  // namespace gnp
