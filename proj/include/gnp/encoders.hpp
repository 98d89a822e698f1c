#pragma once

// Context-set encoders. Each produces a representation that can be queried at
// arbitrary target inputs, giving one feature row per target. A target's row
// depends only on that target's input and the context, never on the other
// targets.
//
// Context points are first put into canonical order (ascending x, ties by y)
// so every reduction over the context runs in the same order for any
// permutation of the input, which makes permutation invariance exact.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "gnp/model_spec.hpp"
#include "gnp/nn.hpp"
#include "gnp/ops.hpp"

namespace gnp {

struct Context {
  std::vector<double> x, y;
  std::size_t size() const noexcept { return x.size(); }
};

inline Context canonical_context(std::span<const double> x_c, std::span<const double> y_c) {
  if (x_c.size() != y_c.size()) throw ShapeError("context: x_c and y_c differ in length");
  std::vector<std::size_t> order(x_c.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x_c[a] != x_c[b] ? x_c[a] < x_c[b] : y_c[a] < y_c[b];
  });
  Context c;
  for (auto i : order) {
    c.x.push_back(x_c[i]);
    c.y.push_back(y_c[i]);
  }
  return c;
}

inline Tensor column_of(std::span<const double> v) { return Tensor::column(v); }

/// Repeat a [1, d] row `m` times -> [m, d].
inline Tensor repeat_rows(const Tensor& row, std::size_t m) {
  return mul(Tensor::full(Shape{m, 1}, 1.0), row);
}

// ---------------------------------------------------------------------------
// DeepSet: r = rho(mean_i phi(x_i, y_i))

struct DeepSetRep {
  Tensor r;  // [1, rep_dim]
};

inline void init_deepset(const ModelSpec& s, Params& p, Rng& rng) {
  std::vector<std::size_t> phi{2}, rho{s.rep_dim};
  for (std::size_t i = 1; i < s.mlp_layers; ++i) {
    phi.push_back(s.width);
    rho.push_back(s.width);
  }
  phi.push_back(s.rep_dim);
  rho.push_back(s.rep_dim);
  init_mlp(p, "enc.phi", phi, rng);
  init_mlp(p, "enc.rho", rho, rng);
}

inline DeepSetRep encode_deepset(const ModelSpec& s, const Params& p, std::span<const double> x_c,
                                 std::span<const double> y_c) {
  const auto ctx = canonical_context(x_c, y_c);
  Tensor pooled;
  if (ctx.size() == 0) {
    pooled = Tensor::zeros(Shape{1, s.rep_dim});
  } else {
    const Tensor xy = concat({column_of(ctx.x), column_of(ctx.y)}, 1);
    pooled = mean(mlp(p, "enc.phi", xy, s.mlp_layers), 0, /*keepdim=*/true);
  }
  return {mlp(p, "enc.rho", pooled, s.mlp_layers)};
}

/// Per-target features [M, 1 + rep_dim]: (x_t, r).
inline Tensor query_deepset(const DeepSetRep& rep, std::span<const double> x_t) {
  return concat({column_of(x_t), repeat_rows(rep.r, x_t.size())}, 1);
}

// ---------------------------------------------------------------------------
// Attentive: multi-head scaled dot-product cross-attention from targets to
// context points. keys = MLP(x_c), values = MLP(x_c, y_c), queries = MLP(x_t).

struct AttentiveRep {
  Tensor keys;    // [heads, head_dim, N] (already transposed)
  Tensor values;  // [heads, N, head_dim]
  Tensor pooled;  // [1, attention_dim], mean of values; used when attention_global
  std::size_t n_context = 0;
};

inline void init_attentive(const ModelSpec& s, Params& p, Rng& rng) {
  auto dims = [&](std::size_t in) {
    std::vector<std::size_t> d{in};
    for (std::size_t i = 1; i < s.mlp_layers; ++i) d.push_back(s.width);
    d.push_back(s.attention_dim);
    return d;
  };
  init_mlp(p, "enc.key", dims(1), rng);
  init_mlp(p, "enc.value", dims(2), rng);
  init_mlp(p, "enc.query", dims(1), rng);
  init_linear(p, "enc.out", s.attention_dim, s.attention_dim, rng);
  std::vector<double> def(s.attention_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(s.attention_dim));
  for (auto& v : def) v = rng.uniform(-bound, bound);
  p["enc.default"] = Tensor(Shape{1, s.attention_dim}, std::move(def));
}

// [n, heads*dh] -> [heads, n, dh]
inline Tensor split_heads(const Tensor& t, std::size_t heads) {
  const std::size_t n = t.dim(0), dh = t.dim(1) / heads;
  return permute(reshape(t, Shape{n, heads, dh}), {1, 0, 2});
}

inline AttentiveRep encode_attentive(const ModelSpec& s, const Params& p,
                                     std::span<const double> x_c, std::span<const double> y_c) {
  const auto ctx = canonical_context(x_c, y_c);
  AttentiveRep rep;
  rep.n_context = ctx.size();
  if (ctx.size() == 0) return rep;
  const Tensor xc = column_of(ctx.x);
  const Tensor k = mlp(p, "enc.key", xc, s.mlp_layers);
  const Tensor v = mlp(p, "enc.value", concat({xc, column_of(ctx.y)}, 1), s.mlp_layers);
  rep.keys = transpose(split_heads(k, s.attention_heads));
  rep.values = split_heads(v, s.attention_heads);
  rep.pooled = mean(v, 0, true);
  return rep;
}

/// Per-target features [M, 1 + attention_dim (+ attention_dim if global)].
/// `temperature` divides the attention logits; 1 is the trained setting.
inline Tensor query_attentive(const ModelSpec& s, const Params& p, const AttentiveRep& rep,
                              std::span<const double> x_t, double temperature = 1.0) {
  const std::size_t m = x_t.size();
  const Tensor xt = column_of(x_t);
  Tensor attended;
  if (rep.n_context == 0) {
    attended = repeat_rows(param(p, "enc.default"), m);
  } else {
    const std::size_t heads = s.attention_heads, dh = s.attention_dim / heads;
    const Tensor q = split_heads(mlp(p, "enc.query", xt, s.mlp_layers), heads);
    const double scale_factor = 1.0 / (std::sqrt(static_cast<double>(dh)) * temperature);
    const Tensor weights = softmax(scale(matmul(q, rep.keys), scale_factor), 2);  // [H, M, N]
    const Tensor mixed = matmul(weights, rep.values);                             // [H, M, dh]
    attended = linear(p, "enc.out", reshape(permute(mixed, {1, 0, 2}), Shape{m, heads * dh}));
  }
  std::vector<Tensor> parts{xt, attended};
  if (s.attention_global) {
    parts.push_back(rep.n_context ? repeat_rows(rep.pooled, m)
                                  : Tensor::zeros(Shape{m, s.attention_dim}));
  }
  return concat(parts, 1);
}

/// Attention weights [heads, M, N] for inspection.
inline Tensor attention_weights(const ModelSpec& s, const Params& p, const AttentiveRep& rep,
                                std::span<const double> x_t, double temperature = 1.0) {
  const std::size_t heads = s.attention_heads, dh = s.attention_dim / heads;
  if (rep.n_context == 0) return Tensor::zeros(Shape{heads, x_t.size(), 0});
  const Tensor q = split_heads(mlp(p, "enc.query", column_of(x_t), s.mlp_layers), heads);
  const double scale_factor = 1.0 / (std::sqrt(static_cast<double>(dh)) * temperature);
  return softmax(scale(matmul(q, rep.keys), scale_factor), 2);
}

// ---------------------------------------------------------------------------
// Convolutional: SetConv onto a uniform grid, CNN, SetConv readout.
//
// The grid is a lattice x0 + k*h anchored at the smallest context input (0
// for an empty context), so translating context and targets together
// translates the lattice. It is extended to cover the requested query range
// plus a margin of (readout cutoff + CNN receptive radius + one step). The
// readout kernel is truncated at the cutoff, so a target's features only see
// CNN outputs whose receptive field lies inside the grid: predictions at a
// target do not depend on how far the grid extends beyond it.

struct ConvGrid {
  double x0 = 0.0;
  double h = 0.1;  // spacing
  long k_lo = 0;
  long k_hi = 0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(k_hi - k_lo + 1); }
  double position(long k) const noexcept { return x0 + static_cast<double>(k) * h; }
  std::vector<double> positions() const {
    std::vector<double> g;
    for (long k = k_lo; k <= k_hi; ++k) g.push_back(position(k));
    return g;
  }
};

struct ConvRep {
  ConvGrid grid;
  Tensor features;  // [channels, grid size]
  Tensor density;   // [grid size, 1], SetConv channel 0
  Tensor signal;    // [grid size, 1], normalized SetConv channel 1
};

inline double conv_base_spacing(const ModelSpec& s) { return 0.5 * s.conv_lengthscale; }
inline double conv_readout_cutoff(const ModelSpec& s) { return 5.0 * s.conv_lengthscale; }
inline double conv_receptive_radius(const ModelSpec& s) {
  return static_cast<double>(s.conv_layers * (s.conv_kernel - 1) / 2) * conv_base_spacing(s);
}
inline double conv_margin(const ModelSpec& s) {
  return conv_readout_cutoff(s) + conv_receptive_radius(s) + conv_base_spacing(s);
}

inline void init_conv_encoder(const ModelSpec& s, Params& p, Rng& rng) {
  p["enc.log_lengthscale"] = Tensor::full(Shape{1, 1}, std::log(s.conv_lengthscale));
  p["enc.readout_log_lengthscale"] = Tensor::full(Shape{1, 1}, std::log(s.conv_lengthscale));
  std::size_t in = 2;
  for (std::size_t l = 0; l < s.conv_layers; ++l) {
    init_conv(p, "enc.cnn." + std::to_string(l), in, s.conv_channels, s.conv_kernel, rng);
    in = s.conv_channels;
  }
}

inline ConvGrid make_conv_grid(const ModelSpec& s, std::span<const double> x_c_sorted,
                               double cover_lo, double cover_hi) {
  ConvGrid g;
  g.h = conv_base_spacing(s) / static_cast<double>(s.grid_density);
  g.x0 = x_c_sorted.empty() ? 0.0 : x_c_sorted.front();
  double lo = cover_lo, hi = cover_hi;
  if (!x_c_sorted.empty()) {
    lo = std::min(lo, x_c_sorted.front());
    hi = std::max(hi, x_c_sorted.back());
  }
  if (!(lo <= hi)) lo = hi = g.x0;  // nothing to cover
  const double margin = conv_margin(s);
  g.k_lo = static_cast<long>(std::floor((lo - margin - g.x0) / g.h));
  g.k_hi = static_cast<long>(std::ceil((hi + margin - g.x0) / g.h));
  return g;
}

/// EQ weights exp(-d^2 / (2 l^2)) with l = exp(log_l), as a differentiable
/// function of the [1,1] log-lengthscale parameter.
inline Tensor eq_weights(const Tensor& sqd, const Tensor& log_l) {
  return exp(mul(sqd, scale(exp(scale(log_l, -2.0)), -0.5)));
}

/// Encode the context onto a grid covering [cover_lo, cover_hi].
inline ConvRep encode_conv(const ModelSpec& s, const Params& p, std::span<const double> x_c,
                           std::span<const double> y_c, double cover_lo, double cover_hi) {
  const auto ctx = canonical_context(x_c, y_c);
  ConvRep rep;
  rep.grid = make_conv_grid(s, ctx.x, cover_lo, cover_hi);
  const auto pos = rep.grid.positions();
  const std::size_t g = pos.size();

  const Tensor psi =
      eq_weights(sqdist(column_of(pos), column_of(ctx.x)), param(p, "enc.log_lengthscale"));
  const Tensor ones_y = concat({Tensor::full(Shape{ctx.size(), 1}, 1.0), column_of(ctx.y)}, 1);
  const Tensor channels = matmul(psi, ones_y);  // [G, 2]
  rep.density = slice(channels, 1, 0, 1);
  const Tensor raw_signal = slice(channels, 1, 1, 2);

  std::vector<double> mask(g), fill(g);
  for (std::size_t i = 0; i < g; ++i) {
    mask[i] = rep.density[i] > s.density_eps ? 1.0 : 0.0;
    fill[i] = 1.0 - mask[i];
  }
  const Tensor mask_t(Shape{g, 1}, mask), fill_t(Shape{g, 1}, fill);
  rep.signal = mul(div(raw_signal, add(rep.density, fill_t)), mask_t);

  Tensor h = transpose(concat({rep.density, rep.signal}, 1));  // [2, G]
  for (std::size_t l = 0; l < s.conv_layers; ++l) {
    h = conv(p, "enc.cnn." + std::to_string(l), h, s.grid_density);
    if (l + 1 < s.conv_layers) h = relu(h);
  }
  rep.features = h;
  return rep;
}

/// Readout weights [M, G]: truncated EQ kernel times the grid spacing.
inline Tensor conv_readout_weights(const ModelSpec& s, const Params& p, const ConvRep& rep,
                                   std::span<const double> x_t) {
  const auto pos = rep.grid.positions();
  const double cutoff = conv_readout_cutoff(s);
  std::vector<double> support(x_t.size() * pos.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (x_t[i] < rep.grid.position(rep.grid.k_lo) + cutoff + conv_receptive_radius(s) ||
        x_t[i] > rep.grid.position(rep.grid.k_hi) - cutoff - conv_receptive_radius(s)) {
      throw std::out_of_range("query_conv: target outside the encoded grid range");
    }
    for (std::size_t k = 0; k < pos.size(); ++k)
      support[i * pos.size() + k] = std::abs(x_t[i] - pos[k]) <= cutoff ? rep.grid.h : 0.0;
  }
  const Tensor w = eq_weights(sqdist(column_of(x_t), column_of(pos)),
                              param(p, "enc.readout_log_lengthscale"));
  return mul(w, Tensor(Shape{x_t.size(), pos.size()}, std::move(support)));
}

/// Per-target features [M, channels].
inline Tensor query_conv(const ModelSpec& s, const Params& p, const ConvRep& rep,
                         std::span<const double> x_t) {
  return matmul(conv_readout_weights(s, p, rep, x_t), transpose(rep.features));
}

}  // namespace gnp
