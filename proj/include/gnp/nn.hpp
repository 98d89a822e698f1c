#pragma once

// Named parameters and the small set of layers the models are built from.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnp/ops.hpp"
#include "gnp/rng.hpp"
#include "gnp/tensor.hpp"

namespace gnp {

/// Name -> tensor, iterated in lexicographic name order.
using Params = std::map<std::string, Tensor>;

inline const Tensor& param(const Params& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

/// Weight [in, out] ~ U(-s, s) with s = gain / sqrt(in); bias [out] = 0.
inline void init_linear(Params& p, const std::string& name, std::size_t in, std::size_t out,
                        Rng& rng, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  p[name + ".w"] = Tensor(Shape{in, out}, std::move(w));
  p[name + ".b"] = Tensor::zeros(Shape{out});
}

inline Tensor linear(const Params& p, const std::string& name, const Tensor& x) {
  return add(matmul(x, param(p, name + ".w")), param(p, name + ".b"));
}

/// Layer widths dims[0] -> dims[1] -> ... ; parameters "<name>.<i>.{w,b}".
/// `last_gain` scales the init of the output layer.
inline void init_mlp(Params& p, const std::string& name, const std::vector<std::size_t>& dims,
                     Rng& rng, double last_gain = 1.0) {
  if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least two widths");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    init_linear(p, name + "." + std::to_string(i), dims[i], dims[i + 1], rng,
                i + 2 == dims.size() ? last_gain : 1.0);
  }
}

/// ReLU between layers, none after the last.
inline Tensor mlp(const Params& p, const std::string& name, Tensor x, std::size_t layers) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = linear(p, name + "." + std::to_string(i), x);
    if (i + 1 < layers) x = relu(x);
  }
  return x;
}

/// Conv weight [out, in, k] ~ U(-s, s) with s = 1/sqrt(in*k); bias [out, 1] = 0.
inline void init_conv(Params& p, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t ksize, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * ksize));
  std::vector<double> w(out * in * ksize);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  p[name + ".w"] = Tensor(Shape{out, in, ksize}, std::move(w));
  p[name + ".b"] = Tensor::zeros(Shape{out, 1});
}

inline Tensor conv(const Params& p, const std::string& name, const Tensor& x,
                   std::size_t dilation) {
  return add(conv1d(x, param(p, name + ".w"), dilation), param(p, name + ".b"));
}

/// Inverse of softplus, for initializing positive quantities.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace gnp
