#pragma once

// Differentiable tensor operations. Every op computes its result eagerly and,
// when an operand is tape-attached, records a backward rule that accumulates
// into the operands' gradient buffers.
//
// Elementwise binary ops broadcast NumPy-style: shapes are aligned at the
// trailing dimension and size-1 dimensions expand.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "gnp/linalg.hpp"
#include "gnp/tensor.hpp"

namespace gnp {

namespace detail {

inline constexpr std::size_t kNone = Tensor::kNoNode;

inline std::size_t id_of(const Tensor& t) { return t.attached() ? t.node() : kNone; }

inline std::shared_ptr<Buffer> alloc(std::size_t n, double fill = 0.0) {
  return std::make_shared<Buffer>(n, fill);
}

inline Tensor record(Shape shape, std::shared_ptr<Buffer> data,
                     const std::vector<const Tensor*>& inputs, const char* op, BackwardFn fn) {
  return detail_record(std::move(shape), std::move(data), inputs, op, std::move(fn));
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;  // aligned to out dims, 0 where broadcast
  std::vector<std::size_t> stride_b;
  bool same = false;
};

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

inline Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t nd = std::max(a.size(), b.size());
  bc.out.assign(nd, 1);
  bc.stride_a.assign(nd, 0);
  bc.stride_b.assign(nd, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t d = 0; d < nd; ++d) {
    const std::size_t ia = d + a.size();  // index into a, offset by nd
    const std::size_t ib = d + b.size();
    const std::size_t da = ia >= nd ? a[ia - nd] : 1;
    const std::size_t db = ib >= nd ? b[ib - nd] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    bc.out[d] = std::max(da, db);
    if (da == 0 || db == 0) bc.out[d] = 0;
    if (ia >= nd && da != 1) bc.stride_a[d] = sa[ia - nd];
    if (ib >= nd && db != 1) bc.stride_b[d] = sb[ib - nd];
  }
  return bc;
}

// Calls fn(out_index, a_index, b_index) for every output element in order.
template <class Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const std::size_t n = shape_numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  if (n == 0) return;
  const std::size_t nd = bc.out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * bc.out[d];
      ib -= bc.stride_b[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

// f(x, y) with partials da(x, y), db(x, y).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  auto bc = make_broadcast(a.shape(), b.shape(), op);
  auto out = alloc(shape_numel(bc.out));
  const double* x = a.data().data();
  const double* y = b.data().data();
  double* o = out->data();
  for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = f(x[ia], y[ib]); });
  const auto ida = id_of(a), idb = id_of(b);
  auto xa = a.buffer(), yb = b.buffer();
  return record(bc.out, out, {&a, &b}, op,
                [=](std::span<const double> g, GradBuffers& grads) {
                  const double* x = xa->data();
                  const double* y = yb->data();
                  if (ida != kNone) {
                    auto ga = grads.at(ida);
                    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                      ga[ia] += g[i] * da(x[ia], y[ib]);
                    });
                  }
                  if (idb != kNone) {
                    auto gb = grads.at(idb);
                    for_each_broadcast(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                      gb[ib] += g[i] * db(x[ia], y[ib]);
                    });
                  }
                });
}

// y = f(x); dy/dx = df(x, y).
template <class F, class DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
  const std::size_t n = a.numel();
  auto out = alloc(n);
  const double* x = a.data().data();
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = f(x[i]);
  const auto ida = id_of(a);
  auto xa = a.buffer();
  std::shared_ptr<const Buffer> yo = out;
  return record(a.shape(), out, {&a}, op, [=](std::span<const double> g, GradBuffers& grads) {
    if (ida == kNone) return;
    auto ga = grads.at(ida);
    const double* x = xa->data();
    const double* y = yo->data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

inline double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(
      a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// ln(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
  return detail::unary(a, "softplus", detail::softplus_value,
                       [](double x, double) { return detail::sigmoid_value(x); });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, "sigmoid", detail::sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a, std::size_t axis, bool keepdim = false) {
  const auto sp = detail::split_axis(a.shape(), axis, "sum");
  Shape shape = a.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  auto out = detail::alloc(sp.outer * sp.inner);
  const double* x = a.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.len; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        (*out)[o * sp.inner + i] += x[(o * sp.len + k) * sp.inner + i];
  const auto ida = detail::id_of(a);
  return detail::record(shape, out, {&a}, "sum",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (ida == detail::kNone) return;
                          auto ga = grads.at(ida);
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t k = 0; k < sp.len; ++k)
                              for (std::size_t i = 0; i < sp.inner; ++i)
                                ga[(o * sp.len + k) * sp.inner + i] += g[o * sp.inner + i];
                        });
}

inline Tensor mean(const Tensor& a, std::size_t axis, bool keepdim = false) {
  const auto len = a.shape().at(axis);
  if (len == 0) throw ShapeError("mean: empty axis");
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(len));
}

/// Sum of every element, as a scalar.
inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto out = detail::alloc(1, s);
  const auto ida = detail::id_of(a);
  const auto n = a.numel();
  return detail::record(Shape{}, out, {&a}, "sum_all",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (ida == detail::kNone) return;
                          auto ga = grads.at(ida);
                          for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  const auto ida = detail::id_of(a);
  const auto n = a.numel();
  return detail_record(std::move(shape), a.buffer(), {&a}, "reshape",
                       [=](std::span<const double> g, detail::GradBuffers& grads) {
                         if (ida == detail::kNone) return;
                         auto ga = grads.at(ida);
                         for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                       });
}

/// General axis permutation: out.shape[i] = a.shape[perm[i]].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const auto& s = a.shape();
  if (perm.size() != s.size()) throw ShapeError("permute: rank mismatch for " + shape_str(s));
  Shape out_shape(s.size());
  std::vector<bool> seen(s.size(), false);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= s.size() || seen[perm[i]]) throw ShapeError("permute: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = s[perm[i]];
  }
  const auto in_strides = detail::row_major_strides(s);
  // Map each output position to its input offset.
  const std::size_t n = a.numel();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  {
    detail::Broadcast walk;
    walk.out = out_shape;
    walk.stride_a.resize(s.size());
    walk.stride_b.assign(s.size(), 0);
    for (std::size_t i = 0; i < perm.size(); ++i) walk.stride_a[i] = in_strides[perm[i]];
    detail::for_each_broadcast(walk, [&](std::size_t o, std::size_t ia, std::size_t) { (*index)[o] = ia; });
  }
  auto out = detail::alloc(n);
  const double* x = a.data().data();
  for (std::size_t o = 0; o < n; ++o) (*out)[o] = x[(*index)[o]];
  const auto ida = detail::id_of(a);
  return detail::record(out_shape, out, {&a}, "permute",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (ida == detail::kNone) return;
                          auto ga = grads.at(ida);
                          for (std::size_t o = 0; o < n; ++o) ga[(*index)[o]] += g[o];
                        });
}

/// Swap the last two axes (rank 2 or higher).
inline Tensor transpose(const Tensor& a) {
  const auto nd = a.ndim();
  if (nd < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> perm(nd);
  for (std::size_t i = 0; i < nd; ++i) perm[i] = i;
  std::swap(perm[nd - 1], perm[nd - 2]);
  return permute(a, perm);
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
    }
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(shape));
    }
    total += p.shape()[axis];
  }
  shape[axis] = total;
  const auto sp = detail::split_axis(shape, axis, "concat");
  auto out = detail::alloc(shape_numel(shape));
  std::vector<std::size_t> lens, ids;
  std::vector<const Tensor*> inputs;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const double* x = p.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(x + o * len * sp.inner, len * sp.inner,
                  out->data() + (o * sp.len + offset) * sp.inner);
    offset += len;
    lens.push_back(len);
    ids.push_back(detail::id_of(p));
    inputs.push_back(&p);
  }
  return detail::record(shape, out, inputs, "concat",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < lens.size(); ++k) {
                            if (ids[k] != detail::kNone) {
                              auto gp = grads.at(ids[k]);
                              for (std::size_t o = 0; o < sp.outer; ++o)
                                for (std::size_t i = 0; i < lens[k] * sp.inner; ++i)
                                  gp[o * lens[k] * sp.inner + i] +=
                                      g[(o * sp.len + off) * sp.inner + i];
                            }
                            off += lens[k];
                          }
                        });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto sp = detail::split_axis(a.shape(), axis, "slice");
  if (begin > end || end > sp.len) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  const std::size_t len = end - begin;
  shape[axis] = len;
  auto out = detail::alloc(shape_numel(shape));
  const double* x = a.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x + (o * sp.len + begin) * sp.inner, len * sp.inner,
                out->data() + o * len * sp.inner);
  const auto ida = detail::id_of(a);
  return detail::record(shape, out, {&a}, "slice",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (ida == detail::kNone) return;
                          auto ga = grads.at(ida);
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t i = 0; i < len * sp.inner; ++i)
                              ga[(o * sp.len + begin) * sp.inner + i] += g[o * len * sp.inner + i];
                        });
}

// ---------------------------------------------------------------------------
// Products

/// [n,k] x [k,m] -> [n,m], or batched [b,n,k] x [b,k,m] -> [b,n,m].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool batched = sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0];
  const bool plain = sa.size() == 2 && sb.size() == 2;
  if (!(batched || plain) || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t batch = batched ? sa[0] : 1;
  const std::size_t n = sa[sa.size() - 2], k = sa.back(), m = sb.back();
  Shape shape = batched ? Shape{batch, n, m} : Shape{n, m};
  auto out = detail::alloc(batch * n * m);
  for (std::size_t t = 0; t < batch; ++t)
    linalg::gemm_acc(a.data().data() + t * n * k, b.data().data() + t * k * m,
                     out->data() + t * n * m, n, k, m);
  const auto ida = detail::id_of(a), idb = detail::id_of(b);
  auto xa = a.buffer(), xb = b.buffer();
  return detail::record(shape, out, {&a, &b}, "matmul",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          for (std::size_t t = 0; t < batch; ++t) {
                            const double* gt = g.data() + t * n * m;
                            if (ida != detail::kNone) {
                              linalg::gemm_nt_acc(gt, xb->data() + t * k * m,
                                                  grads.at(ida).data() + t * n * k, n, m, k);
                            }
                            if (idb != detail::kNone) {
                              linalg::gemm_tn_acc(xa->data() + t * n * k, gt,
                                                  grads.at(idb).data() + t * k * m, n, k, m);
                            }
                          }
                        });
}

/// Softmax along `axis`, max-shifted.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "softmax");
  auto out = detail::alloc(a.numel());
  const double* x = a.data().data();
  double* y = out->data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.len; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        const double e = std::exp(x[base + k * sp.inner] - mx);
        y[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.len; ++k) y[base + k * sp.inner] /= z;
    }
  const auto ida = detail::id_of(a);
  std::shared_ptr<const detail::Buffer> yo = out;
  return detail::record(a.shape(), out, {&a}, "softmax",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (ida == detail::kNone) return;
                          auto ga = grads.at(ida);
                          const double* y = yo->data();
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t i = 0; i < sp.inner; ++i) {
                              const std::size_t base = o * sp.len * sp.inner + i;
                              double dot = 0.0;
                              for (std::size_t k = 0; k < sp.len; ++k)
                                dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                              for (std::size_t k = 0; k < sp.len; ++k) {
                                const std::size_t j = base + k * sp.inner;
                                ga[j] += y[j] * (g[j] - dot);
                              }
                            }
                        });
}

/// 1-D convolution, stride 1, symmetric zero padding that preserves length.
/// x: [c_in, L], w: [c_out, c_in, K] with K odd -> [c_out, L]. Tap t reads
/// x[j + (t - (K-1)/2) * dilation].
inline Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t dilation = 1) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sx.size() != 2 || sw.size() != 3 || sw[1] != sx[0] || sw[2] % 2 == 0 || dilation == 0) {
    throw ShapeError("conv1d: incompatible input " + shape_str(sx) + " and weight " +
                     shape_str(sw));
  }
  const std::size_t cin = sx[0], len = sx[1], cout = sw[0], ksz = sw[2];
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>((ksz - 1) / 2);
  const std::size_t rows = cin * ksz;
  // im2col: cols[(c*K + t), j]
  auto cols = std::make_shared<detail::Buffer>(rows * len, 0.0);
  const double* xd = x.data().data();
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t t = 0; t < ksz; ++t) {
      const std::ptrdiff_t shift = (static_cast<std::ptrdiff_t>(t) - half) *
                                   static_cast<std::ptrdiff_t>(dilation);
      double* crow = cols->data() + (c * ksz + t) * len;
      for (std::size_t j = 0; j < len; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) + shift;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) crow[j] = xd[c * len + src];
      }
    }
  auto out = detail::alloc(cout * len);
  linalg::gemm_acc(w.data().data(), cols->data(), out->data(), cout, rows, len);
  const auto idx = detail::id_of(x), idw = detail::id_of(w);
  auto wb = w.buffer();
  std::shared_ptr<const detail::Buffer> colsc = cols;
  return detail::record(Shape{cout, len}, out, {&x, &w}, "conv1d",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (idw != detail::kNone) {
                            linalg::gemm_nt_acc(g.data(), colsc->data(), grads.at(idw).data(), cout,
                                                len, rows);
                          }
                          if (idx != detail::kNone) {
                            std::vector<double> dcols(rows * len, 0.0);
                            linalg::gemm_tn_acc(wb->data(), g.data(), dcols.data(), cout, rows, len);
                            auto gx = grads.at(idx);
                            for (std::size_t c = 0; c < cin; ++c)
                              for (std::size_t t = 0; t < ksz; ++t) {
                                const std::ptrdiff_t shift =
                                    (static_cast<std::ptrdiff_t>(t) - half) *
                                    static_cast<std::ptrdiff_t>(dilation);
                                const double* drow = dcols.data() + (c * ksz + t) * len;
                                for (std::size_t j = 0; j < len; ++j) {
                                  const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) + shift;
                                  if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
                                    gx[c * len + src] += drow[j];
                                }
                              }
                          }
                        });
}

/// Pairwise squared distances between rows: a [n,d], b [m,d] -> [n,m],
/// via |a|^2 + |b|^2 - 2 a.b clamped at 0.
inline Tensor sqdist(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1]) {
    throw ShapeError("sqdist: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t n = sa[0], m = sb[0], d = sa[1];
  const double* x = a.data().data();
  const double* y = b.data().data();
  auto sq = [d](const double* u, const double* v) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += u[k] * v[k];
    return s;
  };
  std::vector<double> na(n), nb(m);
  for (std::size_t i = 0; i < n; ++i) na[i] = sq(x + i * d, x + i * d);
  for (std::size_t j = 0; j < m; ++j) nb[j] = sq(y + j * d, y + j * d);
  auto out = detail::alloc(n * m);
  auto active = std::make_shared<std::vector<char>>(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double raw = na[i] + nb[j] - 2.0 * sq(x + i * d, y + j * d);
      (*active)[i * m + j] = raw >= 0.0;
      (*out)[i * m + j] = raw >= 0.0 ? raw : 0.0;
    }
  const auto ida = detail::id_of(a), idb = detail::id_of(b);
  auto xa = a.buffer(), xb = b.buffer();
  return detail::record(Shape{n, m}, out, {&a, &b}, "sqdist",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          const double* x = xa->data();
                          const double* y = xb->data();
                          std::span<double> ga, gb;
                          if (ida != detail::kNone) ga = grads.at(ida);
                          if (idb != detail::kNone) gb = grads.at(idb);
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) {
                              if (!(*active)[i * m + j]) continue;
                              const double gij = 2.0 * g[i * m + j];
                              if (gij == 0.0) continue;
                              for (std::size_t k = 0; k < d; ++k) {
                                const double diff = x[i * d + k] - y[j * d + k];
                                if (!ga.empty()) ga[i * d + k] += gij * diff;
                                if (!gb.empty()) gb[j * d + k] -= gij * diff;
                              }
                            }
                        });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Main diagonal of a square matrix, as a vector.
inline Tensor diagonal(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() != 2 || s[0] != s[1]) throw ShapeError("diagonal: not square " + shape_str(s));
  const std::size_t n = s[0];
  auto out = detail::alloc(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = a.data()[i * n + i];
  const auto ida = detail::id_of(a);
  return detail::record(Shape{n}, out, {&a}, "diagonal",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (ida == detail::kNone) return;
                          auto ga = grads.at(ida);
                          for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += g[i];
                        });
}

/// Lower Cholesky factor of a symmetric positive-definite matrix, with the
/// jitter retry policy of linalg::cholesky_jittered. Reads the lower triangle.
/// The gradient is returned symmetrized.
inline Tensor cholesky(const Tensor& a) {
  const auto& s = a.shape();
  if (s.size() != 2 || s[0] != s[1]) throw ShapeError("cholesky: not square " + shape_str(s));
  const std::size_t n = s[0];
  auto fac = linalg::cholesky_jittered(a.data(), n);
  auto out = std::make_shared<detail::Buffer>(std::move(fac.factor));
  std::shared_ptr<const detail::Buffer> lo = out;
  const auto ida = detail::id_of(a);
  return detail::record(s, out, {&a}, "cholesky",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          if (ida == detail::kNone) return;
                          const double* l = lo->data();
                          // P = tril(L^T Lbar) with halved diagonal
                          std::vector<double> p(n * n, 0.0);
                          linalg::gemm_tn_acc(l, g.data(), p.data(), n, n, n);
                          for (std::size_t i = 0; i < n; ++i) {
                            p[i * n + i] *= 0.5;
                            for (std::size_t j = i + 1; j < n; ++j) p[i * n + j] = 0.0;
                          }
                          // S = L^-T P L^-1
                          auto z = linalg::transpose(p.data(), n, n);
                          linalg::solve_lower_transposed_inplace(l, z.data(), n, n);
                          auto st = linalg::transpose(z.data(), n, n);
                          linalg::solve_lower_transposed_inplace(l, st.data(), n, n);
                          auto ga = grads.at(ida);
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < n; ++j)
                              ga[i * n + j] += 0.5 * (st[i * n + j] + st[j * n + i]);
                        });
}

/// X = L^-1 B for lower-triangular L [n,n] and B [n,m] (or [n]).
inline Tensor solve_lower(const Tensor& l, const Tensor& b) {
  const auto& sl = l.shape();
  const auto& sb = b.shape();
  if (sl.size() != 2 || sl[0] != sl[1] || sb.empty() || sb.size() > 2 || sb[0] != sl[0]) {
    throw ShapeError("solve_lower: incompatible shapes " + shape_str(sl) + " and " +
                     shape_str(sb));
  }
  const std::size_t n = sl[0], m = sb.size() == 2 ? sb[1] : 1;
  auto out = std::make_shared<detail::Buffer>(b.data().begin(), b.data().end());
  linalg::solve_lower_inplace(l.data().data(), out->data(), n, m);
  const auto idl = detail::id_of(l), idb = detail::id_of(b);
  auto lb = l.buffer();
  std::shared_ptr<const detail::Buffer> xo = out;
  return detail::record(sb, out, {&l, &b}, "solve_lower",
                        [=](std::span<const double> g, detail::GradBuffers& grads) {
                          // Bbar = L^-T Xbar ; Lbar = -tril(Bbar X^T)
                          std::vector<double> bbar(g.begin(), g.end());
                          linalg::solve_lower_transposed_inplace(lb->data(), bbar.data(), n, m);
                          if (idb != detail::kNone) {
                            auto gb = grads.at(idb);
                            for (std::size_t i = 0; i < n * m; ++i) gb[i] += bbar[i];
                          }
                          if (idl != detail::kNone) {
                            auto gl = grads.at(idl);
                            const double* x = xo->data();
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j <= i; ++j) {
                                double s = 0.0;
                                for (std::size_t c = 0; c < m; ++c) s += bbar[i * m + c] * x[j * m + c];
                                gl[i * n + j] -= s;
                              }
                          }
                        });
}

}  // namespace gnp
