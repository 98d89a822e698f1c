#pragma once

// Dense row-major f64 tensors with an optional define-by-run gradient tape.
//
// A Tensor is an immutable value: shape plus a shared data buffer. When it was
// produced by an operation whose operands were attached to a Tape, it carries
// the tape handle and its node id, and the operation's backward rule is
// recorded on that tape. Tape::backward(root) replays the rules in reverse
// creation order, which is a valid reverse topological order because every
// node's inputs are created before it.
//
// A Tape is single-threaded. Detached tensors are immutable and can be shared
// across threads freely.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gnp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or a factorization failed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cholesky failed on a pivot even after the jitter retries.
class CholeskyError : public NumericError {
 public:
  CholeskyError(std::size_t pivot, double value)
      : NumericError("cholesky: non-positive pivot " + std::to_string(value) +
                     " at index " + std::to_string(pivot)),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

namespace detail {

using Buffer = std::vector<double>;
using BufferPtr = std::shared_ptr<const Buffer>;

class GradBuffers;

using BackwardFn = std::function<void(std::span<const double>, GradBuffers&)>;

struct Node {
  Shape shape;
  BackwardFn backward;  // empty for leaves
};

struct TapeState {
  std::vector<Node> nodes;
};

// Gradient accumulators indexed by node id, allocated on first touch.
class GradBuffers {
 public:
  explicit GradBuffers(const TapeState& state) : state_(&state), grads_(state.nodes.size()) {}

  std::span<double> at(std::size_t id) {
    auto& g = grads_[id];
    if (g.empty()) g.assign(shape_numel(state_->nodes[id].shape), 0.0);
    return g;
  }
  bool has(std::size_t id) const { return !grads_[id].empty(); }
  std::vector<Buffer>& raw() { return grads_; }

 private:
  const TapeState* state_;
  std::vector<Buffer> grads_;
};

}  // namespace detail

class Tape;
class Gradients;

class Tensor {
 public:
  static constexpr std::size_t kNoNode = static_cast<std::size_t>(-1);

  /// Scalar zero.
  Tensor() : Tensor(Shape{}, detail::Buffer{0.0}) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<const detail::Buffer>(std::move(data))) {
    if (shape_numel(shape_) != data_->size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_numel(shape_)) + " values, got " +
                       std::to_string(data_->size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor full(Shape shape, double v) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    const std::size_t n = rows.size();
    const std::size_t m = n ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != m) throw ShapeError("tensor: ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{n, m}, std::move(data));
  }
  static Tensor column(std::span<const double> v) {
    return Tensor(Shape{v.size(), 1}, std::vector<double>(v.begin(), v.end()));
  }
  static Tensor eye(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor(Shape{n, n}, std::move(d));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_->size(); }

  std::span<const double> data() const noexcept { return *data_; }
  const detail::BufferPtr& buffer() const noexcept { return data_; }
  std::vector<double> to_vector() const { return *data_; }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i, std::size_t j) const {
    return (*data_)[i * shape_.at(1) + j];
  }
  double item() const {
    if (numel() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool attached() const noexcept { return tape_ != nullptr; }
  std::size_t node() const noexcept { return node_; }

  /// Same values, no tape participation.
  Tensor detach() const { return Tensor(shape_, data_); }

 private:
  friend class Tape;
  friend class Gradients;
  friend Tensor detail_record(Shape, detail::BufferPtr, const std::vector<const Tensor*>&,
                              const char*, detail::BackwardFn);
  friend std::shared_ptr<detail::TapeState> detail_tape_of(const std::vector<const Tensor*>&);

  Tensor(Shape shape, detail::BufferPtr data) : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  detail::BufferPtr data_;
  std::shared_ptr<detail::TapeState> tape_;
  std::size_t node_ = kNoNode;
};

/// Gradient map produced by Tape::backward, keyed by node.
class Gradients {
 public:
  Gradients() = default;

  /// Gradient of the root with respect to `t`; zeros when `t` did not
  /// influence the root or is not on this tape.
  Tensor of(const Tensor& t) const {
    if (t.tape_ != state_ || t.node_ == Tensor::kNoNode || t.node_ >= grads_.size() ||
        grads_[t.node_].empty()) {
      return Tensor::zeros(t.shape());
    }
    return Tensor(t.shape(), grads_[t.node_]);
  }
  bool contains(const Tensor& t) const {
    return t.tape_ == state_ && t.node_ < grads_.size() && !grads_[t.node_].empty();
  }

 private:
  friend class Tape;
  std::shared_ptr<detail::TapeState> state_;
  std::vector<detail::Buffer> grads_;
};

class Tape {
 public:
  Tape() : state_(std::make_shared<detail::TapeState>()) {}

  /// Leaf node sharing `t`'s data. Gradients flow to it.
  Tensor watch(const Tensor& t) {
    Tensor out(t.shape(), t.buffer());
    out.tape_ = state_;
    out.node_ = state_->nodes.size();
    state_->nodes.push_back(detail::Node{t.shape(), {}});
    return out;
  }

  std::size_t size() const noexcept { return state_->nodes.size(); }

  Gradients backward(const Tensor& root) const {
    if (root.numel() != 1) {
      throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
    }
    if (root.tape_ != state_) throw std::invalid_argument("backward: root is not on this tape");
    detail::GradBuffers grads(*state_);
    grads.at(root.node_)[0] = 1.0;
    for (std::size_t i = root.node_ + 1; i-- > 0;) {
      const auto& node = state_->nodes[i];
      if (!node.backward || !grads.has(i)) continue;
      // Copy: the rule may allocate other buffers in the same vector.
      const detail::Buffer g = grads.raw()[i];
      node.backward(g, grads);
    }
    Gradients out;
    out.state_ = state_;
    out.grads_ = std::move(grads.raw());
    return out;
  }

 private:
  std::shared_ptr<detail::TapeState> state_;
};

inline std::shared_ptr<detail::TapeState> detail_tape_of(
    const std::vector<const Tensor*>& inputs) {
  std::shared_ptr<detail::TapeState> tape;
  for (const Tensor* t : inputs) {
    if (!t->tape_) continue;
    if (tape && tape != t->tape_) {
      throw std::invalid_argument("operands are attached to different tapes");
    }
    tape = t->tape_;
  }
  return tape;
}

/// Wrap a freshly computed buffer as an op result, recording `backward` when
/// any input is tape-attached. Rejects non-finite results.
inline Tensor detail_record(Shape shape, detail::BufferPtr data,
                            const std::vector<const Tensor*>& inputs, const char* op,
                            detail::BackwardFn backward) {
  for (double v : *data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite result");
  }
  if (shape_numel(shape) != data->size()) {
    throw ShapeError(std::string(op) + ": internal shape/data mismatch");
  }
  Tensor out(std::move(shape), std::move(data));
  auto tape = detail_tape_of(inputs);
  if (tape) {
    out.tape_ = tape;
    out.node_ = tape->nodes.size();
    tape->nodes.push_back(detail::Node{out.shape_, std::move(backward)});
  }
  return out;
}

}  // namespace gnp
