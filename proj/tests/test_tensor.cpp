#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace gnp;
using namespace gnp::testing;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  const Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at(1, 2), 6.0);
}

TEST(Tensor, MatmulIdentity) {
  const auto r = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  EXPECT_EQ(r.to_vector(), (std::vector<double>{3, 4}));
}

TEST(Tensor, SoftplusAtZero) {
  EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), 0.693147, 1e-6);
  EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(Tensor::scalar(800.0)).item(), 800.0, 1e-12);
}

TEST(Tensor, SumOverAxis) {
  const auto r = sum(Tensor::matrix({{1, 2}, {3, 4}}), 0);
  EXPECT_EQ(r.shape(), (Shape{2}));
  EXPECT_EQ(r.to_vector(), (std::vector<double>{4, 6}));
  EXPECT_EQ(sum(Tensor::matrix({{1, 2}, {3, 4}}), 1, true).shape(), (Shape{2, 1}));
}

TEST(Tensor, ShapeErrorNamesBothShapes) {
  try {
    matmul(Tensor::zeros(Shape{2, 3}), Tensor::zeros(Shape{2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
  }
  try {
    add(Tensor::zeros(Shape{2, 3}), Tensor::zeros(Shape{4}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Tensor, NonFiniteResultIsAnError) {
  EXPECT_THROW(log(Tensor::scalar(0.0)), NumericError);
  EXPECT_THROW(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), NumericError);
  EXPECT_THROW(exp(Tensor::scalar(1000.0)), NumericError);
}

TEST(Tensor, BroadcastShapeAssociative) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Shape a, b, c;
    const auto nd = static_cast<std::size_t>(rng.uniform_int(1, 3));
    for (std::size_t i = 0; i < nd; ++i) {
      const auto d = static_cast<std::size_t>(rng.uniform_int(2, 3));
      a.push_back(rng.uniform() < 0.5 ? 1 : d);
      b.push_back(rng.uniform() < 0.5 ? 1 : d);
      c.push_back(rng.uniform() < 0.5 ? 1 : d);
    }
    const auto ta = Tensor::zeros(a), tb = Tensor::zeros(b), tc = Tensor::zeros(c);
    EXPECT_EQ(add(ta, add(tb, tc)).shape(), add(add(ta, tb), tc).shape());
    EXPECT_EQ(mul(ta, mul(tb, tc)).shape(), mul(mul(ta, tb), tc).shape());
  }
}

TEST(Tape, SquareDerivative) {
  Tape tape;
  const auto x = tape.watch(Tensor::scalar(3.0));
  const auto g = tape.backward(square(x));
  EXPECT_DOUBLE_EQ(g.of(x).item(), 6.0);
}

TEST(Tape, SoftplusDerivativeAtZero) {
  Tape tape;
  const auto x = tape.watch(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(tape.backward(softplus(x)).of(x).item(), 0.5);
}

TEST(Tape, RootGradientIsOne) {
  Tape tape;
  const auto x = tape.watch(Tensor::scalar(2.0));
  const auto y = mul(x, x);
  EXPECT_DOUBLE_EQ(tape.backward(y).of(y).item(), 1.0);
}

TEST(Tape, NonScalarRootIsAnError) {
  Tape tape;
  const auto x = tape.watch(Tensor::zeros(Shape{3}));
  EXPECT_THROW(tape.backward(exp(x)), ShapeError);
}

TEST(Tape, ReusedInputAccumulates) {
  // y = x * x + x: dy/dx = 2x + 1
  Tape tape;
  const auto x = tape.watch(Tensor::scalar(1.5));
  EXPECT_DOUBLE_EQ(tape.backward(add(mul(x, x), x)).of(x).item(), 4.0);
}

TEST(Tape, NodesAreTopologicallyOrdered) {
  Tape tape;
  const auto a = tape.watch(Tensor::scalar(1.0));
  const auto b = exp(a);
  const auto c = mul(b, a);
  EXPECT_LT(a.node(), b.node());
  EXPECT_LT(b.node(), c.node());
  EXPECT_EQ(tape.size(), 3u);
}

TEST(Tape, UnattachedOpsRecordNothing) {
  const auto t = exp(Tensor::scalar(1.0));
  EXPECT_FALSE(t.attached());
}

TEST(Tape, MixingTapesIsAnError) {
  Tape t1, t2;
  const auto a = t1.watch(Tensor::scalar(1.0));
  const auto b = t2.watch(Tensor::scalar(1.0));
  EXPECT_THROW(add(a, b), std::invalid_argument);
}

TEST(Ops, Conv1dMatchesDirectLoop) {
  Rng rng(4);
  for (std::size_t dil : {1u, 2u, 3u}) {
    const auto x = random_tensor(Shape{2, 7}, rng);
    const auto w = random_tensor(Shape{3, 2, 5}, rng);
    const auto y = conv1d(x, w, dil);
    for (std::size_t o = 0; o < 3; ++o)
      for (long j = 0; j < 7; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 2; ++c)
          for (long t = 0; t < 5; ++t) {
            const long src = j + (t - 2) * static_cast<long>(dil);
            if (src >= 0 && src < 7) acc += w[(o * 2 + c) * 5 + t] * x[c * 7 + src];
          }
        EXPECT_NEAR(y[o * 7 + j], acc, 1e-14);
      }
  }
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(2);
  const auto s = softmax(random_tensor(Shape{4, 6}, rng, -50, 50), 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double t = 0.0;
    for (std::size_t j = 0; j < 6; ++j) t += s[i * 6 + j];
    EXPECT_NEAR(t, 1.0, 1e-14);
  }
}

TEST(Ops, SqdistMatchesDirectAndClampsAtZero) {
  Rng rng(8);
  const auto a = random_tensor(Shape{5, 3}, rng), b = random_tensor(Shape{4, 3}, rng);
  const auto d = sqdist(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += std::pow(a[i * 3 + k] - b[j * 3 + k], 2);
      EXPECT_NEAR(d[i * 4 + j], s, 1e-13);
    }
  const auto self = sqdist(a, a);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(self[i * 5 + i], 0.0);
  for (double v : self.data()) EXPECT_GE(v, 0.0);
}

TEST(Ops, SliceConcatRoundTrip) {
  Rng rng(9);
  const auto a = random_tensor(Shape{3, 5}, rng);
  const auto r = concat({slice(a, 1, 0, 2), slice(a, 1, 2, 5)}, 1);
  EXPECT_EQ(r.to_vector(), a.to_vector());
}

TEST(Ops, PermuteAndTranspose) {
  const Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(transpose(a).to_vector(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(permute(a, {1, 0}).to_vector(), transpose(a).to_vector());
}
