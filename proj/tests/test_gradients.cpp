// Analytic gradients against central finite differences, 50 seeds per op with
// randomized shapes.

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace gnp;
using namespace gnp::testing;

namespace {

constexpr double kTol = 1e-5;
constexpr int kSeeds = 50;

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo),
                                                  static_cast<std::int64_t>(hi)));
}

// Random pair of broadcast-compatible shapes of rank <= 3.
std::pair<Shape, Shape> broadcast_shapes(Rng& rng) {
  const std::size_t nd = dim(rng, 1, 3);
  Shape a(nd), b(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t d = dim(rng, 1, 3);
    a[i] = rng.uniform() < 0.25 ? 1 : d;
    b[i] = rng.uniform() < 0.25 ? 1 : d;
  }
  if (rng.uniform() < 0.3 && nd > 1) b.erase(b.begin());  // rank mismatch
  return {a, b};
}

template <class F>
void for_seeds(F f) {
  for (int s = 0; s < kSeeds; ++s) {
    SCOPED_TRACE("seed " + std::to_string(s));
    Rng rng(1000 + static_cast<std::uint64_t>(s));
    f(rng, static_cast<std::uint64_t>(s));
  }
}

void expect_grad(const ScalarFn& f, const std::vector<Tensor>& in) {
  EXPECT_LT(gradient_error(f, in), kTol);
}

}  // namespace

TEST(Gradients, BinaryBroadcast) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    auto [sa, sb] = broadcast_shapes(rng);
    const auto a = random_tensor(sa, rng), b = away_from_zero(sb, rng);
    expect_grad([s](auto& x) { return weighted_sum(add(x[0], x[1]), s); }, {a, b});
    expect_grad([s](auto& x) { return weighted_sum(sub(x[0], x[1]), s); }, {a, b});
    expect_grad([s](auto& x) { return weighted_sum(mul(x[0], x[1]), s); }, {a, b});
    expect_grad([s](auto& x) { return weighted_sum(div(x[0], x[1]), s); }, {a, b});
  });
}

TEST(Gradients, Unary) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const Shape sh{dim(rng), dim(rng)};
    const auto a = away_from_zero(sh, rng);
    const auto pos = random_tensor(sh, rng, 0.2, 2.0);
    expect_grad([s](auto& x) { return weighted_sum(exp(x[0]), s); }, {a});
    expect_grad([s](auto& x) { return weighted_sum(log(x[0]), s); }, {pos});
    expect_grad([s](auto& x) { return weighted_sum(tanh(x[0]), s); }, {a});
    expect_grad([s](auto& x) { return weighted_sum(relu(x[0]), s); }, {a});
    expect_grad([s](auto& x) { return weighted_sum(softplus(x[0]), s); }, {a});
    expect_grad([s](auto& x) { return weighted_sum(sigmoid(x[0]), s); }, {a});
    expect_grad([s](auto& x) { return weighted_sum(square(x[0]), s); }, {a});
    expect_grad([s](auto& x) { return weighted_sum(sqrt(x[0]), s); }, {pos});
    expect_grad([s](auto& x) { return weighted_sum(scale(x[0], -1.7), s); }, {a});
    expect_grad([s](auto& x) { return weighted_sum(add_scalar(x[0], 0.3), s); }, {a});
  });
}

TEST(Gradients, Reductions) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const Shape sh{dim(rng), dim(rng), dim(rng)};
    const auto a = random_tensor(sh, rng);
    const std::size_t axis = dim(rng, 0, 2);
    const bool keep = rng.uniform() < 0.5;
    expect_grad([=](auto& x) { return weighted_sum(sum(x[0], axis, keep), s); }, {a});
    expect_grad([=](auto& x) { return weighted_sum(mean(x[0], axis, keep), s); }, {a});
    expect_grad([=](auto& x) { return sum_all(square(x[0])); }, {a});
  });
}

TEST(Gradients, ShapeOps) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const std::size_t r = dim(rng), c = dim(rng), d = dim(rng);
    const auto a = random_tensor(Shape{r, c, d}, rng);
    expect_grad([=](auto& x) { return weighted_sum(reshape(x[0], Shape{r * c, d}), s); }, {a});
    expect_grad([=](auto& x) { return weighted_sum(permute(x[0], {2, 0, 1}), s); }, {a});
    expect_grad([=](auto& x) { return weighted_sum(transpose(x[0]), s); }, {a});
    const std::size_t b = dim(rng, 0, d - 1);
    const std::size_t e = dim(rng, b + 1, d);
    expect_grad([=](auto& x) { return weighted_sum(slice(x[0], 2, b, e), s); }, {a});
    const auto other = random_tensor(Shape{r, dim(rng), d}, rng);
    expect_grad([=](auto& x) { return weighted_sum(concat({x[0], x[1], x[0]}, 1), s); },
                {a, other});
  });
}

TEST(Gradients, Matmul) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const std::size_t n = dim(rng), k = dim(rng), m = dim(rng), bt = dim(rng, 1, 3);
    expect_grad([=](auto& x) { return weighted_sum(matmul(x[0], x[1]), s); },
                {random_tensor(Shape{n, k}, rng), random_tensor(Shape{k, m}, rng)});
    expect_grad([=](auto& x) { return weighted_sum(matmul(x[0], x[1]), s); },
                {random_tensor(Shape{bt, n, k}, rng), random_tensor(Shape{bt, k, m}, rng)});
  });
}

TEST(Gradients, Softmax) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const Shape sh{dim(rng), dim(rng, 2, 5), dim(rng)};
    const std::size_t axis = dim(rng, 0, 2);
    expect_grad([=](auto& x) { return weighted_sum(softmax(x[0], axis), s); },
                {random_tensor(sh, rng, -3.0, 3.0)});
  });
}

TEST(Gradients, Conv1d) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const std::size_t cin = dim(rng, 1, 3), cout = dim(rng, 1, 3), len = dim(rng, 1, 9);
    const std::size_t k = 2 * dim(rng, 0, 2) + 1, dil = dim(rng, 1, 3);
    expect_grad([=](auto& x) { return weighted_sum(conv1d(x[0], x[1], dil), s); },
                {random_tensor(Shape{cin, len}, rng), random_tensor(Shape{cout, cin, k}, rng)});
  });
}

TEST(Gradients, Sqdist) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const std::size_t n = dim(rng), m = dim(rng), d = dim(rng);
    expect_grad([=](auto& x) { return weighted_sum(sqdist(x[0], x[1]), s); },
                {random_tensor(Shape{n, d}, rng), random_tensor(Shape{m, d}, rng)});
    // Self-distances: the zero diagonal is clamped, off-diagonals must still
    // carry gradient through both arguments.
    expect_grad([=](auto& x) { return weighted_sum(exp(scale(sqdist(x[0], x[0]), -0.5)), s); },
                {random_tensor(Shape{n + 1, d}, rng)});
  });
}

TEST(Gradients, Diagonal) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const std::size_t n = dim(rng);
    expect_grad([=](auto& x) { return weighted_sum(diagonal(x[0]), s); },
                {random_tensor(Shape{n, n}, rng)});
  });
}

TEST(Gradients, Cholesky) {
  // Through an SPD parametrization A = X X^T + n I, so perturbations of X keep
  // A symmetric.
  for_seeds([](Rng& rng, std::uint64_t s) {
    const std::size_t n = dim(rng, 1, 6);
    expect_grad(
        [=](auto& x) {
          const Tensor a = add(matmul(x[0], transpose(x[0])),
                               Tensor::eye(n) * static_cast<double>(n));
          return weighted_sum(cholesky(a), s);
        },
        {random_tensor(Shape{n, n}, rng)});
  });
}

TEST(Gradients, SolveLower) {
  for_seeds([](Rng& rng, std::uint64_t s) {
    const std::size_t n = dim(rng, 1, 6), m = dim(rng);
    std::vector<double> mask(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) mask[i * n + j] = 1.0;
    const Tensor tril(Shape{n, n}, mask);
    expect_grad(
        [=](auto& x) {
          const Tensor l = add(mul(x[0], tril), Tensor::eye(n) * 2.0);
          return weighted_sum(solve_lower(l, x[1]), s);
        },
        {random_tensor(Shape{n, n}, rng, -0.5, 0.5), random_tensor(Shape{n, m}, rng)});
  });
}

TEST(Gradients, GaussianLoglikPaths) {
  for_seeds([](Rng& rng, std::uint64_t) {
    const std::size_t m = dim(rng, 1, 6), d = dim(rng, 1, 4);
    std::vector<double> y(m);
    for (auto& v : y) v = rng.normal();
    const auto mean = random_tensor(Shape{m}, rng);
    const auto noise = Tensor::scalar(rng.uniform(0.1, 1.0));
    expect_grad(
        [&](auto& x) {
          return predictive_loglik({x[0], CovKind::Diagonal, softplus(x[1]), x[2]}, y);
        },
        {mean, random_tensor(Shape{m}, rng), noise});
    expect_grad(
        [&](auto& x) { return predictive_loglik({x[0], CovKind::LowRank, x[1], x[2]}, y); },
        {mean, random_tensor(Shape{m, d}, rng), noise});
    expect_grad(
        [&](auto& x) {
          return predictive_loglik(
              {x[0], CovKind::Dense, kvv_covariance(x[1], x[2]), x[3]}, y);
        },
        {mean, random_tensor(Shape{m, d}, rng), random_tensor(Shape{m, 1}, rng), noise});
  });
}

// Every parameter of every encoder x head combination, on a random
// 3-context / 4-target episode.
TEST(Gradients, FullModelLossAllParameters) {
  for (auto e : all_encoders()) {
    for (auto h : all_heads()) {
      const auto spec = small_model(e, h);
      SCOPED_TRACE(spec.name());
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(77 + seed);
        const auto ep = random_episode(3, 4, rng);
        const Params p = random_params(spec, seed);
        std::vector<std::string> names;
        std::vector<Tensor> values;
        for (const auto& [n, t] : p) {
          names.push_back(n);
          values.push_back(t);
        }
        const auto f = [&](const std::vector<Tensor>& xs) {
          Params q;
          for (std::size_t i = 0; i < xs.size(); ++i) q.emplace(names[i], xs[i]);
          return episode_loglik(spec, q, ep);
        };
        EXPECT_LT(gradient_error(f, values), kTol);
      }
    }
  }
}

// Default-size models: directional derivatives along random unit directions
// in the full parameter space.
TEST(Gradients, FullModelDirectionalDefaultSizes) {
  for (auto e : all_encoders()) {
    for (auto h : all_heads()) {
      ModelSpec spec;
      spec.encoder = e;
      spec.head = h;
      SCOPED_TRACE(spec.name());
      Rng rng(5);
      const auto ep = random_episode(3, 4, rng);
      const Params p = random_params(spec, 11);

      Tape tape;
      const Params w = watch_all(tape, p);
      const Gradients g = tape.backward(episode_loglik(spec, w, ep));
      for (int trial = 0; trial < 3; ++trial) {
        // Unit-norm direction over all parameters.
        std::map<std::string, std::vector<double>> dir;
        double norm = 0.0;
        for (const auto& [name, t] : p) {
          dir[name] = random_tensor(t.shape(), rng).to_vector();
          for (double v : dir[name]) norm += v * v;
        }
        norm = std::sqrt(norm);
        Params plus, minus;
        double analytic = 0.0;
        const double eps = 1e-5;
        for (const auto& [name, t] : p) {
          const auto& u = dir[name];
          const auto gv = g.of(w.at(name)).to_vector();
          auto vp = t.to_vector(), vm = t.to_vector();
          for (std::size_t i = 0; i < u.size(); ++i) {
            analytic += gv[i] * u[i] / norm;
            vp[i] += eps * u[i] / norm;
            vm[i] -= eps * u[i] / norm;
          }
          plus.emplace(name, Tensor(t.shape(), vp));
          minus.emplace(name, Tensor(t.shape(), vm));
        }
        const double numeric = (episode_loglik(spec, plus, ep).item() -
                                episode_loglik(spec, minus, ep).item()) /
                               (2.0 * eps);
        const double floor = fd_roundoff(episode_loglik(spec, p, ep).item(), eps) / kTol;
        EXPECT_LT(std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor}), kTol)
            << "analytic " << analytic << " numeric " << numeric;
      }
    }
  }
}
