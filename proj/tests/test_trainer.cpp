#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"

using namespace gnp;
using namespace gnp::testing;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.iters_per_epoch = 3;
  c.batch_size = 2;
  c.eval_episodes = 4;
  c.seed = 11;
  c.init_seed = 5;
  return c;
}

TaskSpec tiny_task() {
  TaskSpec t;
  t.n_context_max = 8;
  t.n_target = 6;
  return t;
}

ParameterStore one_param(std::vector<double> x) {
  ParameterStore s;
  const auto n = x.size();
  s.params.emplace("w", Tensor(Shape{n}, std::move(x)));
  return s;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  auto s = one_param({1.0, -2.0, 3.0});
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  adam_step(s, {{"w", {0.5, -4.0, 1e-3}}}, cfg, 1);
  const auto x = s.params.at("w").to_vector();
  EXPECT_NEAR(x[0], 1.0 - 0.1, 1e-6);
  EXPECT_NEAR(x[1], -2.0 + 0.1, 1e-6);
  EXPECT_NEAR(x[2], 3.0 - 0.1, 1e-4);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto s = one_param({1.0, 2.0});
  TrainConfig cfg;
  adam_step(s, {{"w", {0.0, 0.0}}}, cfg, 1);
  EXPECT_EQ(s.params.at("w").to_vector(), (std::vector<double>{1.0, 2.0}));
}

TEST(Adam, MatchesReferenceRecurrence) {
  auto s = one_param({0.3});
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  const std::vector<double> gs{0.5, -0.2, 1.3, 0.0, -0.7};
  double x = 0.3, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= gs.size(); ++t) {
    adam_step(s, {{"w", {gs[t - 1]}}}, cfg, t);
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    const double mh = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(s.params.at("w")[0], x, 1e-15);
  }
}

TEST(Adam, IdenticalGradientsGiveIdenticalUpdates) {
  auto a = one_param({1.0}), b = one_param({1.0});
  TrainConfig cfg;
  for (std::uint64_t t = 1; t <= 4; ++t) {
    adam_step(a, {{"w", {0.25}}}, cfg, t);
    adam_step(b, {{"w", {0.25}}}, cfg, t);
  }
  EXPECT_EQ(a.params.at("w")[0], b.params.at("w")[0]);
}

TEST(Adam, RejectsStepZeroAndSizeMismatch) {
  auto s = one_param({1.0});
  TrainConfig cfg;
  EXPECT_THROW(adam_step(s, {{"w", {1.0}}}, cfg, 0), std::invalid_argument);
  EXPECT_THROW(adam_step(s, {{"w", {1.0, 2.0}}}, cfg, 1), ShapeError);
}

TEST(Config, PresetsAndValidation) {
  const auto p = TrainConfig::full_scale();
  EXPECT_EQ(p.epochs, 100);
  EXPECT_EQ(p.iters_per_epoch, 1024);
  EXPECT_EQ(p.batch_size, 16);
  EXPECT_EQ(p.learning_rate, 5e-4);
  const auto d = TrainConfig::desk_scale();
  EXPECT_EQ(d.epochs, 20);
  EXPECT_EQ(d.iters_per_epoch, 256);
  TrainConfig bad;
  bad.learning_rate = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.beta1 = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Training, ZeroLearningRateKeepsParametersBitIdentical) {
  const auto spec = small_model(EncoderKind::DeepSet, HeadKind::Linear);
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  const auto res = train(spec, tiny_task(), cfg);
  EXPECT_EQ(encode_checkpoint(res.store.params), encode_checkpoint(init_params(spec, cfg.init_seed)));
}

TEST(Training, DeterministicCheckpointBytes) {
  for (auto e : all_encoders()) {
    const auto spec = small_model(e, HeadKind::Kvv);
    const auto a = train(spec, tiny_task(), tiny_config());
    const auto b = train(spec, tiny_task(), tiny_config());
    EXPECT_EQ(encode_checkpoint(a.store.params), encode_checkpoint(b.store.params)) << to_string(e);
    ASSERT_EQ(a.metrics.size(), b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i)
      EXPECT_EQ(a.metrics[i].loglik_joint, b.metrics[i].loglik_joint);
  }
}

TEST(Training, DifferentSeedsDiffer) {
  const auto spec = small_model(EncoderKind::DeepSet, HeadKind::MeanField);
  auto c2 = tiny_config();
  c2.seed = 12;
  EXPECT_NE(encode_checkpoint(train(spec, tiny_task(), tiny_config()).store.params),
            encode_checkpoint(train(spec, tiny_task(), c2).store.params));
}

TEST(Training, MetricsRowsFollowSchedule) {
  const auto spec = small_model(EncoderKind::DeepSet, HeadKind::MeanField);
  std::vector<MetricsRow> seen;
  const auto res = train(spec, tiny_task(), tiny_config(), [&](const MetricsRow& r) { seen.push_back(r); });
  ASSERT_EQ(seen.size(), 5u);
  EXPECT_EQ(seen[0].split, "eval");
  EXPECT_EQ(seen[0].epoch, 0);
  EXPECT_EQ(seen[1].split, "train");
  EXPECT_EQ(seen[1].iter, 3);
  EXPECT_EQ(seen[2].split, "eval");
  EXPECT_EQ(seen[4].iter, 6);
  for (const auto& r : seen) EXPECT_DOUBLE_EQ(r.loss, -r.loglik_joint);
  EXPECT_EQ(res.store.step, 6u);
}

TEST(Training, InitialEvalRowMatchesIndependentScore) {
  const auto spec = small_model(EncoderKind::Attentive, HeadKind::Linear);
  const auto cfg = tiny_config();
  const auto task = tiny_task();
  const auto res = train(spec, task, cfg);
  const auto p0 = init_params(spec, cfg.init_seed);
  double total = 0.0;
  for (std::uint64_t i = 0; i < 4; ++i) {
    const auto d = corpus_episode(task, kEvalSeed, i);
    const auto pred = predict(spec, p0, d);
    const auto k = pred.dense_cov().to_vector();
    const auto m = d.n_target();
    std::vector<double> cov = k;
    for (std::size_t j = 0; j < m; ++j) cov[j * m + j] += pred.noise_var.item();
    Eigen::LLT<Eigen::MatrixXd> llt(to_eigen(cov, m, m));
    Eigen::VectorXd r(m);
    for (std::size_t j = 0; j < m; ++j) r(j) = d.y_t[j] - pred.mean[j];
    const Eigen::VectorXd z = llt.matrixL().solve(r);
    double logdet = 0.0;
    for (std::size_t j = 0; j < m; ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
    total += -0.5 * z.squaredNorm() - 0.5 * logdet - 0.5 * m * std::log(2.0 * M_PI);
  }
  EXPECT_NEAR(res.metrics.front().loglik_joint, total / 4.0, 1e-8);
}

TEST(Training, LossEqualsNegativeMeanBatchLoglik) {
  const auto spec = small_model(EncoderKind::DeepSet, HeadKind::Kvv);
  const auto task = tiny_task();
  ParameterStore store;
  store.params = init_params(spec, 0);
  Rng rng(3);
  const auto batch = sample_batch(task, 4, rng);
  double mean = 0.0;
  for (const auto& d : batch) mean += episode_loglik(spec, store.params, d).item() / 4.0;
  const auto s = train_step(spec, store, batch, TrainConfig{}, 1);
  EXPECT_NEAR(s.joint, mean, 1e-12);
}

TEST(Training, GradientClipLimitsFirstStep) {
  // With clipping at a tiny norm the first Adam step is still +-lr per
  // coordinate, so clipping must not change the step direction.
  const auto spec = small_model(EncoderKind::DeepSet, HeadKind::MeanField);
  const auto task = tiny_task();
  Rng rng(4);
  const auto batch = sample_batch(task, 2, rng);
  TrainConfig a, b;
  a.adam_eps = b.adam_eps = 1e-300;
  b.grad_clip = 1e-3;
  ParameterStore sa, sb;
  sa.params = sb.params = init_params(spec, 0);
  train_step(spec, sa, batch, a, 1);
  train_step(spec, sb, batch, b, 1);
  for (const auto& [name, t] : sa.params) {
    const auto& u = sb.params.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(t[i], u[i], 1e-6) << name;
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto p = init_params(small_model(EncoderKind::Conv, HeadKind::Kvv), 9);
  const auto bytes = encode_checkpoint(p);
  const auto q = decode_checkpoint(bytes);
  ASSERT_EQ(p.size(), q.size());
  for (const auto& [name, t] : p) {
    EXPECT_EQ(t.shape(), q.at(name).shape());
    EXPECT_EQ(t.to_vector(), q.at(name).to_vector());
  }
  EXPECT_EQ(encode_checkpoint(q), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto bytes = encode_checkpoint(init_params(small_model(EncoderKind::DeepSet, HeadKind::Linear), 1));
  for (std::size_t pos : {std::size_t{0}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(bad), FormatError) << pos;
  }
  auto truncated = bytes;
  truncated.resize(10);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
}

TEST(Checkpoint, Crc32KnownAnswer) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), 0xCBF43926u);
}

TEST(Metrics, CsvHeaderAndRow) {
  std::ostringstream os;
  write_metrics_header(os);
  write_metrics_row(os, {3, 768, "eval", -12.5, -0.25, 12.5});
  EXPECT_EQ(os.str(), "epoch,iter,split,loglik_joint,loglik_per_point,loss\n3,768,eval,-12.5,-0.25,12.5\n");
}

TEST(Metrics, SummaryStandardError) {
  const auto s = summarize_scores({{1.0, 0.1}, {2.0, 0.2}, {3.0, 0.3}, {6.0, 0.6}});
  EXPECT_DOUBLE_EQ(s.mean_joint, 3.0);
  // sample sd = sqrt(14/3), se = sd / 2
  EXPECT_NEAR(s.se_joint, std::sqrt(14.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(s.episodes, 4u);
}
