#pragma once

// Episodic maximum-likelihood training with Adam.
//
// Iteration t (0-based, counted across epochs) draws its batch from
// Rng(cfg.seed).split(t), so any iteration can be replayed in isolation.
// The loss is the negative joint log-likelihood averaged over the episodes of
// the batch; per-point values are reported alongside.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnp/model.hpp"
#include "gnp/tasks.hpp"

namespace gnp {

/// Seed of the held-out evaluation corpus. Training streams are keyed by the
/// training seed, so the two never overlap unless a caller picks this value.
inline constexpr std::uint64_t kEvalSeed = 0xE7A1C0DE5EEDULL;

struct TrainConfig {
  std::int64_t epochs = 20;
  std::int64_t iters_per_epoch = 256;
  std::int64_t batch_size = 16;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 1;  // epochs; 0 disables periodic evaluation
  double grad_clip = 10.0;      // global norm; 0 disables
  std::int64_t eval_episodes = 1024;
  std::uint64_t init_seed = 0;

  static TrainConfig full_scale() {
    TrainConfig c;
    c.epochs = 100;
    c.iters_per_epoch = 1024;
    return c;
  }
  static TrainConfig desk_scale() { return {}; }

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (iters_per_epoch < 1) throw std::invalid_argument("train: iters_per_epoch must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw std::invalid_argument("train: learning_rate must be finite and >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("train: adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
    if (eval_every < 0) throw std::invalid_argument("train: eval_every must be >= 0");
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("train: grad_clip must be >= 0");
    if (eval_episodes < 1) throw std::invalid_argument("train: eval_episodes must be >= 1");
  }
};

struct AdamMoments {
  std::vector<double> m, v;
};

/// Parameters plus optimizer state, iterated in lexicographic name order.
struct ParameterStore {
  Params params;
  std::map<std::string, AdamMoments> moments;
  std::uint64_t step = 0;
};

using Grads = std::map<std::string, std::vector<double>>;

/// One bias-corrected Adam update at step t >= 1. Parameters without an entry
/// in `grads` are left untouched.
inline void adam_step(ParameterStore& store, const Grads& grads, const TrainConfig& cfg,
                      std::uint64_t t) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, tensor] : store.params) {
    const auto it = grads.find(name);
    if (it == grads.end()) continue;
    const auto& g = it->second;
    if (g.size() != tensor.numel()) throw ShapeError("adam_step: gradient size mismatch for " + name);
    auto& mom = store.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(g.size(), 0.0);
      mom.v.assign(g.size(), 0.0);
    }
    auto x = tensor.to_vector();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      x[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
    tensor = Tensor(tensor.shape(), std::move(x));
  }
  store.step = t;
}

/// Raised when an episode cannot be evaluated or the loss goes non-finite.
/// `last_good` holds the parameters before the failing iteration.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, Params last_good)
      : std::runtime_error(what), last_good(std::move(last_good)) {}
  Params last_good;
};

struct EpisodeScore {
  double joint = 0.0;
  double per_point = 0.0;
};

/// Joint log-likelihood and its gradient with respect to every parameter.
inline EpisodeScore episode_value_and_grad(const ModelSpec& spec, const Params& params,
                                           const Dataset& d, Grads& acc, double weight) {
  Tape tape;
  const Params watched = watch_all(tape, params);
  const Tensor ll = episode_loglik(spec, watched, d);
  const Gradients g = tape.backward(ll);
  for (const auto& [name, t] : watched) {
    if (!g.contains(t)) continue;
    const Tensor gt = g.of(t);
    const auto gs = gt.data();
    auto& a = acc[name];
    if (a.empty()) a.assign(gs.size(), 0.0);
    for (std::size_t i = 0; i < gs.size(); ++i) a[i] += weight * gs[i];
  }
  const double joint = ll.item();
  return {joint, joint / static_cast<double>(d.n_target())};
}

struct CorpusScore {
  double mean_joint = 0.0, se_joint = 0.0;
  double mean_per_point = 0.0, se_per_point = 0.0;
  std::size_t episodes = 0;
};

inline CorpusScore summarize_scores(const std::vector<EpisodeScore>& s) {
  CorpusScore out;
  out.episodes = s.size();
  if (s.empty()) return out;
  const double n = static_cast<double>(s.size());
  for (const auto& e : s) {
    out.mean_joint += e.joint;
    out.mean_per_point += e.per_point;
  }
  out.mean_joint /= n;
  out.mean_per_point /= n;
  if (s.size() > 1) {
    double vj = 0.0, vp = 0.0;
    for (const auto& e : s) {
      vj += (e.joint - out.mean_joint) * (e.joint - out.mean_joint);
      vp += (e.per_point - out.mean_per_point) * (e.per_point - out.mean_per_point);
    }
    out.se_joint = std::sqrt(vj / (n - 1.0) / n);
    out.se_per_point = std::sqrt(vp / (n - 1.0) / n);
  }
  return out;
}

/// Scores of a trained model on every episode of `corpus`, in order.
inline std::vector<EpisodeScore> score_episodes(const ModelSpec& spec, const Params& params,
                                                const std::vector<Dataset>& corpus) {
  std::vector<EpisodeScore> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      const double joint = episode_loglik(spec, params, corpus[i]).item();
      out.push_back({joint, joint / static_cast<double>(corpus[i].n_target())});
    } catch (const std::runtime_error& e) {
      throw NumericError("episode " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

struct MetricsRow {
  std::int64_t epoch = 0;
  std::int64_t iter = 0;  // iterations completed so far
  std::string split;      // "train" or "eval"
  double loglik_joint = 0.0;
  double loglik_per_point = 0.0;
  double loss = 0.0;
};

inline void write_metrics_header(std::ostream& os) {
  os << "epoch,iter,split,loglik_joint,loglik_per_point,loss\n";
}

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  std::ostringstream line;
  line.precision(17);
  line << r.epoch << ',' << r.iter << ',' << r.split << ',' << r.loglik_joint << ','
       << r.loglik_per_point << ',' << r.loss << '\n';
  os << line.str();
}

struct TrainResult {
  ParameterStore store;
  std::vector<MetricsRow> metrics;
};

using TrainCallback = std::function<void(const MetricsRow&)>;

inline std::vector<Dataset> eval_corpus(const TaskSpec& task, const TrainConfig& cfg) {
  return generate_corpus(task, kEvalSeed, static_cast<std::uint64_t>(cfg.eval_episodes));
}

/// Single training iteration on `batch`. Returns the mean episode scores.
inline EpisodeScore train_step(const ModelSpec& spec, ParameterStore& store,
                               const std::vector<Dataset>& batch, const TrainConfig& cfg,
                               std::uint64_t t) {
  Grads grads;
  EpisodeScore mean;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& d : batch) {
    const auto s = episode_value_and_grad(spec, store.params, d, grads, -w);
    mean.joint += w * s.joint;
    mean.per_point += w * s.per_point;
  }
  if (!std::isfinite(mean.joint)) throw NumericError("non-finite loss");
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (norm > cfg.grad_clip) {
      const double f = cfg.grad_clip / norm;
      for (auto& [name, g] : grads)
        for (auto& v : g) v *= f;
    }
  }
  adam_step(store, grads, cfg, t);
  return mean;
}

/// Full training run. Deterministic in (model, task, cfg).
inline TrainResult train(const ModelSpec& spec, const TaskSpec& task, const TrainConfig& cfg,
                         const TrainCallback& on_row = {}) {
  spec.validate();
  task.validate();
  cfg.validate();
  TrainResult res;
  res.store.params = init_params(spec, cfg.init_seed);
  const auto held_out = cfg.eval_every > 0 ? eval_corpus(task, cfg) : std::vector<Dataset>{};

  auto emit = [&](MetricsRow row) {
    res.metrics.push_back(row);
    if (on_row) on_row(row);
  };
  auto evaluate_now = [&](std::int64_t epoch, std::int64_t iter) {
    const auto s = summarize_scores(score_episodes(spec, res.store.params, held_out));
    emit({epoch, iter, "eval", s.mean_joint, s.mean_per_point, -s.mean_joint});
  };

  if (cfg.eval_every > 0) evaluate_now(0, 0);
  const Rng root(cfg.seed);
  std::uint64_t t = 0;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpisodeScore acc;
    for (std::int64_t it = 0; it < cfg.iters_per_epoch; ++it) {
      Rng rng = root.split(t);
      const auto batch = sample_batch(task, static_cast<std::size_t>(cfg.batch_size), rng);
      const Params before = res.store.params;
      try {
        const auto s = train_step(spec, res.store, batch, cfg, t + 1);
        acc.joint += s.joint;
        acc.per_point += s.per_point;
      } catch (const std::runtime_error& e) {
        res.store.params = before;
        std::ostringstream msg;
        msg << "training failed at epoch " << epoch << ", iteration " << t
            << " (batch rng: seed " << rng.seed() << ", stream " << root.split(t).stream()
            << "; episode b of the batch is sample_batch(task, " << cfg.batch_size
            << ", Rng(" << cfg.seed << ").split(" << t << "))[b]): " << e.what();
        throw TrainingError(msg.str(), before);
      }
      ++t;
    }
    const double n = static_cast<double>(cfg.iters_per_epoch);
    emit({epoch, static_cast<std::int64_t>(t), "train", acc.joint / n, acc.per_point / n,
          -acc.joint / n});
    if (cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      evaluate_now(epoch, static_cast<std::int64_t>(t));
    }
  }
  return res;
}

}  // namespace gnp
