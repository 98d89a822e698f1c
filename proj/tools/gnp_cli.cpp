// gnp_cli: generate corpora, train, evaluate, sample, extract covariances and
// estimate event probabilities. Every command writes <out>.manifest.json with
// the resolved arguments and SHA-256 hashes of its inputs and outputs;
// `replay --manifest` re-runs a command from that record and compares hashes.
//
// Exit codes: 0 success, 1 usage/config/IO error, 2 numeric failure or replay
// mismatch.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gnp/gnp.hpp"

namespace {

using gnp::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const std::string& path) {
  const auto bytes = gnp::read_bytes(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr)) {
    throw std::runtime_error("sha256 failed for '" + path + "'");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

json hashes(const std::vector<std::string>& paths) {
  json j = json::object();
  for (const auto& p : paths) j[p] = sha256_file(p);
  return j;
}

std::string manifest_path(const std::string& out) { return out + ".manifest.json"; }

void write_manifest(const std::string& command, const json& args,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  const json m{{"tool", "gnp_cli"},
               {"manifest_version", 1},
               {"command", command},
               {"args", args},
               {"inputs", hashes(inputs)},
               {"outputs", hashes(outputs)}};
  gnp::write_text_file(manifest_path(outputs.front()), m.dump(2) + "\n");
}

/// Model spec recorded next to a checkpoint by `train`.
gnp::ModelSpec model_for_checkpoint(const std::string& ckpt, const std::string& model_path) {
  if (!model_path.empty()) return gnp::model_from_json(gnp::read_json_file(model_path));
  const auto mp = manifest_path(ckpt);
  if (!std::filesystem::exists(mp)) {
    throw UsageError("no model spec: pass --model or keep '" + mp + "' next to the checkpoint");
  }
  return gnp::model_from_json(gnp::read_json_file(mp).at("args").at("model"));
}

const gnp::Dataset& episode_at(const gnp::Corpus& c, std::int64_t index) {
  if (index < 0 || static_cast<std::size_t>(index) >= c.episodes.size()) {
    throw UsageError("episode index " + std::to_string(index) + " out of range (corpus has " +
                     std::to_string(c.episodes.size()) + ")");
  }
  return c.episodes[static_cast<std::size_t>(index)];
}

// ---- commands: each takes fully resolved arguments ------------------------

struct Outcome {
  std::vector<std::string> inputs, outputs;
};

Outcome run_generate(const json& a) {
  gnp::Corpus c;
  c.task = gnp::task_from_json(a.at("task"));
  c.seed = a.at("seed").get<std::uint64_t>();
  c.episodes = gnp::generate_corpus(c.task, c.seed, a.at("episodes").get<std::size_t>());
  const auto out = a.at("out").get<std::string>();
  gnp::write_text_file(out, gnp::corpus_to_jsonl(c));
  return {{}, {out}};
}

Outcome run_train(const json& a, bool quiet) {
  const auto model = gnp::model_from_json(a.at("model"));
  const auto task = gnp::task_from_json(a.at("task"));
  const auto cfg = gnp::train_config_from_json(a.at("train"));
  const auto out = a.at("out").get<std::string>();
  const auto metrics_path = a.at("metrics").get<std::string>();

  std::ostringstream metrics;
  gnp::write_metrics_header(metrics);
  auto on_row = [&](const gnp::MetricsRow& r) {
    gnp::write_metrics_row(metrics, r);
    if (!quiet) {
      std::cerr << "epoch " << r.epoch << " iter " << r.iter << " " << r.split
                << " loglik/point " << r.loglik_per_point << "\n";
    }
  };
  try {
    const auto res = gnp::train(model, task, cfg, on_row);
    gnp::save_checkpoint(out, res.store.params);
  } catch (const gnp::TrainingError& e) {
    gnp::save_checkpoint(out + ".last_good", e.last_good);
    gnp::write_text_file(metrics_path, metrics.str());
    throw;
  }
  gnp::write_text_file(metrics_path, metrics.str());
  return {{}, {out, metrics_path}};
}

Outcome run_eval(const json& a) {
  const auto ckpt = a.at("ckpt").get<std::string>();
  const auto corpus_path = a.at("corpus").get<std::string>();
  const auto spec = gnp::model_from_json(a.at("model"));
  const auto params = gnp::load_checkpoint(ckpt);
  const auto corpus = gnp::corpus_from_jsonl(gnp::read_text_file(corpus_path));
  const bool oracle = a.at("oracle").get<bool>();
  const auto summary = gnp::evaluate(spec, params, corpus.episodes, oracle ? &corpus.task : nullptr);
  json j = gnp::to_json(summary);
  j["model_spec"] = a.at("model");
  const auto out = a.at("out").get<std::string>();
  gnp::write_text_file(out, j.dump(2) + "\n");
  return {{ckpt, corpus_path}, {out}};
}

struct Query {
  gnp::ModelSpec spec;
  gnp::Params params;
  gnp::Dataset episode;
  std::vector<double> x;
};

Query load_query(const json& a) {
  Query q{gnp::model_from_json(a.at("model")), gnp::load_checkpoint(a.at("ckpt").get<std::string>()),
          {}, {}};
  const auto corpus = gnp::corpus_from_jsonl(gnp::read_text_file(a.at("corpus").get<std::string>()));
  q.episode = episode_at(corpus, a.at("episode_index").get<std::int64_t>());
  const auto grid = a.at("grid").get<std::string>();
  q.x = grid.empty() ? q.episode.x_t : gnp::parse_grid(grid);
  return q;
}

std::vector<std::string> query_inputs(const json& a) {
  return {a.at("ckpt").get<std::string>(), a.at("corpus").get<std::string>()};
}

Outcome run_sample(const json& a) {
  const auto q = load_query(a);
  const auto pred = gnp::predict(q.spec, q.params, q.episode.x_c, q.episode.y_c, q.x);
  gnp::Rng rng(a.at("seed").get<std::uint64_t>());
  const auto n = a.at("n_samples").get<std::size_t>();
  const auto ys = gnp::sample_functions(pred, n, rng, a.at("noiseless").get<bool>());
  const auto out = a.at("out").get<std::string>();
  gnp::write_text_file(out, gnp::matrix_csv(q.x, ys, n, q.x.size()));
  return {query_inputs(a), {out}};
}

Outcome run_cov(const json& a) {
  const auto q = load_query(a);
  const auto k = gnp::extract_covariance(q.spec, q.params, q.episode, q.x);
  const auto out = a.at("out").get<std::string>();
  gnp::write_text_file(out, gnp::matrix_csv(q.x, k, q.x.size(), q.x.size()));
  return {query_inputs(a), {out}};
}

Outcome run_event_prob(const json& a) {
  const auto q = load_query(a);
  const auto pred = gnp::predict(q.spec, q.params, q.episode.x_c, q.episode.y_c, q.x);
  gnp::Rng rng(a.at("seed").get<std::uint64_t>());
  const double threshold = a.at("threshold").get<double>();
  const auto mode = gnp::event_mode_from_string(a.at("mode").get<std::string>());
  const auto p = gnp::event_probability(pred, threshold, mode, a.at("n_samples").get<std::size_t>(), rng);
  json j = gnp::to_json(p);
  j["threshold"] = threshold;
  j["mode"] = gnp::to_string(mode);
  j["x"] = q.x;
  const auto out = a.at("out").get<std::string>();
  gnp::write_text_file(out, j.dump(2) + "\n");
  return {query_inputs(a), {out}};
}

Outcome dispatch(const std::string& cmd, const json& a, bool quiet) {
  if (cmd == "generate") return run_generate(a);
  if (cmd == "train") return run_train(a, quiet);
  if (cmd == "eval") return run_eval(a);
  if (cmd == "sample") return run_sample(a);
  if (cmd == "cov") return run_cov(a);
  if (cmd == "event-prob") return run_event_prob(a);
  throw UsageError("unknown command '" + cmd + "'");
}

/// Re-run the command recorded in a manifest with outputs redirected to
/// `<path><suffix>`, then compare hashes. Returns the number of mismatches.
int replay(const std::string& manifest_file, const std::string& suffix, bool quiet) {
  const json m = gnp::read_json_file(manifest_file);
  const auto cmd = m.at("command").get<std::string>();
  json args = m.at("args");
  for (const auto& [path, hash] : m.at("inputs").items()) {
    if (sha256_file(path) != hash.get<std::string>()) {
      throw UsageError("input '" + path + "' changed since the manifest was written");
    }
  }
  std::map<std::string, std::string> redirected;
  for (const char* key : {"out", "metrics"}) {
    if (!args.contains(key)) continue;
    const auto orig = args[key].get<std::string>();
    args[key] = orig + suffix;
    redirected[orig] = orig + suffix;
  }
  dispatch(cmd, args, quiet);
  int mismatches = 0;
  for (const auto& [path, hash] : m.at("outputs").items()) {
    const auto it = redirected.find(path);
    const auto& fresh = it == redirected.end() ? path : it->second;
    const bool same = sha256_file(fresh) == hash.get<std::string>();
    std::cout << (same ? "match    " : "MISMATCH ") << path << " -> " << fresh << "\n";
    mismatches += same ? 0 : 1;
  }
  return mismatches;
}

json read_or_empty(const std::string& path) {
  return path.empty() ? json::object() : gnp::read_json_file(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian neural processes: data, training, evaluation and sampling"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  // generate
  auto* gen = app.add_subcommand("generate", "Sample a corpus of episodes");
  std::string g_task, g_out;
  std::size_t g_episodes = 0;
  std::uint64_t g_seed = 0;
  gen->add_option("--task", g_task, "Task spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--episodes", g_episodes, "Number of episodes")->required();
  gen->add_option("--seed", g_seed, "Corpus seed")->required();
  gen->add_option("--out", g_out, "Output corpus (JSONL)")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model by maximum likelihood");
  std::string t_model, t_task, t_config, t_out, t_metrics;
  std::optional<std::int64_t> t_epochs, t_iters, t_batch, t_eval_every;
  std::optional<double> t_lr;
  std::optional<std::uint64_t> t_seed;
  tr->add_option("--model", t_model, "Model spec JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--task", t_task, "Task spec JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--config", t_config, "Training config JSON")->check(CLI::ExistingFile);
  tr->add_option("--out", t_out, "Output checkpoint (.gnpc)")->required();
  tr->add_option("--metrics", t_metrics, "Output metrics CSV")->required();
  tr->add_option("--epochs", t_epochs, "Override epochs");
  tr->add_option("--iters-per-epoch", t_iters, "Override iterations per epoch");
  tr->add_option("--batch-size", t_batch, "Override batch size");
  tr->add_option("--lr", t_lr, "Override learning rate");
  tr->add_option("--seed", t_seed, "Override training seed");
  tr->add_option("--eval-every", t_eval_every, "Override evaluation period (epochs)");

  // eval
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  std::string e_ckpt, e_corpus, e_out, e_model;
  bool e_oracle = false;
  ev->add_option("--ckpt", e_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--corpus", e_corpus)->required()->check(CLI::ExistingFile);
  ev->add_option("--out", e_out, "Output summary JSON")->required();
  ev->add_option("--model", e_model, "Model spec JSON (default: from the checkpoint manifest)");
  ev->add_flag("--oracle", e_oracle, "Also score the exact and diagonalized GP oracle");

  // sample / cov / event-prob share the query options
  struct QueryOpts {
    std::string ckpt, corpus, model, grid, out;
    std::int64_t episode_index = 0;
  };
  auto add_query = [](CLI::App* sc, QueryOpts& q) {
    sc->add_option("--ckpt", q.ckpt)->required()->check(CLI::ExistingFile);
    sc->add_option("--corpus", q.corpus, "Corpus supplying the context set")
        ->required()
        ->check(CLI::ExistingFile);
    sc->add_option("--episode-index", q.episode_index, "Episode within the corpus");
    sc->add_option("--grid", q.grid, "Query inputs lo:hi:n (default: the episode's targets)");
    sc->add_option("--model", q.model, "Model spec JSON (default: from the checkpoint manifest)");
    sc->add_option("--out", q.out)->required();
  };
  auto* sa = app.add_subcommand("sample", "Draw joint function samples");
  QueryOpts s_q;
  std::size_t s_n = 16;
  std::uint64_t s_seed = 0;
  bool s_noiseless = false;
  add_query(sa, s_q);
  sa->add_option("--n-samples", s_n, "Number of samples")->check(CLI::PositiveNumber);
  sa->add_option("--seed", s_seed, "Sampling seed");
  sa->add_flag("--noiseless", s_noiseless, "Omit observation noise");

  auto* cv = app.add_subcommand("cov", "Export the predictive covariance over a grid");
  QueryOpts c_q;
  add_query(cv, c_q);

  auto* ep = app.add_subcommand("event-prob", "Monte Carlo probability of a joint event");
  QueryOpts p_q;
  double p_threshold = 0.0;
  std::string p_mode = "all_above";
  std::size_t p_n = 10000;
  std::uint64_t p_seed = 0;
  add_query(ep, p_q);
  ep->add_option("--threshold", p_threshold)->required();
  ep->add_option("--mode", p_mode)->check(CLI::IsMember({"all_above", "any_below"}));
  ep->add_option("--n-samples", p_n)->check(CLI::Range(std::size_t{100}, std::size_t{100000000}));
  ep->add_option("--seed", p_seed);

  auto* rp = app.add_subcommand("replay", "Re-run a command from its manifest and compare hashes");
  std::string r_manifest, r_suffix = ".replay";
  rp->add_option("--manifest", r_manifest)->required()->check(CLI::ExistingFile);
  rp->add_option("--suffix", r_suffix, "Appended to every output path of the replayed run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto query_args = [](const QueryOpts& q) {
    return json{{"ckpt", q.ckpt},
                {"corpus", q.corpus},
                {"model", gnp::to_json(model_for_checkpoint(q.ckpt, q.model))},
                {"episode_index", q.episode_index},
                {"grid", q.grid},
                {"out", q.out}};
  };

  try {
    std::string cmd;
    json args;
    if (*gen) {
      cmd = "generate";
      args = {{"task", gnp::to_json(gnp::task_from_json(gnp::read_json_file(g_task)))},
              {"episodes", g_episodes},
              {"seed", g_seed},
              {"out", g_out}};
    } else if (*tr) {
      cmd = "train";
      json cfg = read_or_empty(t_config);
      if (t_epochs) cfg["epochs"] = *t_epochs;
      if (t_iters) cfg["iters_per_epoch"] = *t_iters;
      if (t_batch) cfg["batch_size"] = *t_batch;
      if (t_lr) cfg["learning_rate"] = *t_lr;
      if (t_seed) cfg["seed"] = *t_seed;
      if (t_eval_every) cfg["eval_every"] = *t_eval_every;
      args = {{"model", gnp::to_json(gnp::model_from_json(gnp::read_json_file(t_model)))},
              {"task", gnp::to_json(gnp::task_from_json(gnp::read_json_file(t_task)))},
              {"train", gnp::to_json(gnp::train_config_from_json(cfg))},
              {"out", t_out},
              {"metrics", t_metrics}};
    } else if (*ev) {
      cmd = "eval";
      args = {{"ckpt", e_ckpt},
              {"corpus", e_corpus},
              {"model", gnp::to_json(model_for_checkpoint(e_ckpt, e_model))},
              {"oracle", e_oracle},
              {"out", e_out}};
    } else if (*sa) {
      cmd = "sample";
      args = query_args(s_q);
      args["n_samples"] = s_n;
      args["seed"] = s_seed;
      args["noiseless"] = s_noiseless;
    } else if (*cv) {
      cmd = "cov";
      args = query_args(c_q);
    } else if (*ep) {
      cmd = "event-prob";
      args = query_args(p_q);
      args["threshold"] = p_threshold;
      args["mode"] = p_mode;
      args["n_samples"] = p_n;
      args["seed"] = p_seed;
    } else if (*rp) {
      const int bad = replay(r_manifest, r_suffix, quiet);
      if (bad) std::cerr << "replay: " << bad << " output(s) differ\n";
      return bad ? 2 : 0;
    }
    const auto outcome = dispatch(cmd, args, quiet);
    write_manifest(cmd, args, outcome.inputs, outcome.outputs);
    return 0;
  } catch (const gnp::TrainingError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const gnp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
