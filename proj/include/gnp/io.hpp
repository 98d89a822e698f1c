#pragma once

// JSON configs, JSONL corpora and CSV exports.
//
// Config readers are strict: a key the reader does not know is an error, so a
// typo never silently falls back to a default.

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnp/checkpoint.hpp"
#include "gnp/eval.hpp"
#include "gnp/model_spec.hpp"
#include "gnp/tasks.hpp"
#include "gnp/trainer.hpp"

namespace gnp {

using json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

/// Reads fields out of a JSON object and remembers which keys were used.
class StrictObject {
 public:
  StrictObject(const json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) throw ConfigError(what_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(what_ + ": bad value for '" + key + "': " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError(what_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string what_;
  std::set<std::string> used_;
};

}  // namespace detail

// ---- kernel / task ---------------------------------------------------------

inline KernelSpec kernel_preset(KernelKind k) {
  switch (k) {
    case KernelKind::EQ: return KernelSpec::eq();
    case KernelKind::Matern52: return KernelSpec::matern52();
    case KernelKind::NoisyMixture: return KernelSpec::noisy_mixture();
    case KernelKind::WeaklyPeriodic: return KernelSpec::weakly_periodic();
  }
  return KernelSpec::eq();
}

inline json to_json(const KernelSpec& k) {
  json j{{"kind", to_string(k.kind)}, {"variance", k.variance}, {"lengthscale", k.lengthscale}};
  if (k.kind == KernelKind::NoisyMixture) {
    j["variance2"] = k.variance2;
    j["lengthscale2"] = k.lengthscale2;
  }
  if (k.kind == KernelKind::WeaklyPeriodic) {
    j["period"] = k.period;
    j["periodic_lengthscale"] = k.periodic_lengthscale;
  }
  return j;
}

/// Either a preset name ("eq") or an object whose "kind" selects the preset
/// the remaining keys override.
inline KernelSpec kernel_from_json(const json& j) {
  if (j.is_string()) return kernel_preset(kernel_kind_from_string(j.get<std::string>()));
  detail::StrictObject o(j, "kernel");
  std::string kind;
  o.get("kind", kind);
  if (kind.empty()) throw ConfigError("kernel: missing 'kind'");
  KernelSpec k = kernel_preset(kernel_kind_from_string(kind));
  o.get("variance", k.variance);
  o.get("lengthscale", k.lengthscale);
  if (k.kind == KernelKind::NoisyMixture) {
    o.get("variance2", k.variance2);
    o.get("lengthscale2", k.lengthscale2);
  }
  if (k.kind == KernelKind::WeaklyPeriodic) {
    o.get("period", k.period);
    o.get("periodic_lengthscale", k.periodic_lengthscale);
  }
  o.finish();
  k.validate();
  return k;
}

inline json to_json(const TaskSpec& t) {
  return {{"kernel", to_json(t.kernel)},         {"noise_var", t.noise_var},
          {"n_context_min", t.n_context_min},    {"n_context_max", t.n_context_max},
          {"n_target", t.n_target},              {"x_lo", t.x_lo},
          {"x_hi", t.x_hi},                      {"seed", t.seed}};
}

inline TaskSpec task_from_json(const json& j) {
  detail::StrictObject o(j, "task");
  TaskSpec t;
  if (o.has("kernel")) t.kernel = kernel_from_json(o.at("kernel"));
  o.get("noise_var", t.noise_var);
  o.get("n_context_min", t.n_context_min);
  o.get("n_context_max", t.n_context_max);
  o.get("n_target", t.n_target);
  o.get("x_lo", t.x_lo);
  o.get("x_hi", t.x_hi);
  o.get("seed", t.seed);
  o.finish();
  t.validate();
  return t;
}

// ---- model -----------------------------------------------------------------

inline json to_json(const ModelSpec& s) {
  return {{"encoder", to_string(s.encoder)},
          {"head", to_string(s.head)},
          {"width", s.width},
          {"mlp_layers", s.mlp_layers},
          {"rep_dim", s.rep_dim},
          {"attention_heads", s.attention_heads},
          {"attention_dim", s.attention_dim},
          {"attention_global", s.attention_global},
          {"conv_lengthscale", s.conv_lengthscale},
          {"conv_channels", s.conv_channels},
          {"conv_layers", s.conv_layers},
          {"conv_kernel", s.conv_kernel},
          {"grid_density", s.grid_density},
          {"density_eps", s.density_eps},
          {"d_g", s.basis_dim()},
          {"noise_init", s.noise_init}};
}

inline ModelSpec model_from_json(const json& j) {
  detail::StrictObject o(j, "model");
  ModelSpec s;
  std::string enc = to_string(s.encoder), head = to_string(s.head);
  o.get("encoder", enc);
  o.get("head", head);
  try {
    s.encoder = encoder_kind_from_string(enc);
    s.head = head_kind_from_string(head);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  o.get("width", s.width);
  o.get("mlp_layers", s.mlp_layers);
  o.get("rep_dim", s.rep_dim);
  o.get("attention_heads", s.attention_heads);
  o.get("attention_dim", s.attention_dim);
  o.get("attention_global", s.attention_global);
  o.get("conv_lengthscale", s.conv_lengthscale);
  o.get("conv_channels", s.conv_channels);
  o.get("conv_layers", s.conv_layers);
  o.get("conv_kernel", s.conv_kernel);
  o.get("grid_density", s.grid_density);
  o.get("density_eps", s.density_eps);
  o.get("d_g", s.d_g);
  o.get("noise_init", s.noise_init);
  o.finish();
  s.validate();
  return s;
}

// ---- training --------------------------------------------------------------

inline json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"iters_per_epoch", c.iters_per_epoch},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"adam_betas", {c.beta1, c.beta2}},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"init_seed", c.init_seed},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"grad_clip", c.grad_clip}};
}

/// Optional "preset": "full" | "desk" chooses the base values.
inline TrainConfig train_config_from_json(const json& j) {
  detail::StrictObject o(j, "train");
  std::string preset = "desk";
  o.get("preset", preset);
  TrainConfig c;
  if (preset == "full") {
    c = TrainConfig::full_scale();
  } else if (preset != "desk") {
    throw ConfigError("train: unknown preset '" + preset + "'");
  }
  o.get("epochs", c.epochs);
  o.get("iters_per_epoch", c.iters_per_epoch);
  o.get("batch_size", c.batch_size);
  o.get("learning_rate", c.learning_rate);
  if (o.has("adam_betas")) {
    const auto& b = o.at("adam_betas");
    if (!b.is_array() || b.size() != 2) throw ConfigError("train: adam_betas must be [b1, b2]");
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  }
  o.get("adam_eps", c.adam_eps);
  o.get("seed", c.seed);
  o.get("init_seed", c.init_seed);
  o.get("eval_every", c.eval_every);
  o.get("eval_episodes", c.eval_episodes);
  o.get("grad_clip", c.grad_clip);
  o.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// ---- files -----------------------------------------------------------------

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---- corpus ----------------------------------------------------------------
//
// Line 1: {"format":"gnp-corpus","version":1,"task":{...},"seed":S,"count":N}
// Line 2+: {"index":i,"x_c":[...],"y_c":[...],"x_t":[...],"y_t":[...]}

struct Corpus {
  TaskSpec task;
  std::uint64_t seed = 0;
  std::vector<Dataset> episodes;
};

inline json to_json(const Dataset& d) {
  return {{"x_c", d.x_c}, {"y_c", d.y_c}, {"x_t", d.x_t}, {"y_t", d.y_t}};
}

inline std::string corpus_to_jsonl(const Corpus& c) {
  std::string out = json{{"format", "gnp-corpus"},
                         {"version", 1},
                         {"task", to_json(c.task)},
                         {"seed", c.seed},
                         {"count", c.episodes.size()}}
                        .dump();
  out += '\n';
  for (std::size_t i = 0; i < c.episodes.size(); ++i) {
    json line = to_json(c.episodes[i]);
    line["index"] = i;
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline Corpus corpus_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("corpus: empty file");
  Corpus c;
  std::size_t count = 0;
  try {
    const json head = json::parse(line);
    if (head.value("format", "") != "gnp-corpus") throw FormatError("corpus: bad header");
    if (head.value("version", 0) != 1) throw FormatError("corpus: unsupported version");
    c.task = task_from_json(head.at("task"));
    c.seed = head.at("seed").get<std::uint64_t>();
    count = head.at("count").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      Dataset d{j.at("x_c").get<std::vector<double>>(), j.at("y_c").get<std::vector<double>>(),
                j.at("x_t").get<std::vector<double>>(), j.at("y_t").get<std::vector<double>>()};
      if (d.x_c.size() != d.y_c.size() || d.x_t.size() != d.y_t.size()) {
        throw FormatError("corpus: episode " + std::to_string(c.episodes.size()) +
                          " has mismatched lengths");
      }
      c.episodes.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("corpus: ") + e.what());
  }
  if (c.episodes.size() != count) throw FormatError("corpus: header count does not match episodes");
  return c;
}

// ---- CSV / summaries -------------------------------------------------------

/// `rows x cols` matrix as CSV, preceded by `# {"x_grid": [...]}`.
inline std::string matrix_csv(std::span<const double> x_grid, std::span<const double> values,
                              std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw std::invalid_argument("matrix_csv: size mismatch");
  std::ostringstream os;
  os << "# " << json{{"x_grid", std::vector<double>(x_grid.begin(), x_grid.end())}}.dump() << '\n';
  os << std::setprecision(17);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << values[r * cols + c];
    os << '\n';
  }
  return os.str();
}

inline json to_json(const CorpusScore& s) {
  return {{"mean_joint", s.mean_joint},
          {"se_joint", s.se_joint},
          {"mean_per_point", s.mean_per_point},
          {"se_per_point", s.se_per_point},
          {"episodes", s.episodes}};
}

inline json to_json(const EvalSummary& s) {
  json rows = json::array();
  json m = to_json(s.model);
  m["name"] = "model";
  rows.push_back(m);
  if (s.oracle) {
    json o = to_json(*s.oracle);
    o["name"] = "oracle";
    rows.push_back(o);
  }
  if (s.diagonal_oracle) {
    json o = to_json(*s.diagonal_oracle);
    o["name"] = "diagonal_oracle";
    rows.push_back(o);
  }
  return {{"rows", rows}};
}

inline json to_json(const EventProbability& p) {
  json j{{"probability", p.probability},
         {"standard_error", p.standard_error},
         {"n_samples", p.n_samples}};
  if (p.independent_product) j["independent_product"] = *p.independent_product;
  return j;
}

/// Parses "lo:hi:n" into n evenly spaced points including both ends.
inline std::vector<double> parse_grid(const std::string& s) {
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? a : s.find(':', a + 1);
  if (b == std::string::npos) throw ConfigError("grid must be lo:hi:n, got '" + s + "'");
  double lo = 0.0, hi = 0.0;
  long n = 0;
  try {
    lo = std::stod(s.substr(0, a));
    hi = std::stod(s.substr(a + 1, b - a - 1));
    n = std::stol(s.substr(b + 1));
  } catch (const std::exception&) {
    throw ConfigError("grid must be lo:hi:n, got '" + s + "'");
  }
  if (n < 1 || !(lo <= hi)) throw ConfigError("grid needs n >= 1 and lo <= hi");
  std::vector<double> g(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    g[static_cast<std::size_t>(i)] =
        n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return g;
}

}  // namespace gnp
