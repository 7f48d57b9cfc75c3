#pragma once

// Experiment configuration. JSON in, fully defaulted struct out; any key the
// schema does not know is an error naming its full path, so typos never
// silently fall back to defaults. config_to_json re-emits the resolved
// config; parsing that echo yields the same resolved config.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "streamttt/frame.hpp"
#include "streamttt/joint_train.hpp"
#include "streamttt/streamgen.hpp"
#include "streamttt/neural_model.hpp"
#include "streamttt/quad_model.hpp"
#include "streamttt/theory.hpp"
#include "streamttt/ttt_loop.hpp"

namespace streamttt {

using json = nlohmann::json;

enum class RunMode {
  kOnline,
  kOfflineAllFrames,
  kFixed,
  kAblationSuite,
  kTheoremSweep,
  kLemmaCheck,
};

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::kOnline: return "online";
    case RunMode::kOfflineAllFrames: return "offline-all-frames";
    case RunMode::kFixed: return "fixed";
    case RunMode::kAblationSuite: return "ablation-suite";
    case RunMode::kTheoremSweep: return "theorem-sweep";
    case RunMode::kLemmaCheck: return "lemma-check";
  }
  throw std::logic_error("bad mode");
}

inline RunMode run_mode_from_string(const std::string& s) {
  if (s == "online") return RunMode::kOnline;
  if (s == "offline-all-frames") return RunMode::kOfflineAllFrames;
  if (s == "fixed") return RunMode::kFixed;
  if (s == "ablation-suite") return RunMode::kAblationSuite;
  if (s == "theorem-sweep") return RunMode::kTheoremSweep;
  if (s == "lemma-check") return RunMode::kLemmaCheck;
  throw std::invalid_argument("unknown mode: " + s);
}

struct QuadFamilyConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double sigma = 1.0;
  std::size_t dim = 8;

  QuadModelSpec spec() const { return make_quad_spec(alpha, beta, sigma, dim); }
};

struct ModelConfig {
  std::string family = "neural";  // "quad" or "neural"
  QuadFamilyConfig quad;
  NeuralModelSpec neural;
};

struct TrainSection {
  std::size_t stills = 64;  // independent training scenes to render
  // When set, these replace the stream's texture parameters for the stills.
  // Rendering the stills cleaner or darker than the stream is how a
  // train/test distribution shift is staged.
  std::optional<double> noise_amplitude;
  std::optional<double> background_min;
  std::optional<double> background_max;
  JointTrainConfig joint;
};

struct SweepSection {
  std::vector<std::size_t> k_grid{1, 2, 4, 8, 16, 32, 64, 128, 256};
  std::size_t trials = 500;
  // theorem-sweep instance shape; ignored for the video window study
  double alpha = 1.0;
  double beta = 1.0;
  double eta = 0.02;
  double sigma = 1.0;
  std::size_t dim = 8;
  std::size_t length = 512;

  TheoremInstance instance(std::uint64_t seed) const {
    TheoremInstance inst;
    inst.alpha = alpha;
    inst.beta = beta;
    inst.eta = eta;
    inst.sigma = sigma;
    inst.dim = dim;
    inst.length = length;
    inst.seed = seed;
    return inst;
  }
};

struct LemmaSection {
  std::size_t instances = 1000;
  std::size_t max_dim = 10;
  double alpha = 1.0;
};

struct AblateSection {
  std::size_t trials = 5;  // independent streams averaged per row
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  RunMode mode = RunMode::kOnline;
  std::string output_dir = "out";
  std::optional<StreamSpec> stream;
  ModelConfig model;
  TTTConfig ttt;
  TrainSection train;
  OfflineConfig offline;
  std::optional<SweepSection> sweep;
  LemmaSection lemma;
  AblateSection ablate;

  bool needs_stream() const {
    return mode == RunMode::kOnline || mode == RunMode::kOfflineAllFrames ||
           mode == RunMode::kFixed || mode == RunMode::kAblationSuite;
  }
};

namespace cfgdetail {

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
  throw std::invalid_argument("config: " + path + ": " + msg);
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

inline void check_keys(const json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) fail(join(path, it.key()), "unknown key");
  }
}

inline double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

inline std::uint64_t get_u64(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
    fail(path, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

inline std::size_t get_size(const json& j, const std::string& path) {
  return static_cast<std::size_t>(get_u64(j, path));
}

inline std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

template <typename T, typename Getter>
void read_opt(const json& j, const std::string& path, const char* key, T& out,
              Getter getter) {
  if (j.contains(key)) out = getter(j.at(key), join(path, key));
}

inline StreamSpec parse_stream(const json& j, const std::string& path,
                               std::uint64_t default_seed) {
  expect_object(j, path);
  check_keys(j, path,
             {"kind", "length", "dim", "height", "width", "eta", "seed",
              "regime_times", "regime_jump_scale", "background_min",
              "background_max", "noise_amplitude", "shape_radius"});
  StreamSpec s;
  s.seed = default_seed;
  if (!j.contains("kind")) fail(join(path, "kind"), "required key missing");
  s.kind = [&] {
    try {
      return stream_kind_from_string(get_string(j.at("kind"), join(path, "kind")));
    } catch (const std::invalid_argument& e) {
      fail(join(path, "kind"), e.what());
    }
  }();
  read_opt(j, path, "length", s.length, [](const json& v, const std::string& p) {
    return static_cast<std::int64_t>(get_u64(v, p));
  });
  read_opt(j, path, "dim", s.dim, get_size);
  read_opt(j, path, "height", s.height, get_size);
  read_opt(j, path, "width", s.width, get_size);
  read_opt(j, path, "eta", s.eta, get_number);
  read_opt(j, path, "seed", s.seed, get_u64);
  read_opt(j, path, "regime_jump_scale", s.regime_jump_scale, get_number);
  read_opt(j, path, "background_min", s.background_min, get_number);
  read_opt(j, path, "background_max", s.background_max, get_number);
  read_opt(j, path, "noise_amplitude", s.noise_amplitude, get_number);
  read_opt(j, path, "shape_radius", s.shape_radius,
           [](const json& v, const std::string& p) {
             return static_cast<int>(get_u64(v, p));
           });
  if (j.contains("regime_times")) {
    const json& arr = j.at("regime_times");
    if (!arr.is_array()) fail(join(path, "regime_times"), "expected an array");
    for (const json& v : arr)
      s.regime_times.push_back(
          static_cast<std::int64_t>(get_u64(v, join(path, "regime_times"))));
  }
  try {
    validate_stream_spec(s);
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  return s;
}

inline ModelConfig parse_model(const json& j, const std::string& path) {
  expect_object(j, path);
  ModelConfig m;
  if (!j.contains("family")) fail(join(path, "family"), "required key missing");
  m.family = get_string(j.at("family"), join(path, "family"));
  if (m.family == "quad") {
    check_keys(j, path, {"family", "alpha", "beta", "sigma", "dim"});
    read_opt(j, path, "alpha", m.quad.alpha, get_number);
    read_opt(j, path, "beta", m.quad.beta, get_number);
    read_opt(j, path, "sigma", m.quad.sigma, get_number);
    read_opt(j, path, "dim", m.quad.dim, get_size);
    try {
      m.quad.spec();
    } catch (const std::invalid_argument& e) {
      fail(path, e.what());
    }
  } else if (m.family == "neural") {
    check_keys(j, path, {"family", "height", "width", "patch_size",
                         "hidden_dim", "g_head_hidden", "h_head_hidden"});
    read_opt(j, path, "height", m.neural.height, get_size);
    read_opt(j, path, "width", m.neural.width, get_size);
    read_opt(j, path, "patch_size", m.neural.patch_size, get_size);
    read_opt(j, path, "hidden_dim", m.neural.hidden_dim, get_size);
    read_opt(j, path, "g_head_hidden", m.neural.g_head_hidden, get_size);
    read_opt(j, path, "h_head_hidden", m.neural.h_head_hidden, get_size);
    try {
      m.neural.validate();
    } catch (const std::invalid_argument& e) {
      fail(path, e.what());
    }
  } else {
    fail(join(path, "family"), "must be 'quad' or 'neural'");
  }
  return m;
}

inline void parse_self_train(const json& j, const std::string& path,
                             SelfTrainConfig& out) {
  expect_object(j, path);
  check_keys(j, path, {"confidence", "mask_ratio"});
  read_opt(j, path, "confidence", out.confidence, get_number);
  read_opt(j, path, "mask_ratio", out.mask_ratio, get_number);
  if (!(out.confidence >= 0.0 && out.confidence <= 1.0))
    fail(join(path, "confidence"), "must be in [0, 1]");
  if (!(out.mask_ratio >= 0.0 && out.mask_ratio <= 1.0))
    fail(join(path, "mask_ratio"), "must be in [0, 1]");
}

inline TTTConfig parse_ttt(const json& j, const std::string& path,
                           std::uint64_t default_seed, bool lr_present_out[1]) {
  expect_object(j, path);
  check_keys(j, path,
             {"window_size", "iters_per_frame", "batch_size", "lr",
              "init_policy", "objective", "mask_ratio", "self_train", "seed"});
  TTTConfig t;
  t.seed = default_seed;
  read_opt(j, path, "window_size", t.window_size, get_size);
  read_opt(j, path, "iters_per_frame", t.iters_per_frame, get_size);
  read_opt(j, path, "batch_size", t.batch_size, get_size);
  read_opt(j, path, "lr", t.lr, get_number);
  lr_present_out[0] = j.contains("lr");
  read_opt(j, path, "mask_ratio", t.mask_ratio, get_number);
  read_opt(j, path, "seed", t.seed, get_u64);
  if (j.contains("init_policy")) {
    try {
      t.init_policy = init_policy_from_string(
          get_string(j.at("init_policy"), join(path, "init_policy")));
    } catch (const std::invalid_argument& e) {
      fail(join(path, "init_policy"), e.what());
    }
  }
  if (j.contains("objective")) {
    try {
      t.objective = inner_objective_from_string(
          get_string(j.at("objective"), join(path, "objective")));
    } catch (const std::invalid_argument& e) {
      fail(join(path, "objective"), e.what());
    }
  }
  if (j.contains("self_train"))
    parse_self_train(j.at("self_train"), join(path, "self_train"), t.self_train);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  return t;
}

inline TrainSection parse_train(const json& j, const std::string& path,
                                std::uint64_t default_seed) {
  expect_object(j, path);
  check_keys(j, path, {"stills", "noise_amplitude", "background_min",
                       "background_max", "epochs", "batch_size", "lr",
                       "main_weight", "ssl_weight", "mask_ratio", "seed"});
  TrainSection t;
  t.joint.seed = default_seed;
  read_opt(j, path, "stills", t.stills, get_size);
  if (j.contains("noise_amplitude")) {
    const double amp =
        get_number(j.at("noise_amplitude"), join(path, "noise_amplitude"));
    if (amp < 0.0) fail(join(path, "noise_amplitude"), "must be >= 0");
    t.noise_amplitude = amp;
  }
  if (j.contains("background_min"))
    t.background_min =
        get_number(j.at("background_min"), join(path, "background_min"));
  if (j.contains("background_max"))
    t.background_max =
        get_number(j.at("background_max"), join(path, "background_max"));
  read_opt(j, path, "epochs", t.joint.epochs, get_size);
  read_opt(j, path, "batch_size", t.joint.batch_size, get_size);
  read_opt(j, path, "lr", t.joint.lr, get_number);
  read_opt(j, path, "main_weight", t.joint.main_weight, get_number);
  read_opt(j, path, "ssl_weight", t.joint.ssl_weight, get_number);
  read_opt(j, path, "mask_ratio", t.joint.mask_ratio, get_number);
  read_opt(j, path, "seed", t.joint.seed, get_u64);
  if (t.stills == 0) fail(join(path, "stills"), "must be positive");
  try {
    t.joint.validate();
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  return t;
}

inline OfflineConfig parse_offline(const json& j, const std::string& path,
                                   std::uint64_t default_seed) {
  expect_object(j, path);
  check_keys(j, path, {"iterations", "eval_every", "batch_size", "lr",
                       "mask_ratio", "seed"});
  OfflineConfig o;
  o.seed = default_seed;
  read_opt(j, path, "iterations", o.iterations, get_size);
  read_opt(j, path, "eval_every", o.eval_every, get_size);
  read_opt(j, path, "batch_size", o.batch_size, get_size);
  read_opt(j, path, "lr", o.lr, get_number);
  read_opt(j, path, "mask_ratio", o.mask_ratio, get_number);
  read_opt(j, path, "seed", o.seed, get_u64);
  try {
    o.validate();
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  return o;
}

inline SweepSection parse_sweep(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path, {"k_grid", "trials", "alpha", "beta", "eta", "sigma",
                       "dim", "length"});
  SweepSection s;
  if (j.contains("k_grid")) {
    const json& arr = j.at("k_grid");
    if (!arr.is_array() || arr.empty())
      fail(join(path, "k_grid"), "expected a non-empty array");
    s.k_grid.clear();
    for (const json& v : arr) {
      const std::size_t k = get_size(v, join(path, "k_grid"));
      if (k < 1) fail(join(path, "k_grid"), "entries must be >= 1");
      s.k_grid.push_back(k);
    }
  }
  read_opt(j, path, "trials", s.trials, get_size);
  read_opt(j, path, "alpha", s.alpha, get_number);
  read_opt(j, path, "beta", s.beta, get_number);
  read_opt(j, path, "eta", s.eta, get_number);
  read_opt(j, path, "sigma", s.sigma, get_number);
  read_opt(j, path, "dim", s.dim, get_size);
  read_opt(j, path, "length", s.length, get_size);
  if (s.trials < 1) fail(join(path, "trials"), "must be >= 1");
  if (!(s.alpha > 0.0)) fail(join(path, "alpha"), "must be positive");
  return s;
}

inline LemmaSection parse_lemma(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path, {"instances", "max_dim", "alpha"});
  LemmaSection l;
  read_opt(j, path, "instances", l.instances, get_size);
  read_opt(j, path, "max_dim", l.max_dim, get_size);
  read_opt(j, path, "alpha", l.alpha, get_number);
  if (l.instances < 1) fail(join(path, "instances"), "must be >= 1");
  if (l.max_dim < 1) fail(join(path, "max_dim"), "must be >= 1");
  if (!(l.alpha > 0.0)) fail(join(path, "alpha"), "must be positive");
  return l;
}

inline AblateSection parse_ablate(const json& j, const std::string& path) {
  expect_object(j, path);
  check_keys(j, path, {"trials"});
  AblateSection a;
  read_opt(j, path, "trials", a.trials, get_size);
  if (a.trials < 1) fail(join(path, "trials"), "must be >= 1");
  return a;
}

}  // namespace cfgdetail

// external_stream: a stream file will be supplied at run time, so the stream
// section may be absent and stream/model compatibility is checked later.
inline ExperimentConfig parse_config_json(const json& root,
                                          bool external_stream = false) {
  using namespace cfgdetail;
  expect_object(root, "");
  check_keys(root, "",
             {"seed", "mode", "output_dir", "stream", "model", "ttt", "train",
              "offline", "sweep", "lemma", "ablate"});

  ExperimentConfig cfg;
  read_opt(root, "", "seed", cfg.seed, get_u64);
  if (!root.contains("mode")) fail("mode", "required key missing");
  try {
    cfg.mode = run_mode_from_string(get_string(root.at("mode"), "mode"));
  } catch (const std::invalid_argument& e) {
    if (std::string(e.what()).rfind("config:", 0) == 0) throw;
    fail("mode", e.what());
  }
  read_opt(root, "", "output_dir", cfg.output_dir, get_string);

  if (root.contains("model")) cfg.model = parse_model(root.at("model"), "model");
  const bool neural = cfg.model.family == "neural";

  bool lr_given[1] = {false};
  if (root.contains("ttt"))
    cfg.ttt = parse_ttt(root.at("ttt"), "ttt", cfg.seed, lr_given);
  else
    cfg.ttt.seed = cfg.seed;
  // family-specific step size unless the config pins one
  if (!lr_given[0]) cfg.ttt.lr = neural ? 0.01 : 0.05;

  cfg.train = root.contains("train")
                  ? parse_train(root.at("train"), "train", cfg.seed)
                  : [&] {
                      TrainSection t;
                      t.joint.seed = cfg.seed;
                      return t;
                    }();
  cfg.offline = root.contains("offline")
                    ? parse_offline(root.at("offline"), "offline", cfg.seed)
                    : [&] {
                        OfflineConfig o;
                        o.seed = cfg.seed;
                        return o;
                      }();
  if (root.contains("sweep")) cfg.sweep = parse_sweep(root.at("sweep"), "sweep");
  if (root.contains("lemma")) cfg.lemma = parse_lemma(root.at("lemma"), "lemma");
  if (root.contains("ablate"))
    cfg.ablate = parse_ablate(root.at("ablate"), "ablate");

  if (root.contains("stream"))
    cfg.stream = parse_stream(root.at("stream"), "stream", cfg.seed);

  if (cfg.needs_stream() && !cfg.stream.has_value() && !external_stream)
    fail("stream", "required for mode '" + to_string(cfg.mode) + "'");
  if (cfg.mode == RunMode::kTheoremSweep) {
    if (!cfg.sweep.has_value())
      fail("sweep", "required for mode 'theorem-sweep'");
    if (cfg.model.family != "quad" && root.contains("model"))
      fail("model.family", "theorem-sweep runs the quadratic family");
    cfg.model.family = "quad";  // keeps the echo reparseable
  }
  if (cfg.needs_stream()) {
    if (cfg.mode == RunMode::kOfflineAllFrames && !neural)
      fail("mode", "offline-all-frames needs the neural family");
    if (cfg.mode == RunMode::kAblationSuite && !neural)
      fail("mode", "ablation-suite needs the neural family");
    if (!neural && cfg.ttt.objective != InnerObjective::kMaskedRecon)
      fail("ttt.objective", "entropy and self-train need the neural family");
    if (cfg.stream.has_value()) {
      const bool video = cfg.stream->is_video();
      if (neural != video)
        fail("model.family",
             video ? "shape-video streams need the neural family"
                   : "latent streams need the quad family");
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text,
                                     bool external_stream = false) {
  json root = json::parse(text, nullptr, false);
  if (root.is_discarded())
    throw std::invalid_argument("config: not valid JSON");
  return parse_config_json(root, external_stream);
}

inline json stream_to_json(const StreamSpec& s) {
  json j{{"kind", to_string(s.kind)},
         {"length", s.length},
         {"eta", s.eta},
         {"seed", s.seed}};
  if (s.is_video()) {
    j["height"] = s.height;
    j["width"] = s.width;
    j["regime_jump_scale"] = s.regime_jump_scale;
    j["background_min"] = s.background_min;
    j["background_max"] = s.background_max;
    j["noise_amplitude"] = s.noise_amplitude;
    j["shape_radius"] = s.shape_radius;
  } else {
    j["dim"] = s.dim;
  }
  if (!s.regime_times.empty()) j["regime_times"] = s.regime_times;
  return j;
}

// Canonical echo with every default resolved.
inline json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["mode"] = to_string(cfg.mode);
  j["output_dir"] = cfg.output_dir;
  if (cfg.stream) j["stream"] = stream_to_json(*cfg.stream);

  json model{{"family", cfg.model.family}};
  if (cfg.model.family == "quad") {
    model["alpha"] = cfg.model.quad.alpha;
    model["beta"] = cfg.model.quad.beta;
    model["sigma"] = cfg.model.quad.sigma;
    model["dim"] = cfg.model.quad.dim;
  } else {
    model["height"] = cfg.model.neural.height;
    model["width"] = cfg.model.neural.width;
    model["patch_size"] = cfg.model.neural.patch_size;
    model["hidden_dim"] = cfg.model.neural.hidden_dim;
    model["g_head_hidden"] = cfg.model.neural.g_head_hidden;
    model["h_head_hidden"] = cfg.model.neural.h_head_hidden;
  }
  j["model"] = model;

  j["ttt"] = json{{"window_size", cfg.ttt.window_size},
                  {"iters_per_frame", cfg.ttt.iters_per_frame},
                  {"batch_size", cfg.ttt.batch_size},
                  {"lr", cfg.ttt.lr},
                  {"init_policy", to_string(cfg.ttt.init_policy)},
                  {"objective", to_string(cfg.ttt.objective)},
                  {"mask_ratio", cfg.ttt.mask_ratio},
                  {"self_train", json{{"confidence", cfg.ttt.self_train.confidence},
                                      {"mask_ratio", cfg.ttt.self_train.mask_ratio}}},
                  {"seed", cfg.ttt.seed}};
  json train{{"stills", cfg.train.stills},
             {"epochs", cfg.train.joint.epochs},
             {"batch_size", cfg.train.joint.batch_size},
             {"lr", cfg.train.joint.lr},
             {"main_weight", cfg.train.joint.main_weight},
             {"ssl_weight", cfg.train.joint.ssl_weight},
             {"mask_ratio", cfg.train.joint.mask_ratio},
             {"seed", cfg.train.joint.seed}};
  if (cfg.train.noise_amplitude)
    train["noise_amplitude"] = *cfg.train.noise_amplitude;
  if (cfg.train.background_min)
    train["background_min"] = *cfg.train.background_min;
  if (cfg.train.background_max)
    train["background_max"] = *cfg.train.background_max;
  j["train"] = train;
  j["offline"] = json{{"iterations", cfg.offline.iterations},
                      {"eval_every", cfg.offline.eval_every},
                      {"batch_size", cfg.offline.batch_size},
                      {"lr", cfg.offline.lr},
                      {"mask_ratio", cfg.offline.mask_ratio},
                      {"seed", cfg.offline.seed}};
  if (cfg.sweep) {
    j["sweep"] = json{{"k_grid", cfg.sweep->k_grid},
                      {"trials", cfg.sweep->trials},
                      {"alpha", cfg.sweep->alpha},
                      {"beta", cfg.sweep->beta},
                      {"eta", cfg.sweep->eta},
                      {"sigma", cfg.sweep->sigma},
                      {"dim", cfg.sweep->dim},
                      {"length", cfg.sweep->length}};
  }
  j["lemma"] = json{{"instances", cfg.lemma.instances},
                    {"max_dim", cfg.lemma.max_dim},
                    {"alpha", cfg.lemma.alpha}};
  j["ablate"] = json{{"trials", cfg.ablate.trials}};
  return j;
}

}  // namespace streamttt
