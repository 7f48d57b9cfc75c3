#pragma once

// Experiment execution: dispatch a parsed config, write the result files,
// assemble the summary. Every CSV is a deterministic function of the config
// and is independent of the worker count; wall time appears only in the
// summary JSON.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamttt/ablation.hpp"
#include "streamttt/checkpoint.hpp"
#include "streamttt/config.hpp"
#include "streamttt/csvfmt.hpp"
#include "streamttt/executor.hpp"
#include "streamttt/streamgen.hpp"
#include "streamttt/theory.hpp"
#include "streamttt/ttt_loop.hpp"

namespace streamttt {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr std::uint64_t kSaltLemmaInstance = 0x71;

struct ExecuteOptions {
  std::size_t jobs = 1;
  std::optional<std::string> stream_file;      // ingest instead of generating
  std::optional<std::string> init_checkpoint;  // load instead of training
};

struct ReportBundle {
  std::filesystem::path output_dir;
  json summary;
  std::vector<std::string> files;  // relative to output_dir
  bool valid = true;
};

namespace rundetail {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample standard error, zero for a single value
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / n;
  if (xs.size() > 1) {
    double var = 0.0;
    for (double x : xs) var += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(var / (n - 1.0) / n);
  }
  return out;
}

inline void emit_file(ReportBundle& bundle, const std::string& name,
                      const std::string& content) {
  std::ofstream os(bundle.output_dir / name, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + name);
  os << content;
  bundle.files.push_back(name);
}

struct StreamInput {
  StreamSpec spec;
  std::vector<LabeledFrame> frames;
};

inline StreamInput acquire_stream(const ExperimentConfig& cfg,
                                  const ExecuteOptions& opts) {
  if (opts.stream_file) {
    std::ifstream in(*opts.stream_file);
    if (!in)
      throw std::invalid_argument("cannot open stream file: " +
                                  *opts.stream_file);
    StreamInput si;
    si.frames = read_stream(in, &si.spec);
    return si;
  }
  if (!cfg.stream)
    throw std::invalid_argument(
        "config: stream: required unless --stream-file is given");
  return {*cfg.stream, gen_stream(*cfg.stream)};
}

inline void check_family_matches(const ExperimentConfig& cfg,
                                 const StreamSpec& spec) {
  const bool neural = cfg.model.family == "neural";
  if (neural != spec.is_video())
    throw std::invalid_argument(
        spec.is_video() ? "shape-video streams need the neural family"
                        : "latent streams need the quad family");
  if (neural) {
    if (spec.height != cfg.model.neural.height ||
        spec.width != cfg.model.neural.width)
      throw std::invalid_argument("stream frame size does not match the model");
  } else if (spec.dim != cfg.model.quad.dim) {
    throw std::invalid_argument("stream dim does not match the model");
  }
}

// Jointly trained starting point shared by every run in the bundle. Loading a
// checkpoint skips training; a fresh train emits checkpoint.txt.
inline ModelState neural_start_state(const ExperimentConfig& cfg,
                                     const StreamSpec& stream_spec,
                                     const ExecuteOptions& opts,
                                     ReportBundle& bundle) {
  if (opts.init_checkpoint) {
    std::ifstream in(*opts.init_checkpoint);
    if (!in)
      throw std::invalid_argument("cannot open checkpoint: " +
                                  *opts.init_checkpoint);
    Checkpoint ck = read_checkpoint(in);
    if (ck.family != "neural")
      throw std::invalid_argument("checkpoint family '" + ck.family +
                                  "' does not match the neural model");
    if (neural_spec_to_json(cfg.model.neural) != ck.spec)
      throw std::invalid_argument(
          "checkpoint spec does not match the configured model");
    bundle.summary["init"] = json{{"source", "checkpoint"},
                                  {"path", *opts.init_checkpoint},
                                  {"checksum", frozen_checksum(ck.state)}};
    return ck.state;
  }
  StreamSpec still_spec = stream_spec;
  if (cfg.train.noise_amplitude)
    still_spec.noise_amplitude = *cfg.train.noise_amplitude;
  if (cfg.train.background_min)
    still_spec.background_min = *cfg.train.background_min;
  if (cfg.train.background_max)
    still_spec.background_max = *cfg.train.background_max;
  std::vector<LabeledFrame> stills =
      gen_training_stills(still_spec, cfg.train.stills, cfg.train.joint.seed);
  JointTrainResult res = joint_train(cfg.model.neural, stills, cfg.train.joint);
  std::ostringstream ck;
  write_checkpoint(ck, "neural", neural_spec_to_json(cfg.model.neural),
                   res.state);
  emit_file(bundle, "checkpoint.txt", ck.str());
  bundle.summary["init"] =
      json{{"source", "joint-train"},
           {"stills", cfg.train.stills},
           {"epochs", cfg.train.joint.epochs},
           {"final_objective", res.epoch_objective.empty()
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : res.epoch_objective.back()},
           {"checksum", frozen_checksum(res.state)}};
  return res.state;
}

inline ModelState quad_start_state(const ExperimentConfig& cfg,
                                   const ExecuteOptions& opts) {
  const QuadModelSpec spec = cfg.model.quad.spec();
  if (opts.init_checkpoint) {
    std::ifstream in(*opts.init_checkpoint);
    if (!in)
      throw std::invalid_argument("cannot open checkpoint: " +
                                  *opts.init_checkpoint);
    Checkpoint ck = read_checkpoint(in);
    if (ck.family != "quad")
      throw std::invalid_argument("checkpoint family '" + ck.family +
                                  "' does not match the quad model");
    if (ck.state.f_params.size() != spec.dim)
      throw std::invalid_argument(
          "checkpoint dim does not match the configured model");
    return ck.state;
  }
  return make_quad_state(spec, Vec(spec.dim, 0.0));
}

inline NeuralRunner make_neural_runner(const ExperimentConfig& cfg,
                                       const ModelState& state) {
  NeuralRunner runner(cfg.model.neural, state);
  runner.objective = cfg.ttt.objective;
  runner.mask_ratio = cfg.ttt.mask_ratio;
  runner.self_train = cfg.ttt.self_train;
  return runner;
}

inline std::string trace_csv(const RunTrace& trace) {
  std::ostringstream os;
  os << "t,main_loss,ssl_loss,pred_error,params_drift\n";
  for (const FrameRecord& r : trace.records)
    os << r.t << ',' << format_g17(r.main_loss) << ',' << format_g17(r.ssl_loss)
       << ',' << format_g17(r.pred_error) << ',' << format_g17(r.params_drift)
       << '\n';
  return os.str();
}

inline void run_stream_mode(const ExperimentConfig& cfg0,
                            const ExecuteOptions& opts, ReportBundle& bundle) {
  ExperimentConfig cfg = cfg0;
  if (cfg.mode == RunMode::kFixed) cfg.ttt.iters_per_frame = 0;
  StreamInput in = acquire_stream(cfg, opts);
  check_family_matches(cfg, in.spec);

  RunTrace trace;
  if (cfg.model.family == "neural") {
    ModelState state = neural_start_state(cfg, in.spec, opts, bundle);
    NeuralRunner runner = make_neural_runner(cfg, state);
    trace = run_stream(runner, in.frames, cfg.ttt);
  } else {
    ModelState state = quad_start_state(cfg, opts);
    // delta noise is keyed by the stream seed, matching the generator
    QuadRunner runner(cfg.model.quad.spec(), state, in.spec.seed);
    trace = run_stream(runner, in.frames, cfg.ttt);
  }

  emit_file(bundle, "trace.csv", trace_csv(trace));
  bundle.valid = trace.valid;
  bundle.summary["mean_main_loss"] = trace.mean_main_loss();
  bundle.summary["mean_pred_error"] = trace.mean_pred_error();
  bundle.summary["final_drift"] = trace.final_drift();
  bundle.summary["frames"] = trace.records.size();
  if (!trace.iou.empty()) bundle.summary["mean_iou"] = trace.mean_iou();
  if (!trace.valid) bundle.summary["abort_reason"] = trace.abort_reason;
}

inline void run_offline_mode(const ExperimentConfig& cfg,
                             const ExecuteOptions& opts, ReportBundle& bundle) {
  StreamInput in = acquire_stream(cfg, opts);
  check_family_matches(cfg, in.spec);
  ModelState state = neural_start_state(cfg, in.spec, opts, bundle);
  OfflineResult res =
      run_offline_all_frames(cfg.model.neural, in.frames, state, cfg.offline);

  std::ostringstream os;
  os << "iteration,mean_main_loss,mean_pred_error,mean_iou\n";
  for (const OfflineEvalPoint& e : res.evals)
    os << e.iteration << ',' << format_g17(e.mean_main_loss) << ','
       << format_g17(e.mean_pred_error) << ',' << format_g17(e.mean_iou)
       << '\n';
  emit_file(bundle, "offline_evals.csv", os.str());

  bundle.valid = res.valid;
  bundle.summary["best_iteration"] = res.best_iteration;
  bundle.summary["mean_main_loss"] = res.best.mean_main_loss;
  bundle.summary["mean_pred_error"] = res.best.mean_pred_error;
  bundle.summary["mean_iou"] = res.best.mean_iou;
  if (!res.valid) bundle.summary["abort_reason"] = res.abort_reason;
}

inline std::string ablation_rows_csv(
    const std::vector<std::vector<AblationRow>>& suite) {
  std::ostringstream os;
  os << "trial,name,window_size,init_policy,iters_per_frame,shuffled,offline,"
        "valid,mean_main_loss,mean_pred_error,mean_iou,final_drift,"
        "best_iteration,init_checksum\n";
  for (std::size_t trial = 0; trial < suite.size(); ++trial)
    for (const AblationRow& r : suite[trial])
      os << trial << ',' << r.name << ',' << r.window_size << ','
         << to_string(r.init_policy) << ',' << r.iters_per_frame << ','
         << (r.shuffled ? 1 : 0) << ',' << (r.offline ? 1 : 0) << ','
         << (r.valid ? 1 : 0) << ',' << format_g17(r.mean_main_loss) << ','
         << format_g17(r.mean_pred_error) << ',' << format_g17(r.mean_iou)
         << ',' << format_g17(r.final_drift) << ',' << r.best_iteration << ','
         << r.init_checksum << '\n';
  return os.str();
}

inline void run_ablation_mode(const ExperimentConfig& cfg,
                              const ExecuteOptions& opts,
                              ReportBundle& bundle) {
  if (opts.stream_file && cfg.ablate.trials != 1)
    throw std::invalid_argument(
        "--stream-file supplies a single stream; set ablate.trials to 1");
  if (!cfg.stream && !opts.stream_file)
    throw std::invalid_argument("config: stream: required for ablation-suite");

  const std::size_t trials = cfg.ablate.trials;
  std::vector<std::vector<LabeledFrame>> streams(trials);
  StreamSpec base_spec;
  if (opts.stream_file) {
    StreamInput in = acquire_stream(cfg, opts);
    base_spec = in.spec;
    streams[0] = std::move(in.frames);
  } else {
    base_spec = *cfg.stream;
    for (std::size_t i = 0; i < trials; ++i) {
      StreamSpec s = base_spec;
      s.seed = base_spec.seed + i;
      streams[i] = gen_stream(s);
    }
  }
  check_family_matches(cfg, base_spec);
  const ModelState trained = neural_start_state(cfg, base_spec, opts, bundle);

  const std::vector<std::size_t> k_grid =
      cfg.sweep ? cfg.sweep->k_grid : std::vector<std::size_t>{};
  std::vector<std::vector<AblationRow>> suite(trials);
  // kcurve cell (ki, trial)
  std::vector<RunTrace> kcurve(k_grid.size() * trials);
  const std::size_t per_trial = 1 + k_grid.size();
  parallel_for(trials * per_trial, opts.jobs, [&](std::size_t task) {
    const std::size_t trial = task / per_trial;
    const std::size_t slot = task % per_trial;
    if (slot == 0) {
      suite[trial] = run_ablation_suite(cfg.model.neural, streams[trial],
                                        trained, cfg.ttt, cfg.offline, 1);
    } else {
      TTTConfig t = cfg.ttt;
      t.window_size = k_grid[slot - 1];
      t.init_policy = InitPolicy::kCarryOver;
      NeuralRunner runner = make_neural_runner(cfg, trained);
      kcurve[(slot - 1) * trials + trial] =
          run_stream(runner, streams[trial], t);
    }
  });

  emit_file(bundle, "ablation.csv", ablation_rows_csv(suite));

  bool all_valid = true;
  json rows = json::array();
  std::ostringstream agg;
  agg << "name,trials,mean_pred_error,pred_error_stderr,mean_main_loss,"
         "main_loss_stderr,mean_iou,iou_stderr,mean_final_drift\n";
  for (std::size_t r = 0; r < suite[0].size(); ++r) {
    std::vector<double> err, loss, iou, drift;
    json per_trial_json = json::array();
    for (std::size_t trial = 0; trial < trials; ++trial) {
      const AblationRow& row = suite[trial][r];
      all_valid = all_valid && row.valid;
      err.push_back(row.mean_pred_error);
      loss.push_back(row.mean_main_loss);
      iou.push_back(row.mean_iou);
      drift.push_back(row.final_drift);
      per_trial_json.push_back(json{{"pred_error", row.mean_pred_error},
                                    {"main_loss", row.mean_main_loss},
                                    {"iou", row.mean_iou},
                                    {"final_drift", row.final_drift},
                                    {"best_iteration", row.best_iteration},
                                    {"valid", row.valid}});
    }
    const MeanSe e = mean_se(err), l = mean_se(loss), u = mean_se(iou),
                 d = mean_se(drift);
    const AblationRow& proto = suite[0][r];
    agg << proto.name << ',' << trials << ',' << format_g17(e.mean) << ','
        << format_g17(e.se) << ',' << format_g17(l.mean) << ','
        << format_g17(l.se) << ',' << format_g17(u.mean) << ','
        << format_g17(u.se) << ',' << format_g17(d.mean) << '\n';
    rows.push_back(json{{"name", proto.name},
                        {"pred_error_mean", e.mean},
                        {"pred_error_se", e.se},
                        {"main_loss_mean", l.mean},
                        {"main_loss_se", l.se},
                        {"iou_mean", u.mean},
                        {"iou_se", u.se},
                        {"per_trial", per_trial_json}});
  }
  emit_file(bundle, "ablation_summary.csv", agg.str());
  bundle.summary["ablation"] =
      json{{"trials", trials},
           {"init_checksum", suite[0][0].init_checksum},
           {"rows", rows}};

  if (!k_grid.empty()) {
    std::ostringstream kc;
    kc << "k,mean_pred_error,pred_error_stderr,mean_iou,iou_stderr,trials\n";
    json kjson = json::array();
    for (std::size_t ki = 0; ki < k_grid.size(); ++ki) {
      std::vector<double> err, iou;
      for (std::size_t trial = 0; trial < trials; ++trial) {
        const RunTrace& tr = kcurve[ki * trials + trial];
        all_valid = all_valid && tr.valid;
        err.push_back(tr.mean_pred_error());
        iou.push_back(tr.mean_iou());
      }
      const MeanSe e = mean_se(err), u = mean_se(iou);
      kc << k_grid[ki] << ',' << format_g17(e.mean) << ',' << format_g17(e.se)
         << ',' << format_g17(u.mean) << ',' << format_g17(u.se) << ','
         << trials << '\n';
      kjson.push_back(json{{"k", k_grid[ki]},
                           {"pred_error_mean", e.mean},
                           {"pred_error_se", e.se},
                           {"per_trial", err}});
    }
    emit_file(bundle, "kcurve.csv", kc.str());
    bundle.summary["kcurve"] = kjson;
  }
  bundle.valid = all_valid;
}

inline void run_sweep_mode(const ExperimentConfig& cfg,
                           const ExecuteOptions& opts, ReportBundle& bundle) {
  const SweepSection& sw = *cfg.sweep;
  const TheoremInstance inst = sw.instance(cfg.seed);
  const std::vector<BoundReport> reports =
      theorem_sweep(inst, sw.k_grid, sw.trials, opts.jobs);

  std::ostringstream os;
  os << "k,measured_mean,measured_stderr,oracle,bias_term,variance_term,"
        "bound\n";
  for (const BoundReport& r : reports)
    os << r.k << ',' << format_g17(r.measured_mean) << ','
       << format_g17(r.measured_stderr) << ',' << format_g17(r.oracle) << ','
       << format_g17(r.bias_term) << ',' << format_g17(r.variance_term) << ','
       << format_g17(r.bound) << '\n';
  emit_file(bundle, "sweep.csv", os.str());

  std::size_t measured_arg = 0, oracle_arg = 0;
  json rows = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const BoundReport& r = reports[i];
    if (r.measured_mean < reports[measured_arg].measured_mean) measured_arg = i;
    if (r.oracle < reports[oracle_arg].oracle) oracle_arg = i;
    rows.push_back(json{{"k", r.k},
                        {"measured_mean", r.measured_mean},
                        {"measured_stderr", r.measured_stderr},
                        {"oracle", r.oracle},
                        {"bias_term", r.bias_term},
                        {"variance_term", r.variance_term},
                        {"bound", r.bound},
                        {"cross_term_mean", r.cross_term_mean},
                        {"cross_term_stderr", r.cross_term_stderr}});
  }
  const OptimalK opt = optimal_k(inst.alpha, inst.beta, inst.eta, inst.sigma);
  json sweet{{"continuous", opt.continuous},
             {"measured_argmin_k", reports[measured_arg].k},
             {"oracle_argmin_k", reports[oracle_arg].k}};
  if (opt.integer) sweet["bound_argmin_k"] = *opt.integer;
  bundle.summary["sweep"] = json{{"trials", sw.trials},
                                 {"rows", rows},
                                 {"sweet_spot", sweet}};
}

inline void run_lemma_mode(const ExperimentConfig& cfg,
                           const ExecuteOptions& opts, ReportBundle& bundle) {
  const LemmaSection& lm = cfg.lemma;
  std::vector<LemmaReport> reports(lm.instances);
  std::vector<std::size_t> dims(lm.instances);
  parallel_for(lm.instances, opts.jobs, [&](std::size_t i) {
    Rng rng(derive_key(cfg.seed,
                       {kSaltLemmaInstance, static_cast<std::uint64_t>(i)}));
    const LemmaInstance inst = random_lemma_instance(rng, lm.max_dim, lm.alpha);
    reports[i] = verify_lemma(inst.h, inst.b, inst.v, inst.alpha);
    dims[i] = inst.h.rows;
  });

  std::ostringstream os;
  os << "instance,dim,gap,bound,holds\n";
  std::size_t holding = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    os << i << ',' << dims[i] << ',' << format_g17(reports[i].gap) << ','
       << format_g17(reports[i].bound) << ',' << (reports[i].holds ? 1 : 0)
       << '\n';
    if (reports[i].holds) ++holding;
  }
  emit_file(bundle, "lemma.csv", os.str());
  bundle.summary["lemma"] = json{{"instances", lm.instances},
                                 {"holding", holding},
                                 {"all_hold", holding == lm.instances}};
  bundle.valid = holding == lm.instances;
}

}  // namespace rundetail

inline ReportBundle execute(const ExperimentConfig& cfg,
                            const ExecuteOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  ReportBundle bundle;
  bundle.output_dir = cfg.output_dir;
  std::filesystem::create_directories(bundle.output_dir);
  bundle.summary["config"] = config_to_json(cfg);
  bundle.summary["mode"] = to_string(cfg.mode);

  try {
    switch (cfg.mode) {
      case RunMode::kOnline:
      case RunMode::kFixed:
        rundetail::run_stream_mode(cfg, opts, bundle);
        break;
      case RunMode::kOfflineAllFrames:
        rundetail::run_offline_mode(cfg, opts, bundle);
        break;
      case RunMode::kAblationSuite:
        rundetail::run_ablation_mode(cfg, opts, bundle);
        break;
      case RunMode::kTheoremSweep:
        rundetail::run_sweep_mode(cfg, opts, bundle);
        break;
      case RunMode::kLemmaCheck:
        rundetail::run_lemma_mode(cfg, opts, bundle);
        break;
    }
  } catch (const std::invalid_argument&) {
    throw;  // validation failure, caller maps to its exit code
  } catch (const std::exception& e) {
    bundle.valid = false;
    bundle.summary["error"] = e.what();
  }

  const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
  bundle.summary["valid"] = bundle.valid;
  bundle.summary["environment"] = json{{"version", kVersion},
                                       {"seed", cfg.seed},
                                       {"wall_ms", wall}};
  bundle.files.push_back("summary.json");
  bundle.summary["files"] = bundle.files;
  {
    std::ofstream os(bundle.output_dir / "summary.json", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write summary.json");
    os << bundle.summary.dump(2) << "\n";
  }
  return bundle;
}

// Plot-shaped CSVs derived from a finished bundle: the window-size curve and
// the memory-ablation bars. No rendering here.
inline std::vector<std::string> report_figures(
    const std::filesystem::path& bundle_dir,
    const std::filesystem::path& out_dir) {
  std::ifstream in(bundle_dir / "summary.json");
  if (!in)
    throw std::invalid_argument("no summary.json in " + bundle_dir.string());
  json summary = json::parse(in, nullptr, false);
  if (summary.is_discarded())
    throw std::invalid_argument("summary.json is not valid JSON");

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    std::ofstream os(out_dir / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + name);
    os << content;
    written.push_back(name);
  };

  if (summary.contains("sweep")) {
    std::ostringstream os;
    os << "k,mean,stderr,oracle,bound\n";
    for (const json& r : summary.at("sweep").at("rows"))
      os << r.at("k").get<std::size_t>() << ','
         << format_g17(r.at("measured_mean").get<double>()) << ','
         << format_g17(r.at("measured_stderr").get<double>()) << ','
         << format_g17(r.at("oracle").get<double>()) << ','
         << format_g17(r.at("bound").get<double>()) << '\n';
    emit("fig_window_curve.csv", os.str());
  } else if (summary.contains("kcurve")) {
    std::ostringstream os;
    os << "k,mean,stderr\n";
    for (const json& r : summary.at("kcurve"))
      os << r.at("k").get<std::size_t>() << ','
         << format_g17(r.at("pred_error_mean").get<double>()) << ','
         << format_g17(r.at("pred_error_se").get<double>()) << '\n';
    emit("fig_window_curve.csv", os.str());
  }
  if (summary.contains("ablation")) {
    std::ostringstream os;
    os << "name,mean_pred_error,stderr\n";
    for (const json& r : summary.at("ablation").at("rows"))
      os << r.at("name").get<std::string>() << ','
         << format_g17(r.at("pred_error_mean").get<double>()) << ','
         << format_g17(r.at("pred_error_se").get<double>()) << '\n';
    emit("fig_memory_bars.csv", os.str());
  }
  if (written.empty())
    throw std::invalid_argument(
        "bundle has neither sweep, kcurve, nor ablation results");
  return written;
}

}  // namespace streamttt
