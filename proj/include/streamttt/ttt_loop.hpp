#pragma once

// The streaming outer loop: for each arriving frame, push it into the
// window, warm-start per the init policy, take a few inner gradient steps on
// the window-averaged surrogate objective, then predict on the clean frame
// with the frozen head and record metrics. Nothing at step t may read a
// frame after t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "streamttt/executor.hpp"
#include "streamttt/frame.hpp"
#include "streamttt/joint_train.hpp"
#include "streamttt/memory.hpp"
#include "streamttt/model_state.hpp"
#include "streamttt/neural_model.hpp"
#include "streamttt/objectives.hpp"
#include "streamttt/quad_model.hpp"
#include "streamttt/streamgen.hpp"

namespace streamttt {

inline constexpr std::uint64_t kSaltBatch = 0x61;
inline constexpr std::uint64_t kSaltMask = 0x62;
inline constexpr std::uint64_t kSaltEval = 0x63;
inline constexpr std::uint64_t kSaltOfflineBatch = 0x64;
inline constexpr std::uint64_t kSaltOfflineMask = 0x65;
inline constexpr std::uint64_t kSaltRunShuffle = 0x66;

struct TTTConfig {
  std::size_t window_size = 16;
  std::size_t iters_per_frame = 1;
  std::size_t batch_size = 16;  // 0 = one deterministic pass over the window
  double lr = 0.01;
  InitPolicy init_policy = InitPolicy::kCarryOver;
  InnerObjective objective = InnerObjective::kMaskedRecon;
  double mask_ratio = 0.8;
  SelfTrainConfig self_train;
  std::uint64_t seed = 0;

  void validate() const {
    if (window_size < 1) throw std::invalid_argument("window_size must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0))
      throw std::invalid_argument("mask_ratio must be in [0, 1]");
  }
};

struct FrameRecord {
  std::int64_t t = 0;
  double main_loss = 0.0;
  double ssl_loss = 0.0;
  double pred_error = 0.0;
  double params_drift = 0.0;

  bool finite() const {
    return std::isfinite(main_loss) && std::isfinite(ssl_loss) &&
           std::isfinite(pred_error) && std::isfinite(params_drift);
  }
};

// Mean via ascending-sorted summation: bitwise invariant under any
// permutation of the inputs, which makes order-independence checks exact.
inline double sorted_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

struct RunTrace {
  std::vector<FrameRecord> records;
  std::vector<Vec> predictions;  // per-frame model output (probabilities or theta)
  std::vector<double> iou;       // empty for models without a pixel prediction
  bool valid = true;
  std::string abort_reason;

  double mean_main_loss() const {
    std::vector<double> v;
    v.reserve(records.size());
    for (const FrameRecord& r : records) v.push_back(r.main_loss);
    return sorted_mean(std::move(v));
  }
  double mean_pred_error() const {
    std::vector<double> v;
    v.reserve(records.size());
    for (const FrameRecord& r : records) v.push_back(r.pred_error);
    return sorted_mean(std::move(v));
  }
  double mean_iou() const {
    return iou.empty() ? std::numeric_limits<double>::quiet_NaN()
                       : sorted_mean(iou);
  }
  double final_drift() const {
    return records.empty() ? 0.0 : records.back().params_drift;
  }
};

struct FrameScore {
  double main_loss = 0.0;
  double ssl_loss = 0.0;
  double pred_error = 0.0;
  double iou = std::numeric_limits<double>::quiet_NaN();
  Vec prediction;
};

// Intersection over union of the thresholded prediction with the label mask.
// An empty union counts as a perfect match.
inline double mask_iou(const Vec& probs, const Vec& labels) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool p = probs[i] >= 0.5;
    const bool l = labels[i] >= 0.5;
    if (p && l) ++inter;
    if (p || l) ++uni;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Tracks theta directly; the prediction is theta itself and the error metric
// is the excess risk l_m(theta) - l_m(theta*) = l_m(theta).
struct QuadRunner {
  QuadModelSpec spec;
  std::uint64_t noise_seed = 0;
  ModelState state;

  QuadRunner(const QuadModelSpec& s, const ModelState& init,
             std::uint64_t noise)
      : spec(s), noise_seed(noise), state(init) {
    spec.validate();
    if (state.f_params.size() != spec.dim)
      throw std::invalid_argument("QuadRunner: state/spec dim mismatch");
  }

  InnerEval inner_eval(const LabeledFrame& el, std::uint64_t /*mask_seed*/) {
    InnerEval ev;
    ev.loss = quad_ssl_loss(spec, state.f_params, el.frame, noise_seed);
    ev.f_grad = quad_ssl_grad(spec, state.f_params, el.frame, noise_seed);
    return ev;
  }

  void apply(const Vec& f_grad, const Vec& g_grad, double lr) {
    axpy(-lr, f_grad, state.f_params);
    if (!g_grad.empty()) axpy(-lr, g_grad, state.g_params);
  }

  FrameScore score(const LabeledFrame& el, std::uint64_t /*eval_seed*/) {
    FrameScore sc;
    sc.main_loss = quad_main_loss(spec, state.f_params, el.frame.values);
    sc.ssl_loss = quad_ssl_loss(spec, state.f_params, el.frame, noise_seed);
    sc.pred_error = sc.main_loss;  // l_m(theta*) = 0 for this family
    sc.prediction = state.f_params;
    return sc;
  }
};

// Video model: inner objective adapts f (and g for reconstruction), the
// frozen h scores the clean frame.
struct NeuralRunner {
  NeuralModelSpec spec;
  ModelState state;

  NeuralRunner(const NeuralModelSpec& s, const ModelState& init)
      : spec(s), state(init) {
    spec.validate();
    if (state.f_params.size() != spec.f_param_count())
      throw std::invalid_argument("NeuralRunner: state/spec mismatch");
  }

  InnerObjective objective = InnerObjective::kMaskedRecon;
  double mask_ratio = 0.8;
  SelfTrainConfig self_train;

  InnerEval inner_eval(const LabeledFrame& el, std::uint64_t mask_seed) {
    return inner_objective_eval(objective, spec, state, el.frame.values,
                                mask_ratio, self_train, mask_seed);
  }

  void apply(const Vec& f_grad, const Vec& g_grad, double lr) {
    axpy(-lr, f_grad, state.f_params);
    if (!g_grad.empty()) axpy(-lr, g_grad, state.g_params);
  }

  FrameScore score(const LabeledFrame& el, std::uint64_t eval_seed) {
    FrameScore sc;
    Vec logits = neural_main_logits(spec, state, el.frame.values);
    sc.main_loss = bce_loss(logits, el.label);
    sc.pred_error = pixel_error(logits, el.label);
    sc.prediction = logits_to_probs(logits);
    sc.iou = mask_iou(sc.prediction, el.label);
    sc.ssl_loss = inner_objective_eval(objective, spec, state, el.frame.values,
                                       mask_ratio, self_train, eval_seed)
                      .loss;
    return sc;
  }
};

template <typename Runner>
RunTrace run_stream(Runner& runner, const std::vector<LabeledFrame>& stream,
                    const TTTConfig& cfg) {
  cfg.validate();
  if (stream.empty()) throw std::invalid_argument("run_stream: empty stream");

  RunTrace trace;
  trace.records.reserve(stream.size());
  WindowBuffer window(cfg.window_size);

  for (const LabeledFrame& frame : stream) {
    window.push(frame);
    const std::uint64_t t = static_cast<std::uint64_t>(frame.frame.index);
    runner.state = select_init(cfg.init_policy, runner.state);

    bool aborted = false;
    for (std::uint64_t iter = 0; iter < cfg.iters_per_frame && !aborted;
         ++iter) {
      std::vector<std::size_t> positions;
      if (cfg.batch_size == 0) {
        positions.resize(window.size());
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
      } else {
        positions = sample_batch_positions(
            window, cfg.batch_size, derive_key(cfg.seed, {kSaltBatch, t, iter}));
      }
      const double inv_b = 1.0 / static_cast<double>(positions.size());
      Vec f_acc, g_acc;
      double loss_acc = 0.0;
      for (std::uint64_t slot = 0; slot < positions.size(); ++slot) {
        InnerEval ev = runner.inner_eval(
            window.at(positions[slot]),
            derive_key(cfg.seed, {kSaltMask, t, iter, slot}));
        loss_acc += inv_b * ev.loss;
        if (f_acc.empty()) f_acc.assign(ev.f_grad.size(), 0.0);
        axpy(inv_b, ev.f_grad, f_acc);
        if (!ev.g_grad.empty()) {
          if (g_acc.empty()) g_acc.assign(ev.g_grad.size(), 0.0);
          axpy(inv_b, ev.g_grad, g_acc);
        }
      }
      if (!std::isfinite(loss_acc) || !all_finite(f_acc) ||
          !all_finite(g_acc)) {
        trace.valid = false;
        trace.abort_reason = "non-finite inner objective at frame " +
                             std::to_string(frame.frame.index);
        aborted = true;
        break;
      }
      runner.apply(f_acc, g_acc, cfg.lr);
    }

    FrameScore sc = runner.score(frame, derive_key(cfg.seed, {kSaltEval, t}));
    FrameRecord rec{frame.frame.index, sc.main_loss, sc.ssl_loss,
                    sc.pred_error, drift_from_frozen(runner.state)};
    trace.records.push_back(rec);
    trace.predictions.push_back(std::move(sc.prediction));
    if (std::isfinite(sc.iou)) trace.iou.push_back(sc.iou);

    if (aborted) break;
    if (!rec.finite()) {
      trace.valid = false;
      trace.abort_reason =
          "non-finite metric at frame " + std::to_string(frame.frame.index);
      break;
    }
  }
  return trace;
}

// Causal moving average of the last w predictions.
inline std::vector<Vec> temporal_smooth(const std::vector<Vec>& predictions,
                                        std::size_t w) {
  if (w < 1) throw std::invalid_argument("temporal_smooth: window must be >= 1");
  std::vector<Vec> out;
  out.reserve(predictions.size());
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const std::size_t lo = t + 1 >= w ? t + 1 - w : 0;
    Vec acc(predictions[t].size(), 0.0);
    for (std::size_t i = lo; i <= t; ++i) axpy(1.0, predictions[i], acc);
    const double inv = 1.0 / static_cast<double>(t - lo + 1);
    for (double& v : acc) v *= inv;
    out.push_back(std::move(acc));
  }
  return out;
}

// Pixel error of smoothed probabilities re-thresholded at 1/2.
inline double smoothed_pixel_error(const std::vector<Vec>& probs,
                                   const std::vector<LabeledFrame>& stream,
                                   std::size_t w) {
  if (probs.size() != stream.size())
    throw std::invalid_argument("smoothed_pixel_error: size mismatch");
  std::vector<Vec> smoothed = temporal_smooth(probs, w);
  std::vector<double> errs;
  errs.reserve(stream.size());
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const Vec& p = smoothed[t];
    const Vec& label = stream[t].label;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if ((p[i] >= 0.5) != (label[i] >= 0.5)) ++wrong;
    errs.push_back(static_cast<double>(wrong) / static_cast<double>(p.size()));
  }
  return sorted_mean(std::move(errs));
}

struct OfflineConfig {
  std::size_t iterations = 2000;
  std::size_t eval_every = 100;
  std::size_t batch_size = 16;
  double lr = 0.01;
  double mask_ratio = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (eval_every == 0) throw std::invalid_argument("eval_every must be positive");
    if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  }
};

struct OfflineEvalPoint {
  std::size_t iteration = 0;
  double mean_main_loss = 0.0;
  double mean_pred_error = 0.0;
  double mean_iou = 0.0;
};

struct OfflineResult {
  std::vector<OfflineEvalPoint> evals;
  std::size_t best_iteration = 0;
  OfflineEvalPoint best;
  bool valid = true;
  std::string abort_reason;
};

// Non-streaming baseline: the whole video is available at once, f and g are
// trained on reconstruction batches drawn uniformly from all frames, and the
// reported number is the best evaluated iteration (iteration 0 included).
inline OfflineResult run_offline_all_frames(const NeuralModelSpec& spec,
                                            const std::vector<LabeledFrame>& stream,
                                            const ModelState& init,
                                            const OfflineConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (stream.empty())
    throw std::invalid_argument("run_offline_all_frames: empty stream");

  ModelState state = init;
  OfflineResult out;

  auto evaluate = [&](std::size_t iteration) {
    std::vector<double> losses, errs, ious;
    losses.reserve(stream.size());
    for (const LabeledFrame& f : stream) {
      Vec logits = neural_main_logits(spec, state, f.frame.values);
      losses.push_back(bce_loss(logits, f.label));
      errs.push_back(pixel_error(logits, f.label));
      ious.push_back(mask_iou(logits_to_probs(logits), f.label));
    }
    OfflineEvalPoint pt;
    pt.iteration = iteration;
    pt.mean_main_loss = sorted_mean(std::move(losses));
    pt.mean_pred_error = sorted_mean(std::move(errs));
    pt.mean_iou = sorted_mean(std::move(ious));
    out.evals.push_back(pt);
    if (out.evals.size() == 1 ||
        pt.mean_pred_error < out.best.mean_pred_error) {
      out.best = pt;
      out.best_iteration = iteration;
    }
  };

  evaluate(0);
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  for (std::size_t iter = 1; iter <= cfg.iterations; ++iter) {
    Rng batch_rng(derive_key(cfg.seed, {kSaltOfflineBatch,
                                        static_cast<std::uint64_t>(iter)}));
    Vec f_acc(spec.f_param_count(), 0.0);
    Vec g_acc(spec.g_param_count(), 0.0);
    double loss_acc = 0.0;
    for (std::uint64_t slot = 0; slot < cfg.batch_size; ++slot) {
      const LabeledFrame& sample = stream[batch_rng.uniform_index(stream.size())];
      MaskedView view = mask_frame(
          sample.frame.values, spec.grid(), cfg.mask_ratio,
          derive_key(cfg.seed, {kSaltOfflineMask,
                                static_cast<std::uint64_t>(iter), slot}));
      SslEval ev = masked_recon_eval(spec, state, view);
      loss_acc += inv_b * ev.loss;
      axpy(inv_b, ev.f_grad, f_acc);
      axpy(inv_b, ev.g_grad, g_acc);
    }
    if (!std::isfinite(loss_acc) || !all_finite(f_acc) || !all_finite(g_acc)) {
      out.valid = false;
      out.abort_reason =
          "non-finite offline objective at iteration " + std::to_string(iter);
      return out;
    }
    axpy(-cfg.lr, f_acc, state.f_params);
    axpy(-cfg.lr, g_acc, state.g_params);
    if (iter % cfg.eval_every == 0 || iter == cfg.iterations) evaluate(iter);
  }
  return out;
}

}  // namespace streamttt
