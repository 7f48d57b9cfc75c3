#pragma once

// Per-frame adaptation objectives. All of them only ever move f (and g for
// masked reconstruction); the prediction head h stays frozen throughout.
//
//   masked-recon   reconstruct hidden pixels from the masked frame
//   entropy        minimize mean binary prediction entropy on the clean frame
//   self-train     fit the model's own confident hard labels on a masked view

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamttt/masking.hpp"
#include "streamttt/neural_model.hpp"

namespace streamttt {

enum class InnerObjective { kMaskedRecon, kEntropy, kSelfTrain };

inline std::string to_string(InnerObjective o) {
  switch (o) {
    case InnerObjective::kMaskedRecon: return "masked-recon";
    case InnerObjective::kEntropy: return "entropy";
    case InnerObjective::kSelfTrain: return "self-train";
  }
  throw std::logic_error("bad objective");
}

inline InnerObjective inner_objective_from_string(const std::string& s) {
  if (s == "masked-recon") return InnerObjective::kMaskedRecon;
  if (s == "entropy") return InnerObjective::kEntropy;
  if (s == "self-train") return InnerObjective::kSelfTrain;
  throw std::invalid_argument("unknown inner objective: " + s);
}

struct SelfTrainConfig {
  double confidence = 0.9;  // keep pixels with max(p, 1-p) strictly above this
  double mask_ratio = 0.8;
};

struct InnerEval {
  double loss = 0.0;
  Vec f_grad, g_grad;  // g_grad empty when the objective does not touch g
};

inline InnerEval masked_recon_objective(const NeuralModelSpec& spec,
                                        const ModelState& state,
                                        const Vec& values, double mask_ratio,
                                        std::uint64_t mask_seed) {
  MaskedView view = mask_frame(values, spec.grid(), mask_ratio, mask_seed);
  SslEval ev = masked_recon_eval(spec, state, view);
  return {ev.loss, std::move(ev.f_grad), std::move(ev.g_grad)};
}

// Mean binary entropy of the pixel predictions,
//   H(p) = p softplus(-z) + (1-p) softplus(z),  dH/dz = -z p (1-p).
inline InnerEval entropy_objective(const NeuralModelSpec& spec,
                                   const ModelState& state, const Vec& values) {
  InnerEval ev;
  ev.f_grad.assign(spec.f_param_count(), 0.0);

  detail::EncoderCache ec;
  detail::encoder_forward(spec, state.f_params, clean_input(spec, values), ec);
  detail::HeadRun hr;
  detail::run_head(spec, state.h_params, spec.h_head_hidden, ec, hr);

  const double inv_n = 1.0 / static_cast<double>(spec.pixels());
  Vec out_grad(spec.pixels());
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.pixels(); ++i) {
    const double z = hr.out[i];
    const double p = detail::sigmoid(z);
    acc += p * detail::softplus(-z) + (1.0 - p) * detail::softplus(z);
    out_grad[i] = -z * p * (1.0 - p) * inv_n;
  }
  ev.loss = acc * inv_n;

  Vec h_scratch(spec.h_param_count(), 0.0);  // head is frozen, grads dropped
  detail::head_encoder_backward(spec, state.f_params, state.h_params,
                                spec.h_head_hidden, ec, hr, out_grad,
                                h_scratch.data(), ev.f_grad.data());
  return ev;
}

struct PseudoLabels {
  std::vector<std::size_t> selected;  // pixel indices with confident predictions
  Vec targets;                        // hard label per selected pixel
};

// Predictions on the clean frame become training targets wherever the model
// is confident. confidence = 1 selects nothing (the comparison is strict).
inline PseudoLabels select_pseudo_labels(const NeuralModelSpec& spec,
                                         const ModelState& state,
                                         const Vec& values, double confidence) {
  PseudoLabels out;
  Vec logits = neural_main_logits(spec, state, values);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = detail::sigmoid(logits[i]);
    const double conf = p >= 0.5 ? p : 1.0 - p;
    if (conf > confidence) {
      out.selected.push_back(i);
      out.targets.push_back(p >= 0.5 ? 1.0 : 0.0);
    }
  }
  return out;
}

// BCE of the masked-view predictions against frozen pseudo labels, averaged
// over the selected pixels. Gradients flow to f only.
inline InnerEval self_train_fit(const NeuralModelSpec& spec,
                                const ModelState& state,
                                const PseudoLabels& labels,
                                const MaskedView& view) {
  InnerEval ev;
  ev.f_grad.assign(spec.f_param_count(), 0.0);
  if (labels.selected.empty()) return ev;

  detail::EncoderCache ec;
  detail::encoder_forward(spec, state.f_params, view.input_with_mask, ec);
  detail::HeadRun hr;
  detail::run_head(spec, state.h_params, spec.h_head_hidden, ec, hr);

  const double inv_m = 1.0 / static_cast<double>(labels.selected.size());
  Vec out_grad(spec.pixels(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.selected.size(); ++i) {
    const std::size_t p = labels.selected[i];
    const double z = hr.out[p];
    const double y = labels.targets[i];
    acc += detail::softplus(z) - y * z;
    out_grad[p] = (detail::sigmoid(z) - y) * inv_m;
  }
  ev.loss = acc * inv_m;

  Vec h_scratch(spec.h_param_count(), 0.0);
  detail::head_encoder_backward(spec, state.f_params, state.h_params,
                                spec.h_head_hidden, ec, hr, out_grad,
                                h_scratch.data(), ev.f_grad.data());
  return ev;
}

inline InnerEval self_train_objective(const NeuralModelSpec& spec,
                                      const ModelState& state,
                                      const Vec& values,
                                      const SelfTrainConfig& cfg,
                                      std::uint64_t mask_seed) {
  PseudoLabels labels =
      select_pseudo_labels(spec, state, values, cfg.confidence);
  MaskedView view =
      mask_frame(values, spec.grid(), cfg.mask_ratio, mask_seed);
  return self_train_fit(spec, state, labels, view);
}

inline InnerEval inner_objective_eval(InnerObjective kind,
                                      const NeuralModelSpec& spec,
                                      const ModelState& state,
                                      const Vec& values, double mask_ratio,
                                      const SelfTrainConfig& self_train,
                                      std::uint64_t mask_seed) {
  switch (kind) {
    case InnerObjective::kMaskedRecon:
      return masked_recon_objective(spec, state, values, mask_ratio, mask_seed);
    case InnerObjective::kEntropy:
      return entropy_objective(spec, state, values);
    case InnerObjective::kSelfTrain:
      return self_train_objective(spec, state, values, self_train, mask_seed);
  }
  throw std::logic_error("bad objective");
}

}  // namespace streamttt
