#pragma once

// Offline pretraining on still scenes. Each step minimizes
//   main_weight * l_main(h(f(clean))) + ssl_weight * l_recon(g(f(masked)))
// over f, g and h jointly by minibatch SGD. This is the only phase that
// updates h; every streaming run afterwards keeps it frozen.

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "streamttt/frame.hpp"
#include "streamttt/neural_model.hpp"
#include "streamttt/rng.hpp"

namespace streamttt {

inline constexpr std::uint64_t kSaltTrainInit = 0x41;
inline constexpr std::uint64_t kSaltTrainPerm = 0x42;
inline constexpr std::uint64_t kSaltTrainMask = 0x43;

struct JointTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  double lr = 0.05;
  double main_weight = 1.0;
  double ssl_weight = 1.0;
  double mask_ratio = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0))
      throw std::invalid_argument("mask_ratio must be in [0, 1]");
  }
};

struct JointTrainResult {
  ModelState state;
  std::vector<double> epoch_objective;  // mean combined loss per epoch
};

inline JointTrainResult joint_train(const NeuralModelSpec& spec,
                                    const std::vector<LabeledFrame>& data,
                                    const JointTrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("joint_train: no data");

  JointTrainResult result;
  result.state = init_neural_state(spec, derive_key(cfg.seed, {kSaltTrainInit}));
  ModelState& state = result.state;

  std::vector<std::size_t> order(data.size());
  for (std::uint64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng perm_rng(derive_key(cfg.seed, {kSaltTrainPerm, epoch}));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[perm_rng.uniform_index(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);

      Vec f_grad(spec.f_param_count(), 0.0);
      Vec g_grad(spec.g_param_count(), 0.0);
      Vec h_grad(spec.h_param_count(), 0.0);
      for (std::size_t pos = start; pos < end; ++pos) {
        const LabeledFrame& sample = data[order[pos]];
        double loss = 0.0;
        if (cfg.main_weight != 0.0) {
          MainEval main = main_task_eval(spec, state, sample.frame.values,
                                         sample.label);
          axpy(cfg.main_weight * inv_b, main.f_grad, f_grad);
          axpy(cfg.main_weight * inv_b, main.h_grad, h_grad);
          loss += cfg.main_weight * main.loss;
        }
        if (cfg.ssl_weight != 0.0) {
          MaskedView view = mask_frame(
              sample.frame.values, spec.grid(), cfg.mask_ratio,
              derive_key(cfg.seed, {kSaltTrainMask, epoch,
                                    static_cast<std::uint64_t>(pos)}));
          SslEval ssl = masked_recon_eval(spec, state, view);
          axpy(cfg.ssl_weight * inv_b, ssl.f_grad, f_grad);
          axpy(cfg.ssl_weight * inv_b, ssl.g_grad, g_grad);
          loss += cfg.ssl_weight * ssl.loss;
        }
        epoch_loss += loss;
      }
      axpy(-cfg.lr, f_grad, state.f_params);
      axpy(-cfg.lr, g_grad, state.g_params);
      axpy(-cfg.lr, h_grad, state.h_params);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !all_finite(state.f_params) ||
        !all_finite(state.g_params) || !all_finite(state.h_params))
      throw std::runtime_error("joint_train: diverged at epoch " +
                               std::to_string(epoch));
    result.epoch_objective.push_back(epoch_loss);
  }
  state.freeze();
  return result;
}

}  // namespace streamttt
