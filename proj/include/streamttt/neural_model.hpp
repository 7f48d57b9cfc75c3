#pragma once

// Small patch network for video frames. A shared embedding maps every patch
// (its pixels plus mask bits) to a code; a mixing layer over all patch codes
// produces one context vector for the frame. The reconstruction head g and
// the per-pixel classification head h are shared across patches and read
// [patch code ; context], so a masked patch can only be reconstructed from
// context. Reconstruction is scored on masked pixels only; classification
// always runs on the clean frame (mask bits all zero). Gradients are hand
// coded and checked against finite differences in the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "streamttt/linalg.hpp"
#include "streamttt/masking.hpp"
#include "streamttt/model_state.hpp"
#include "streamttt/rng.hpp"

namespace streamttt {

inline constexpr std::uint64_t kSaltInitF = 0x31;
inline constexpr std::uint64_t kSaltInitG = 0x32;
inline constexpr std::uint64_t kSaltInitH = 0x33;

struct NeuralModelSpec {
  std::size_t height = 16, width = 16;
  std::size_t patch_size = 4;
  std::size_t hidden_dim = 32;  // width of both the patch code and the context
  std::size_t g_head_hidden = 0;  // 0 = linear head
  std::size_t h_head_hidden = 0;

  std::size_t pixels() const { return height * width; }
  std::size_t input_dim() const { return 2 * pixels(); }
  PatchGrid grid() const { return {height, width, patch_size}; }
  std::size_t patch_pixels() const { return patch_size * patch_size; }
  std::size_t patch_count() const { return grid().patch_count(); }

  // Patch embedding input: pixel values, mask bits, then the patch center
  // (x, y) in [-1, 1]. The coordinates let a masked patch keep its identity.
  std::size_t embed_inputs() const { return 2 * patch_pixels() + 2; }
  std::size_t embed_param_count() const {
    return hidden_dim * (embed_inputs() + 1);
  }
  std::size_t mix_param_count() const {
    return hidden_dim * (hidden_dim * patch_count() + 1);
  }
  std::size_t f_param_count() const {
    return embed_param_count() + mix_param_count();
  }
  std::size_t head_in_dim() const { return 2 * hidden_dim; }
  static std::size_t head_param_count(std::size_t in, std::size_t hidden,
                                      std::size_t out) {
    return hidden == 0 ? out * (in + 1)
                       : hidden * (in + 1) + out * (hidden + 1);
  }
  std::size_t g_param_count() const {
    return head_param_count(head_in_dim(), g_head_hidden, patch_pixels());
  }
  std::size_t h_param_count() const {
    return head_param_count(head_in_dim(), h_head_hidden, patch_pixels());
  }

  void validate() const {
    grid().validate();
    if (height < 1 || width < 1) throw std::invalid_argument("empty image");
    if (hidden_dim == 0) throw std::invalid_argument("hidden_dim must be positive");
  }
};

namespace detail {

// out = tanh(W in + b); params = [W (rows x cols, row major), b (rows)]
inline void affine_tanh(const double* p, std::size_t rows, std::size_t cols,
                        const double* in, double* out) {
  const double* b = p + rows * cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = p + r * cols;
    double acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * in[c];
    out[r] = std::tanh(acc);
  }
}

inline void affine(const double* p, std::size_t rows, std::size_t cols,
                   const double* in, double* out) {
  const double* b = p + rows * cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = p + r * cols;
    double acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * in[c];
    out[r] = acc;
  }
}

// Accumulates parameter gradients and (if in_grad) the input gradient for
// out = W in + b given d(loss)/d(out). in_grad is overwritten.
inline void affine_backward(const double* p, std::size_t rows, std::size_t cols,
                            const double* in, const double* out_grad,
                            double* p_grad, double* in_grad) {
  double* bg = p_grad + rows * cols;
  if (in_grad)
    for (std::size_t c = 0; c < cols; ++c) in_grad[c] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double og = out_grad[r];
    bg[r] += og;
    double* wg = p_grad + r * cols;
    if (og == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) wg[c] += og * in[c];
    if (in_grad) {
      const double* w = p + r * cols;
      for (std::size_t c = 0; c < cols; ++c) in_grad[c] += og * w[c];
    }
  }
}

// d tanh(u) / d u = 1 - tanh(u)^2, expressed through the activation itself.
inline void tanh_backward(const double* act, double* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad[i] *= 1.0 - act[i] * act[i];
}

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

// Flat pixel index of within-patch position j of patch p (both row major).
inline std::size_t patch_pixel(const NeuralModelSpec& spec, std::size_t p,
                               std::size_t j) {
  const std::size_t px = p % (spec.width / spec.patch_size);
  const std::size_t py = p / (spec.width / spec.patch_size);
  const std::size_t jx = j % spec.patch_size;
  const std::size_t jy = j / spec.patch_size;
  return (py * spec.patch_size + jy) * spec.width + px * spec.patch_size + jx;
}

struct EncoderCache {
  std::vector<Vec> patch_in;  // per patch, [pixel values ; mask bits]
  Vec codes;                  // patch p's code at offset p * hidden_dim
  Vec mix;                    // context vector
};

inline void encoder_forward(const NeuralModelSpec& spec, const Vec& f_params,
                            const Vec& input, EncoderCache& ec) {
  if (f_params.size() != spec.f_param_count())
    throw std::invalid_argument("encoder_forward: bad f_params size");
  if (input.size() != spec.input_dim())
    throw std::invalid_argument("encoder_forward: bad input size");
  const std::size_t n_patches = spec.patch_count();
  const std::size_t pp = spec.patch_pixels();
  const std::size_t c = spec.hidden_dim;
  const std::size_t across = spec.width / spec.patch_size;

  ec.patch_in.assign(n_patches, Vec(spec.embed_inputs()));
  ec.codes.assign(c * n_patches, 0.0);
  for (std::size_t p = 0; p < n_patches; ++p) {
    Vec& in = ec.patch_in[p];
    for (std::size_t j = 0; j < pp; ++j) {
      const std::size_t px = patch_pixel(spec, p, j);
      in[j] = input[px];
      in[pp + j] = input[spec.pixels() + px];
    }
    const double cx = (static_cast<double>(p % across) + 0.5) *
                          spec.patch_size / spec.width * 2.0 - 1.0;
    const double cy = (static_cast<double>(p / across) + 0.5) *
                          spec.patch_size / spec.height * 2.0 - 1.0;
    in[2 * pp] = cx;
    in[2 * pp + 1] = cy;
    affine_tanh(f_params.data(), c, spec.embed_inputs(), in.data(),
                ec.codes.data() + p * c);
  }
  ec.mix.assign(c, 0.0);
  affine_tanh(f_params.data() + spec.embed_param_count(), c, c * n_patches,
              ec.codes.data(), ec.mix.data());
}

struct HeadCache {
  Vec hidden_act;  // empty for linear heads
  Vec out;
};

inline void head_forward(const double* p, std::size_t in, std::size_t hidden,
                         std::size_t out, const double* code, HeadCache& cache) {
  cache.out.resize(out);
  if (hidden == 0) {
    affine(p, out, in, code, cache.out.data());
  } else {
    cache.hidden_act.resize(hidden);
    affine_tanh(p, hidden, in, code, cache.hidden_act.data());
    affine(p + hidden * (in + 1), out, hidden, cache.hidden_act.data(),
           cache.out.data());
  }
}

// code_grad is overwritten, p_grad accumulated.
inline void head_backward(const double* p, std::size_t in, std::size_t hidden,
                          std::size_t out, const double* code,
                          const HeadCache& cache, const Vec& out_grad,
                          double* p_grad, double* code_grad) {
  if (hidden == 0) {
    affine_backward(p, out, in, code, out_grad.data(), p_grad, code_grad);
    return;
  }
  Vec hidden_grad(hidden);
  affine_backward(p + hidden * (in + 1), out, hidden, cache.hidden_act.data(),
                  out_grad.data(), p_grad + hidden * (in + 1),
                  hidden_grad.data());
  tanh_backward(cache.hidden_act.data(), hidden_grad.data(), hidden);
  affine_backward(p, hidden, in, code, hidden_grad.data(), p_grad, code_grad);
}

struct HeadRun {
  std::vector<HeadCache> patch;
  Vec out;  // full frame, patch outputs scattered back to pixel positions
};

inline void run_head(const NeuralModelSpec& spec, const Vec& params,
                     std::size_t head_hidden, const EncoderCache& ec,
                     HeadRun& hr) {
  const std::size_t n_patches = spec.patch_count();
  const std::size_t pp = spec.patch_pixels();
  const std::size_t c = spec.hidden_dim;
  hr.patch.assign(n_patches, HeadCache{});
  hr.out.assign(spec.pixels(), 0.0);
  Vec head_in(2 * c);
  for (std::size_t p = 0; p < n_patches; ++p) {
    std::copy(ec.codes.begin() + p * c, ec.codes.begin() + (p + 1) * c,
              head_in.begin());
    std::copy(ec.mix.begin(), ec.mix.end(), head_in.begin() + c);
    head_forward(params.data(), 2 * c, head_hidden, pp, head_in.data(),
                 hr.patch[p]);
    for (std::size_t j = 0; j < pp; ++j)
      hr.out[patch_pixel(spec, p, j)] = hr.patch[p].out[j];
  }
}

// Full-frame out_grad back through one head and, when f_grad is non-null,
// through the mixing layer and the shared patch embedding.
inline void head_encoder_backward(const NeuralModelSpec& spec,
                                  const Vec& f_params, const Vec& head_params,
                                  std::size_t head_hidden,
                                  const EncoderCache& ec, const HeadRun& hr,
                                  const Vec& out_grad, double* head_grad,
                                  double* f_grad) {
  const std::size_t n_patches = spec.patch_count();
  const std::size_t pp = spec.patch_pixels();
  const std::size_t c = spec.hidden_dim;

  Vec head_in(2 * c), head_in_grad(2 * c), og(pp);
  Vec codes_grad(c * n_patches, 0.0);
  Vec mix_grad(c, 0.0);
  for (std::size_t p = 0; p < n_patches; ++p) {
    for (std::size_t j = 0; j < pp; ++j)
      og[j] = out_grad[patch_pixel(spec, p, j)];
    std::copy(ec.codes.begin() + p * c, ec.codes.begin() + (p + 1) * c,
              head_in.begin());
    std::copy(ec.mix.begin(), ec.mix.end(), head_in.begin() + c);
    head_backward(head_params.data(), 2 * c, head_hidden, pp, head_in.data(),
                  hr.patch[p], og, head_grad, head_in_grad.data());
    for (std::size_t i = 0; i < c; ++i) {
      codes_grad[p * c + i] += head_in_grad[i];
      mix_grad[i] += head_in_grad[c + i];
    }
  }
  if (!f_grad) return;

  tanh_backward(ec.mix.data(), mix_grad.data(), c);
  Vec concat_grad(c * n_patches);
  affine_backward(f_params.data() + spec.embed_param_count(), c, c * n_patches,
                  ec.codes.data(), mix_grad.data(),
                  f_grad + spec.embed_param_count(), concat_grad.data());
  for (std::size_t i = 0; i < c * n_patches; ++i)
    concat_grad[i] += codes_grad[i];
  for (std::size_t p = 0; p < n_patches; ++p) {
    tanh_backward(ec.codes.data() + p * c, concat_grad.data() + p * c, c);
    affine_backward(f_params.data(), c, spec.embed_inputs(),
                    ec.patch_in[p].data(), concat_grad.data() + p * c, f_grad,
                    nullptr);
  }
}

}  // namespace detail

struct NeuralGrads {
  Vec f, g, h;
};

inline Vec clean_input(const NeuralModelSpec& spec, const Vec& values) {
  if (values.size() != spec.pixels())
    throw std::invalid_argument("clean_input: bad frame size");
  Vec in(spec.input_dim(), 0.0);
  std::copy(values.begin(), values.end(), in.begin());
  return in;
}

// Per-pixel logits of the classification head on the unmasked frame.
inline Vec neural_main_logits(const NeuralModelSpec& spec,
                              const ModelState& state, const Vec& values) {
  detail::EncoderCache ec;
  detail::encoder_forward(spec, state.f_params, clean_input(spec, values), ec);
  detail::HeadRun hr;
  detail::run_head(spec, state.h_params, spec.h_head_hidden, ec, hr);
  return hr.out;
}

inline Vec logits_to_probs(const Vec& logits) {
  Vec p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    p[i] = detail::sigmoid(logits[i]);
  return p;
}

// mean over all pixels of  softplus(z) - y z  (= binary cross entropy).
inline double bce_loss(const Vec& logits, const Vec& labels) {
  if (logits.size() != labels.size())
    throw std::invalid_argument("bce_loss: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    acc += detail::softplus(logits[i]) - labels[i] * logits[i];
  return acc / static_cast<double>(logits.size());
}

// Fraction of pixels where thresholding the probability at 1/2 disagrees
// with the label.
inline double pixel_error(const Vec& logits, const Vec& labels) {
  if (logits.size() != labels.size())
    throw std::invalid_argument("pixel_error: size mismatch");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool pred = logits[i] > 0.0;
    const bool truth = labels[i] >= 0.5;
    if (pred != truth) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(logits.size());
}

// Reconstruction loss on the masked pixels: mean squared error between the
// head output and the hidden values. The visible pixels never enter.
inline double masked_recon_value(const Vec& recon, const MaskedView& view) {
  if (view.masked_pixels.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < view.masked_pixels.size(); ++i) {
    const double d = recon[view.masked_pixels[i]] - view.masked_values[i];
    acc += d * d;
  }
  return acc / static_cast<double>(view.masked_pixels.size());
}

struct SslEval {
  double loss = 0.0;
  Vec f_grad, g_grad;
};

// Masked reconstruction loss and its gradients in f and g.
inline SslEval masked_recon_eval(const NeuralModelSpec& spec,
                                 const ModelState& state,
                                 const MaskedView& view) {
  SslEval ev;
  ev.f_grad.assign(spec.f_param_count(), 0.0);
  ev.g_grad.assign(spec.g_param_count(), 0.0);

  detail::EncoderCache ec;
  detail::encoder_forward(spec, state.f_params, view.input_with_mask, ec);
  detail::HeadRun hr;
  detail::run_head(spec, state.g_params, spec.g_head_hidden, ec, hr);
  ev.loss = masked_recon_value(hr.out, view);
  if (view.masked_pixels.empty()) return ev;

  Vec out_grad(spec.pixels(), 0.0);
  const double scale = 2.0 / static_cast<double>(view.masked_pixels.size());
  for (std::size_t i = 0; i < view.masked_pixels.size(); ++i) {
    const std::size_t p = view.masked_pixels[i];
    out_grad[p] = scale * (hr.out[p] - view.masked_values[i]);
  }
  detail::head_encoder_backward(spec, state.f_params, state.g_params,
                                spec.g_head_hidden, ec, hr, out_grad,
                                ev.g_grad.data(), ev.f_grad.data());
  return ev;
}

struct MainEval {
  double loss = 0.0;
  Vec logits;
  Vec f_grad, h_grad;
};

// Classification loss on the clean frame plus gradients in f and h.
inline MainEval main_task_eval(const NeuralModelSpec& spec,
                               const ModelState& state, const Vec& values,
                               const Vec& labels) {
  MainEval ev;
  ev.f_grad.assign(spec.f_param_count(), 0.0);
  ev.h_grad.assign(spec.h_param_count(), 0.0);

  detail::EncoderCache ec;
  detail::encoder_forward(spec, state.f_params, clean_input(spec, values), ec);
  detail::HeadRun hr;
  detail::run_head(spec, state.h_params, spec.h_head_hidden, ec, hr);
  ev.logits = hr.out;
  ev.loss = bce_loss(ev.logits, labels);

  const double inv_n = 1.0 / static_cast<double>(spec.pixels());
  Vec out_grad(spec.pixels());
  for (std::size_t i = 0; i < spec.pixels(); ++i)
    out_grad[i] = (detail::sigmoid(ev.logits[i]) - labels[i]) * inv_n;
  detail::head_encoder_backward(spec, state.f_params, state.h_params,
                                spec.h_head_hidden, ec, hr, out_grad,
                                ev.h_grad.data(), ev.f_grad.data());
  return ev;
}

inline ModelState init_neural_state(const NeuralModelSpec& spec,
                                    std::uint64_t seed) {
  spec.validate();
  auto fill_layer = [](Rng& rng, double* p, std::size_t rows,
                       std::size_t cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (std::size_t i = 0; i < rows * cols; ++i)
      p[i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < rows; ++i) p[rows * cols + i] = 0.0;
  };
  auto fill_head = [&](Rng& rng, Vec& params, std::size_t in,
                       std::size_t hidden, std::size_t out) {
    if (hidden == 0) {
      fill_layer(rng, params.data(), out, in);
    } else {
      fill_layer(rng, params.data(), hidden, in);
      fill_layer(rng, params.data() + hidden * (in + 1), out, hidden);
    }
  };

  ModelState s;
  s.f_params.assign(spec.f_param_count(), 0.0);
  s.g_params.assign(spec.g_param_count(), 0.0);
  s.h_params.assign(spec.h_param_count(), 0.0);
  {
    Rng rng(derive_key(seed, {kSaltInitF}));
    fill_layer(rng, s.f_params.data(), spec.hidden_dim, spec.embed_inputs());
    fill_layer(rng, s.f_params.data() + spec.embed_param_count(),
               spec.hidden_dim, spec.hidden_dim * spec.patch_count());
  }
  {
    Rng rng(derive_key(seed, {kSaltInitG}));
    fill_head(rng, s.g_params, spec.head_in_dim(), spec.g_head_hidden,
              spec.patch_pixels());
  }
  {
    Rng rng(derive_key(seed, {kSaltInitH}));
    fill_head(rng, s.h_params, spec.head_in_dim(), spec.h_head_hidden,
              spec.patch_pixels());
  }
  s.freeze();
  return s;
}

}  // namespace streamttt
