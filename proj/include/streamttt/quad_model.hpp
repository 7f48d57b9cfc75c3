#pragma once

// Quadratic tracking model with closed forms. The main loss is
//   l_m(theta; x) = (alpha/2) ||theta - W x||^2
// so the minimizer at frame x is W x and the gradient map is alpha-Lipschitz
// in x with constant beta = alpha * ||W||_2. The surrogate gradient is the
// main gradient minus a zero-mean perturbation delta_t with E||delta||^2 =
// sigma^2; delta_t depends only on (noise_seed, frame index), so revisiting
// a frame reproduces it exactly.

#include <cstdint>
#include <stdexcept>

#include "streamttt/frame.hpp"
#include "streamttt/linalg.hpp"
#include "streamttt/model_state.hpp"
#include "streamttt/rng.hpp"

namespace streamttt {

inline constexpr std::uint64_t kSaltDelta = 0x21;

struct QuadModelSpec {
  double alpha = 1.0;
  double sigma = 0.0;
  std::size_t dim = 1;
  Mat target_map;  // W, dim x dim

  void validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
    if (dim == 0) throw std::invalid_argument("dim must be positive");
    if (target_map.rows != dim || target_map.cols != dim)
      throw std::invalid_argument("target_map must be dim x dim");
  }

  double beta() const { return alpha * spectral_norm(target_map); }
};

// W = (beta/alpha) * I realizes a requested beta exactly.
inline QuadModelSpec make_quad_spec(double alpha, double beta, double sigma,
                                    std::size_t dim) {
  QuadModelSpec spec;
  spec.alpha = alpha;
  spec.sigma = sigma;
  spec.dim = dim;
  spec.target_map = Mat::scaled_identity(dim, alpha > 0.0 ? beta / alpha : 0.0);
  spec.validate();
  return spec;
}

inline Vec quad_target(const QuadModelSpec& spec, const Vec& x) {
  return matvec(spec.target_map, x);
}

inline double quad_main_loss(const QuadModelSpec& spec, const Vec& theta,
                             const Vec& x) {
  Vec r = sub(theta, quad_target(spec, x));
  return 0.5 * spec.alpha * norm_sq(r);
}

inline Vec quad_main_grad(const QuadModelSpec& spec, const Vec& theta,
                          const Vec& x) {
  Vec g = sub(theta, quad_target(spec, x));
  for (double& v : g) v *= spec.alpha;
  return g;
}

inline Vec quad_delta(const QuadModelSpec& spec, std::uint64_t noise_seed,
                      std::int64_t frame_index) {
  Rng rng(derive_key(noise_seed,
                     {kSaltDelta, static_cast<std::uint64_t>(frame_index)}));
  const double per_coord = spec.sigma / std::sqrt(static_cast<double>(spec.dim));
  Vec d(spec.dim);
  for (double& v : d) v = per_coord * rng.normal();
  return d;
}

// grad l_s = grad l_m - delta_t; the matching potential is
// l_s = l_m - delta^T theta (defined up to a constant).
inline Vec quad_ssl_grad(const QuadModelSpec& spec, const Vec& theta,
                         const Frame& frame, std::uint64_t noise_seed) {
  Vec g = quad_main_grad(spec, theta, frame.values);
  Vec d = quad_delta(spec, noise_seed, frame.index);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= d[i];
  return g;
}

inline double quad_ssl_loss(const QuadModelSpec& spec, const Vec& theta,
                            const Frame& frame, std::uint64_t noise_seed) {
  Vec d = quad_delta(spec, noise_seed, frame.index);
  return quad_main_loss(spec, theta, frame.values) - dot(d, theta);
}

inline ModelState make_quad_state(const QuadModelSpec& spec, const Vec& theta0) {
  if (theta0.size() != spec.dim)
    throw std::invalid_argument("theta0 must have length dim");
  ModelState s;
  s.f_params = theta0;
  s.freeze();
  return s;
}

}  // namespace streamttt
