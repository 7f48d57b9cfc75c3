#pragma once

// Closed forms for the quadratic tracking model and the excess-risk bound
//   E[l_m(theta_tilde) - l_m(theta*)] <= (1/(2 alpha)) (k^2 beta^2 eta^2 + sigma^2 / k).
// The window stationary point decomposes into a drift part W(xbar - x_t) and
// a noise part deltabar/alpha; for linear drift both have exact expectations,
// which the Monte-Carlo sweep is checked against.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "streamttt/executor.hpp"
#include "streamttt/frame.hpp"
#include "streamttt/linalg.hpp"
#include "streamttt/quad_model.hpp"
#include "streamttt/rng.hpp"
#include "streamttt/streamgen.hpp"

namespace streamttt {

inline constexpr std::uint64_t kSaltSweepTrial = 0x51;

struct TheoremInstance {
  double alpha = 1.0;
  double beta = 1.0;
  double eta = 0.02;
  double sigma = 1.0;
  std::size_t dim = 8;
  std::size_t length = 512;  // frames per trial stream
  StreamKind drift = StreamKind::kLinearDrift;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (!(beta >= 0.0) || !(eta >= 0.0) || !(sigma >= 0.0))
      throw std::invalid_argument("beta, eta, sigma must be non-negative");
    if (dim == 0 || length == 0)
      throw std::invalid_argument("dim and length must be positive");
  }

  QuadModelSpec quad_spec() const {
    return make_quad_spec(alpha, beta, sigma, dim);
  }
};

struct BoundReport {
  std::size_t k = 1;
  double measured_mean = 0.0;
  double measured_stderr = 0.0;
  double oracle = 0.0;
  double bias_term = 0.0;
  double variance_term = 0.0;
  double bound = 0.0;
  double cross_term_mean = 0.0;    // diagnostic; zero in expectation
  double cross_term_stderr = 0.0;
};

inline double theorem_bound(double alpha, double beta, double eta, double sigma,
                            std::size_t k) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  const double kd = static_cast<double>(k);
  return (kd * kd * beta * beta * eta * eta + sigma * sigma / kd) /
         (2.0 * alpha);
}

struct OptimalK {
  double continuous = std::numeric_limits<double>::infinity();
  std::optional<std::size_t> integer;  // true integer argmin of the bound
};

// continuous = (sigma^2 / (beta^2 eta^2))^(1/3), the constant-free sweet
// spot. The bound itself is stationary at that value over 2^(1/3); the
// integer field minimizes the bound exactly (the curve is unimodal, so
// checking the two neighbors of its stationary point suffices).
inline OptimalK optimal_k(double alpha, double beta, double eta, double sigma) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  OptimalK out;
  const double denom = beta * beta * eta * eta;
  if (denom <= 0.0) return out;  // bound decreases forever; no finite optimum
  out.continuous = std::cbrt(sigma * sigma / denom);
  const double stationary = std::cbrt(sigma * sigma / (2.0 * denom));
  const std::size_t lo =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(stationary)));
  const std::size_t hi = std::max<std::size_t>(
      lo, static_cast<std::size_t>(std::ceil(stationary)));
  out.integer = theorem_bound(alpha, beta, eta, sigma, lo) <=
                        theorem_bound(alpha, beta, eta, sigma, hi)
                    ? lo
                    : hi;
  return out;
}

// theta_tilde = W xbar + deltabar / alpha: the unique stationary point of the
// window-averaged surrogate gradient (1/k) sum alpha (theta - W x_i) - delta_i.
inline Vec closed_form_window_solution(const QuadModelSpec& spec,
                                       const std::vector<Frame>& window,
                                       const std::vector<Vec>& deltas) {
  if (window.empty())
    throw std::invalid_argument("closed_form_window_solution: empty window");
  if (deltas.size() != window.size())
    throw std::invalid_argument("closed_form_window_solution: size mismatch");
  Vec x_mean(spec.dim, 0.0), d_mean(spec.dim, 0.0);
  for (std::size_t i = 0; i < window.size(); ++i) {
    axpy(1.0, window[i].values, x_mean);
    axpy(1.0, deltas[i], d_mean);
  }
  const double inv_k = 1.0 / static_cast<double>(window.size());
  for (double& v : x_mean) v *= inv_k;
  for (double& v : d_mean) v *= inv_k;
  Vec out = matvec(spec.target_map, x_mean);
  axpy(1.0 / spec.alpha, d_mean, out);
  return out;
}

inline Vec closed_form_window_solution(const QuadModelSpec& spec,
                                       const std::vector<Frame>& window,
                                       std::uint64_t noise_seed) {
  std::vector<Vec> deltas;
  deltas.reserve(window.size());
  for (const Frame& f : window)
    deltas.push_back(quad_delta(spec, noise_seed, f.index));
  return closed_form_window_solution(spec, window, deltas);
}

struct RiskSplit {
  double bias_term = 0.0;
  double variance_term = 0.0;
  double total() const { return bias_term + variance_term; }
};

namespace detail {

inline bool is_scalar_multiple_of_identity(const Mat& w, double* scale) {
  if (w.rows != w.cols) return false;
  const double s = w.rows > 0 ? w(0, 0) : 0.0;
  for (std::size_t r = 0; r < w.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) {
      const double want = r == c ? s : 0.0;
      if (std::abs(w(r, c) - want) > 1e-12) return false;
    }
  *scale = s;
  return true;
}

}  // namespace detail

// Exact E[l_m(theta_tilde) - l_m(theta*)] for a full window of k frames.
// Only drift geometries with analytic window means are supported, and the
// target map must be isotropic so the drift direction drops out.
inline RiskSplit expected_excess_risk_oracle(const QuadModelSpec& spec,
                                             std::size_t k, StreamKind kind,
                                             double eta) {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  double w_scale = 0.0;
  if (!detail::is_scalar_multiple_of_identity(spec.target_map, &w_scale))
    throw std::invalid_argument(
        "excess risk oracle requires an isotropic target map");
  RiskSplit out;
  const double kd = static_cast<double>(k);
  out.variance_term = spec.sigma * spec.sigma / (2.0 * spec.alpha * kd);
  switch (kind) {
    case StreamKind::kConstant:
      out.bias_term = 0.0;
      break;
    case StreamKind::kLinearDrift: {
      // positions t-k+1..t on a line: || xbar - x_t || = (k-1) eta / 2
      const double dist = (kd - 1.0) * eta / 2.0;
      const double shifted = w_scale * dist;  // ||W (xbar - x_t)||
      out.bias_term = 0.5 * spec.alpha * shifted * shifted;
      break;
    }
    default:
      throw std::invalid_argument(
          std::string("excess risk oracle: unsupported stream kind ") +
          to_string(kind));
  }
  return out;
}

namespace detail {

struct TrialStats {
  double excess_mean = 0.0;
  double cross_mean = 0.0;
};

// One simulated stream: at each full window compute theta_tilde exactly and
// score it on the newest frame. Window sums are maintained incrementally.
inline TrialStats sweep_trial(const TheoremInstance& inst,
                              const QuadModelSpec& spec, std::size_t k,
                              std::uint64_t trial_seed) {
  StreamSpec stream_spec;
  stream_spec.kind = inst.drift;
  stream_spec.length = static_cast<std::int64_t>(inst.length);
  stream_spec.dim = inst.dim;
  stream_spec.eta = inst.eta;
  stream_spec.seed = trial_seed;
  const std::vector<LabeledFrame> stream = gen_latent_stream(stream_spec);
  if (stream.size() < k)
    throw std::invalid_argument("theorem sweep: stream shorter than window");

  Vec x_sum(inst.dim, 0.0), d_sum(inst.dim, 0.0);
  std::deque<const Vec*> x_window;
  std::deque<Vec> d_window;
  const double inv_k = 1.0 / static_cast<double>(k);

  TrialStats stats;
  std::size_t scored = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Vec& x_t = stream[i].frame.values;
    Vec delta = quad_delta(spec, trial_seed, stream[i].frame.index);
    axpy(1.0, x_t, x_sum);
    axpy(1.0, delta, d_sum);
    x_window.push_back(&x_t);
    d_window.push_back(std::move(delta));
    if (x_window.size() > k) {
      axpy(-1.0, *x_window.front(), x_sum);
      axpy(-1.0, d_window.front(), d_sum);
      x_window.pop_front();
      d_window.pop_front();
    }
    if (x_window.size() < k) continue;  // warm-up frames are not scored

    // drift part a = W (xbar - x_t), noise part b = deltabar / alpha
    Vec diff(inst.dim);
    for (std::size_t j = 0; j < inst.dim; ++j)
      diff[j] = x_sum[j] * inv_k - x_t[j];
    Vec a = matvec(spec.target_map, diff);
    Vec b(inst.dim);
    for (std::size_t j = 0; j < inst.dim; ++j)
      b[j] = d_sum[j] * inv_k / spec.alpha;
    const double excess =
        0.5 * spec.alpha * (norm_sq(a) + norm_sq(b) + 2.0 * dot(a, b));
    const double cross = spec.alpha * dot(a, b);
    stats.excess_mean += excess;
    stats.cross_mean += cross;
    ++scored;
  }
  stats.excess_mean /= static_cast<double>(scored);
  stats.cross_mean /= static_cast<double>(scored);
  return stats;
}

}  // namespace detail

// Monte-Carlo estimate of the excess risk across a k grid, with the analytic
// oracle and the bound attached. Trials are independent streams; cells run in
// parallel and the output does not depend on the worker count.
inline std::vector<BoundReport> theorem_sweep(const TheoremInstance& inst,
                                              const std::vector<std::size_t>& k_grid,
                                              std::size_t trials,
                                              std::size_t jobs = 1) {
  inst.validate();
  if (trials < 1) throw std::invalid_argument("trials must be at least 1");
  for (std::size_t k : k_grid)
    if (k < 1 || k > inst.length)
      throw std::invalid_argument("k grid entry outside [1, length]");

  const QuadModelSpec spec = inst.quad_spec();
  std::vector<detail::TrialStats> cells(k_grid.size() * trials);
  parallel_for(cells.size(), jobs, [&](std::size_t cell) {
    const std::size_t ki = cell / trials;
    const std::size_t trial = cell % trials;
    const std::uint64_t trial_seed = derive_key(
        inst.seed, {kSaltSweepTrial, static_cast<std::uint64_t>(k_grid[ki]),
                    static_cast<std::uint64_t>(trial)});
    cells[cell] = detail::sweep_trial(inst, spec, k_grid[ki], trial_seed);
  });

  std::vector<BoundReport> out(k_grid.size());
  for (std::size_t ki = 0; ki < k_grid.size(); ++ki) {
    BoundReport& rep = out[ki];
    rep.k = k_grid[ki];
    double ex_sum = 0.0, cr_sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      ex_sum += cells[ki * trials + t].excess_mean;
      cr_sum += cells[ki * trials + t].cross_mean;
    }
    rep.measured_mean = ex_sum / static_cast<double>(trials);
    rep.cross_term_mean = cr_sum / static_cast<double>(trials);
    double ex_var = 0.0, cr_var = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const double de = cells[ki * trials + t].excess_mean - rep.measured_mean;
      const double dc = cells[ki * trials + t].cross_mean - rep.cross_term_mean;
      ex_var += de * de;
      cr_var += dc * dc;
    }
    if (trials > 1) {
      const double n = static_cast<double>(trials);
      rep.measured_stderr = std::sqrt(ex_var / (n - 1.0) / n);
      rep.cross_term_stderr = std::sqrt(cr_var / (n - 1.0) / n);
    }
    const RiskSplit split =
        expected_excess_risk_oracle(spec, rep.k, inst.drift, inst.eta);
    rep.bias_term = split.bias_term;
    rep.variance_term = split.variance_term;
    rep.oracle = split.total();
    rep.bound = theorem_bound(inst.alpha, inst.beta, inst.eta, inst.sigma, rep.k);
  }
  return out;
}

struct LemmaReport {
  double gap = 0.0;
  double bound = 0.0;
  bool holds = false;
};

// f(x) = (1/2) x^T H x + b^T x perturbed by + v^T x. Both minimizers are
// solved in closed form; the gap f(x_tilde*) - f(x*) must not exceed
// ||v||^2 / (2 alpha) whenever lambda_min(H) >= alpha.
inline LemmaReport verify_lemma(const Mat& h, const Vec& b, const Vec& v,
                                double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (h.rows != h.cols || h.rows != b.size() || b.size() != v.size())
    throw std::invalid_argument("verify_lemma: dimension mismatch");
  for (std::size_t r = 0; r < h.rows; ++r)
    for (std::size_t c = r + 1; c < h.cols; ++c)
      if (std::abs(h(r, c) - h(c, r)) > 1e-12)
        throw std::invalid_argument("verify_lemma: H must be symmetric");
  if (min_eigenvalue(h) < alpha - 1e-9)
    throw std::invalid_argument(
        "verify_lemma: H is not alpha-strongly convex for the given alpha");

  const Mat chol = cholesky(h);
  Vec neg_b = scaled(b, -1.0);
  Vec x_star = chol_solve(chol, neg_b);
  Vec neg_bv = scaled(add(b, v), -1.0);
  Vec x_tilde = chol_solve(chol, neg_bv);

  auto f = [&](const Vec& x) {
    return 0.5 * dot(x, matvec(h, x)) + dot(b, x);
  };
  LemmaReport rep;
  rep.gap = f(x_tilde) - f(x_star);
  rep.bound = norm_sq(v) / (2.0 * alpha);
  rep.holds = rep.gap <= rep.bound + 1e-9;
  return rep;
}

struct LemmaInstance {
  Mat h;
  Vec b, v;
  double alpha = 1.0;
};

// H = Q diag(spectrum) Q^T with spectrum in [alpha, 10 alpha].
inline LemmaInstance random_lemma_instance(Rng& rng, std::size_t max_dim,
                                           double alpha) {
  LemmaInstance inst;
  inst.alpha = alpha;
  const std::size_t d = 1 + rng.uniform_index(max_dim);
  Mat q = random_orthogonal(d, rng);
  Vec eigs(d);
  for (double& e : eigs) e = rng.uniform(alpha, 10.0 * alpha);
  inst.h = Mat(d, d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        acc += q(i, r) * eigs[i] * q(i, c);
      inst.h(r, c) = acc;
    }
  // force exact symmetry against rounding
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = r + 1; c < d; ++c) {
      const double s = 0.5 * (inst.h(r, c) + inst.h(c, r));
      inst.h(r, c) = s;
      inst.h(c, r) = s;
    }
  inst.b = gaussian_vec(d, rng, 2.0);
  inst.v = gaussian_vec(d, rng, 2.0);
  return inst;
}

}  // namespace streamttt
