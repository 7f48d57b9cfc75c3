#pragma once

// Synthetic test streams. Latent streams obey the per-step displacement bound
// ||x_{t+1} - x_t|| <= eta exactly by construction; the shape video enforces
// the same bound by measuring each rendered step and shrinking the motion
// until it fits. Regime switches are the only steps allowed to jump.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "streamttt/csvfmt.hpp"
#include "streamttt/frame.hpp"
#include "streamttt/linalg.hpp"
#include "streamttt/rng.hpp"

namespace streamttt {

namespace detail {
inline constexpr std::uint64_t kSaltLatent = 0x10;
inline constexpr std::uint64_t kSaltVideo = 0x11;
inline constexpr std::uint64_t kSaltShuffle = 0x12;
inline constexpr std::uint64_t kSaltStills = 0x13;
}  // namespace detail

inline void validate_stream_spec(const StreamSpec& spec) {
  if (spec.length < 1) throw std::invalid_argument("stream length must be >= 1");
  if (!std::isfinite(spec.eta) || spec.eta < 0.0)
    throw std::invalid_argument("eta must be finite and non-negative");
  std::int64_t prev = 0;
  for (std::int64_t r : spec.regime_times) {
    if (r < 1 || r >= spec.length)
      throw std::invalid_argument("regime time out of range [1, T)");
    if (r <= prev) throw std::invalid_argument("regime times must be strictly increasing");
    prev = r;
  }
  if (spec.is_video()) {
    if (spec.height < 8 || spec.width < 8)
      throw std::invalid_argument("shape video needs height, width >= 8");
    const std::size_t side = 2 * static_cast<std::size_t>(spec.shape_radius) + 1;
    if (spec.shape_radius < 0 || side > spec.height || side > spec.width)
      throw std::invalid_argument("shape larger than frame");
  } else {
    if (spec.dim < 1) throw std::invalid_argument("latent dim must be >= 1");
    if (spec.label_map &&
        (spec.label_map->cols != spec.dim))
      throw std::invalid_argument("label map column count must equal dim");
  }
}

inline Vec latent_label(const StreamSpec& spec, const Vec& x) {
  if (spec.label_map) return matvec(*spec.label_map, x);
  return x;
}

inline std::vector<LabeledFrame> gen_latent_stream(const StreamSpec& spec) {
  if (spec.is_video())
    throw std::invalid_argument("gen_latent_stream: latent kinds only");
  validate_stream_spec(spec);

  Rng rng(derive_key(spec.seed, {detail::kSaltLatent}));
  const std::size_t d = spec.dim;
  Vec x(d);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);

  Vec drift_dir;
  if (spec.kind == StreamKind::kLinearDrift) drift_dir = random_unit_vec(d, rng);

  std::vector<LabeledFrame> out;
  out.reserve(static_cast<std::size_t>(spec.length));
  std::size_t next_regime = 0;
  for (std::int64_t t = 1; t <= spec.length; ++t) {
    out.push_back({Frame{x, t}, latent_label(spec, x)});
    if (t == spec.length) break;
    const bool jump = next_regime < spec.regime_times.size() &&
                      spec.regime_times[next_regime] == t;
    if (jump) ++next_regime;
    switch (spec.kind) {
      case StreamKind::kConstant:
        break;
      case StreamKind::kLinearDrift:
        axpy(spec.eta, drift_dir, x);
        break;
      case StreamKind::kBoundedRandomWalk:
        if (spec.eta > 0.0) axpy(spec.eta, random_unit_vec(d, rng), x);
        break;
      case StreamKind::kRegimeSwitch: {
        const double step = jump ? spec.regime_jump_scale * spec.eta : spec.eta;
        if (step > 0.0) axpy(step, random_unit_vec(d, rng), x);
        break;
      }
      default:
        throw std::invalid_argument("gen_latent_stream: latent kinds only");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape video

// Fractional coverage of pixel (row, col) by an axis-aligned square of
// half-side radius+0.5 centered at (cy, cx). Pixel centers sit on integers.
inline double square_coverage(double center, int pixel, int radius) {
  const double h = radius + 0.5;
  const double lo = std::max(pixel - 0.5, center - h);
  const double hi = std::min(pixel + 0.5, center + h);
  return std::clamp(hi - lo, 0.0, 1.0);
}

// Renders one frame; `noise` may be empty. Pixel = bg + cov*(1 - bg) + noise,
// clamped to [0, 1]. The label marks pixels with coverage >= 0.5.
inline void render_shape_frame(std::size_t height, std::size_t width, double cy,
                               double cx, int radius, double bg,
                               const Vec& noise, Vec& values, Vec& label) {
  const std::size_t n = height * width;
  values.assign(n, 0.0);
  label.assign(n, 0.0);
  for (std::size_t r = 0; r < height; ++r) {
    const double cov_y = square_coverage(cy, static_cast<int>(r), radius);
    for (std::size_t c = 0; c < width; ++c) {
      const double cov = cov_y * square_coverage(cx, static_cast<int>(c), radius);
      const std::size_t p = r * width + c;
      double v = bg + cov * (1.0 - bg);
      if (!noise.empty()) v += noise[p];
      values[p] = std::clamp(v, 0.0, 1.0);
      label[p] = cov >= 0.5 ? 1.0 : 0.0;
    }
  }
}

namespace detail {

struct VideoState {
  double cx, cy, vx, vy;
  double bg_base, bg_off;
  Vec noise;
};

inline double reflect_into(double v, double lo, double hi) {
  if (lo >= hi) return lo;
  const double span = hi - lo;
  double u = std::fmod(v - lo, 2.0 * span);
  if (u < 0) u += 2.0 * span;
  return u <= span ? lo + u : hi - (u - span);
}

struct VideoParams {
  double speed = 0.4;        // px per frame before smoothness shrinking
  double bg_band = 0.05;     // background drift half-band inside a regime
  double bg_step = 0.004;    // background walk step
  double lo_x, hi_x, lo_y, hi_y;
};

inline void randomize_regime(const StreamSpec& spec, const VideoParams& p,
                             VideoState& st, Rng& rng) {
  st.cx = rng.uniform(p.lo_x, p.hi_x);
  st.cy = rng.uniform(p.lo_y, p.hi_y);
  const double ang = rng.uniform(0.0, 6.283185307179586);
  st.vx = p.speed * std::cos(ang);
  st.vy = p.speed * std::sin(ang);
  const double band = std::min(p.bg_band, 0.5 * (spec.background_max - spec.background_min));
  st.bg_base = rng.uniform(spec.background_min + band, std::max(spec.background_min + band, spec.background_max - band));
  st.bg_off = 0.0;
  if (spec.noise_amplitude > 0.0) {
    st.noise.resize(spec.height * spec.width);
    for (auto& v : st.noise) v = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude);
  } else {
    st.noise.clear();
  }
}

}  // namespace detail

inline std::vector<LabeledFrame> gen_shape_video(const StreamSpec& spec) {
  if (!spec.is_video()) throw std::invalid_argument("gen_shape_video: kind must be shape-video");
  validate_stream_spec(spec);

  Rng rng(derive_key(spec.seed, {detail::kSaltVideo}));
  detail::VideoParams params;
  params.lo_x = spec.shape_radius;
  params.hi_x = static_cast<double>(spec.width - 1) - spec.shape_radius;
  params.lo_y = spec.shape_radius;
  params.hi_y = static_cast<double>(spec.height - 1) - spec.shape_radius;

  detail::VideoState st;
  detail::randomize_regime(spec, params, st, rng);

  std::vector<LabeledFrame> out;
  out.reserve(static_cast<std::size_t>(spec.length));
  Vec values, label;
  render_shape_frame(spec.height, spec.width, st.cy, st.cx, spec.shape_radius,
                     st.bg_base + st.bg_off, st.noise, values, label);
  out.push_back({Frame{values, 1}, label});

  const std::size_t n_pix = spec.height * spec.width;
  std::size_t next_regime = 0;
  Vec noise_step(spec.noise_amplitude > 0.0 ? n_pix : 0);
  Vec cand_values, cand_label;

  for (std::int64_t t = 1; t < spec.length; ++t) {
    const bool jump = next_regime < spec.regime_times.size() &&
                      spec.regime_times[next_regime] == t;
    if (jump) {
      ++next_regime;
      detail::randomize_regime(spec, params, st, rng);
      render_shape_frame(spec.height, spec.width, st.cy, st.cx, spec.shape_radius,
                         st.bg_base + st.bg_off, st.noise, values, label);
      out.push_back({Frame{values, t + 1}, label});
      continue;
    }

    // Draw this step's randomness once; retries only shrink the step.
    const double bg_delta = rng.uniform(-params.bg_step, params.bg_step);
    for (auto& v : noise_step)
      v = rng.uniform(-spec.noise_amplitude / 8.0, spec.noise_amplitude / 8.0);

    const detail::VideoState prev = st;
    double scale = 1.0;
    for (int attempt = 0;; ++attempt) {
      st = prev;
      if (scale > 0.0) {
        double nx = st.cx + scale * st.vx;
        double ny = st.cy + scale * st.vy;
        if (nx < params.lo_x || nx > params.hi_x) {
          nx = detail::reflect_into(nx, params.lo_x, params.hi_x);
          st.vx = -st.vx;
        }
        if (ny < params.lo_y || ny > params.hi_y) {
          ny = detail::reflect_into(ny, params.lo_y, params.hi_y);
          st.vy = -st.vy;
        }
        st.cx = nx;
        st.cy = ny;
        const double band = std::min(params.bg_band,
                                     0.5 * (spec.background_max - spec.background_min));
        st.bg_off = detail::reflect_into(st.bg_off + scale * bg_delta, -band, band);
        for (std::size_t p = 0; p < noise_step.size(); ++p)
          st.noise[p] = detail::reflect_into(st.noise[p] + scale * noise_step[p],
                                             -spec.noise_amplitude, spec.noise_amplitude);
      }
      render_shape_frame(spec.height, spec.width, st.cy, st.cx, spec.shape_radius,
                         st.bg_base + st.bg_off, st.noise, cand_values, cand_label);
      double dist_sq = 0.0;
      for (std::size_t p = 0; p < n_pix; ++p) {
        const double dv = cand_values[p] - values[p];
        dist_sq += dv * dv;
      }
      if (dist_sq <= spec.eta * spec.eta || scale == 0.0) break;
      scale = attempt < 60 ? scale * 0.5 : 0.0;
    }
    values = cand_values;
    label = cand_label;
    out.push_back({Frame{values, t + 1}, label});
  }
  return out;
}

inline std::vector<LabeledFrame> gen_stream(const StreamSpec& spec) {
  return spec.is_video() ? gen_shape_video(spec) : gen_latent_stream(spec);
}

// Independent still images from the same renderer, for training-time training.
// Each still gets a fresh scene (position, background, noise).
inline std::vector<LabeledFrame> gen_training_stills(const StreamSpec& spec,
                                                     std::size_t count,
                                                     std::uint64_t seed) {
  if (!spec.is_video())
    throw std::invalid_argument("gen_training_stills: video spec required");
  validate_stream_spec(spec);
  Rng rng(derive_key(seed, {detail::kSaltStills}));
  detail::VideoParams params;
  params.lo_x = spec.shape_radius;
  params.hi_x = static_cast<double>(spec.width - 1) - spec.shape_radius;
  params.lo_y = spec.shape_radius;
  params.hi_y = static_cast<double>(spec.height - 1) - spec.shape_radius;

  std::vector<LabeledFrame> out;
  out.reserve(count);
  detail::VideoState st;
  Vec values, label;
  for (std::size_t i = 0; i < count; ++i) {
    detail::randomize_regime(spec, params, st, rng);
    render_shape_frame(spec.height, spec.width, st.cy, st.cx, spec.shape_radius,
                       st.bg_base + st.bg_off, st.noise, values, label);
    out.push_back({Frame{values, static_cast<std::int64_t>(i + 1)}, label});
  }
  return out;
}

// Uniform random permutation; frames are re-indexed 1..T so the result is
// again a well-formed stream.
inline std::vector<LabeledFrame> shuffle_stream(std::vector<LabeledFrame> stream,
                                                std::uint64_t seed) {
  if (stream.empty()) throw std::invalid_argument("shuffle_stream: empty stream");
  Rng rng(derive_key(seed, {detail::kSaltShuffle}));
  for (std::size_t i = stream.size() - 1; i > 0; --i) {
    const std::size_t j = rng.uniform_index(i + 1);
    std::swap(stream[i], stream[j]);
  }
  for (std::size_t i = 0; i < stream.size(); ++i)
    stream[i].frame.index = static_cast<std::int64_t>(i + 1);
  return stream;
}

// ---------------------------------------------------------------------------
// Stream file format: one header line, then one frame per line with the label
// after a '|' separator. Values are %.17g decimal text.

inline void write_stream(std::ostream& os, const StreamSpec& spec,
                         const std::vector<LabeledFrame>& frames) {
  os << "# stream-ttt kind=" << to_string(spec.kind) << " T=" << frames.size()
     << " dims=";
  if (spec.is_video())
    os << spec.height << 'x' << spec.width;
  else
    os << spec.dim;
  os << " eta=" << format_g17(spec.eta) << " seed=" << spec.seed << '\n';
  for (const auto& lf : frames) {
    for (std::size_t i = 0; i < lf.frame.values.size(); ++i) {
      if (i) os << ' ';
      os << format_g17(lf.frame.values[i]);
    }
    os << " |";
    for (double v : lf.label) os << ' ' << format_g17(v);
    os << '\n';
  }
}

inline std::vector<LabeledFrame> read_stream(std::istream& is, StreamSpec* spec_out = nullptr) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# stream-ttt", 0) != 0)
    throw std::runtime_error("stream file: missing header");
  StreamSpec spec;
  {
    std::istringstream hs(line);
    std::string tok;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "kind") spec.kind = stream_kind_from_string(val);
      else if (key == "T") spec.length = std::stoll(val);
      else if (key == "eta") spec.eta = std::stod(val);
      else if (key == "seed") spec.seed = std::stoull(val);
      else if (key == "dims") {
        const auto x = val.find('x');
        if (x == std::string::npos) {
          spec.dim = std::stoul(val);
        } else {
          spec.height = std::stoul(val.substr(0, x));
          spec.width = std::stoul(val.substr(x + 1));
        }
      }
    }
  }
  std::vector<LabeledFrame> frames;
  std::int64_t t = 1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    LabeledFrame lf;
    lf.frame.index = t++;
    std::string tok;
    bool in_label = false;
    while (ls >> tok) {
      if (tok == "|") {
        in_label = true;
        continue;
      }
      (in_label ? lf.label : lf.frame.values).push_back(std::stod(tok));
    }
    frames.push_back(std::move(lf));
  }
  if (frames.empty()) throw std::runtime_error("stream file: no frames");
  if (spec_out) {
    spec.length = static_cast<std::int64_t>(frames.size());
    *spec_out = spec;
  }
  return frames;
}

}  // namespace streamttt
