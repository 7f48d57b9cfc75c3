#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamttt/linalg.hpp"

namespace streamttt {

// One stream element x_t. For latent streams `values` is a length-d vector,
// for videos it is H*W grayscale intensities in [0, 1], row-major.
struct Frame {
  Vec values;
  std::int64_t index = 0;
};

struct LabeledFrame {
  Frame frame;
  Vec label;
};

enum class StreamKind {
  kConstant,
  kLinearDrift,
  kBoundedRandomWalk,
  kRegimeSwitch,
  kShapeVideo,
};

inline const char* to_string(StreamKind k) {
  switch (k) {
    case StreamKind::kConstant: return "constant";
    case StreamKind::kLinearDrift: return "linear-drift";
    case StreamKind::kBoundedRandomWalk: return "bounded-random-walk";
    case StreamKind::kRegimeSwitch: return "regime-switch";
    case StreamKind::kShapeVideo: return "shape-video";
  }
  return "?";
}

inline StreamKind stream_kind_from_string(const std::string& s) {
  if (s == "constant") return StreamKind::kConstant;
  if (s == "linear-drift") return StreamKind::kLinearDrift;
  if (s == "bounded-random-walk") return StreamKind::kBoundedRandomWalk;
  if (s == "regime-switch") return StreamKind::kRegimeSwitch;
  if (s == "shape-video") return StreamKind::kShapeVideo;
  throw std::invalid_argument("unknown stream kind: " + s);
}

struct StreamSpec {
  StreamKind kind = StreamKind::kConstant;
  std::int64_t length = 1;  // T
  std::size_t dim = 1;      // latent kinds
  std::size_t height = 0, width = 0;  // shape-video
  double eta = 0.0;  // max per-step L2 displacement outside regime switches
  std::vector<std::int64_t> regime_times;  // step t -> t+1 jumps, 1 <= t < T
  std::uint64_t seed = 0;

  // Latent label map y_t = W x_t; identity when unset.
  std::optional<Mat> label_map;

  // Shape-video texture. The square has intensity 1.0; the background level
  // drifts inside [background_min, background_max] and is re-drawn at every
  // regime switch, together with the shape position.
  double regime_jump_scale = 10.0;  // latent jump magnitude, in units of eta
  double background_min = 0.0;
  double background_max = 0.5;
  double noise_amplitude = 0.0;  // per-pixel bounded-walk noise, 0 disables
  int shape_radius = 2;

  bool is_video() const { return kind == StreamKind::kShapeVideo; }
  std::size_t frame_size() const { return is_video() ? height * width : dim; }
};

}  // namespace streamttt
