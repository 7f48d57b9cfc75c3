#pragma once

// Adaptable parameters split into encoder f, reconstruction head g and
// prediction head h. freeze() captures the reference point used for
// drift reporting and for the reset-to-init policy; h never moves after it.

#include <cstdint>
#include <cstring>
#include <stdexcept>

#include "streamttt/linalg.hpp"

namespace streamttt {

struct ParamSnapshot {
  Vec f, g, h;
};

struct ModelState {
  Vec f_params, g_params, h_params;
  ParamSnapshot frozen_init;

  void freeze() { frozen_init = {f_params, g_params, h_params}; }

  void restore_frozen() {
    f_params = frozen_init.f;
    g_params = frozen_init.g;
    h_params = frozen_init.h;
  }

  std::size_t param_count() const {
    return f_params.size() + g_params.size() + h_params.size();
  }
};

// L2 distance of the adaptable parameters (f and g) from the frozen point.
inline double drift_from_frozen(const ModelState& s) {
  if (s.frozen_init.f.size() != s.f_params.size() ||
      s.frozen_init.g.size() != s.g_params.size())
    throw std::logic_error("drift_from_frozen: state was never frozen");
  double acc = 0.0;
  for (std::size_t i = 0; i < s.f_params.size(); ++i) {
    const double d = s.f_params[i] - s.frozen_init.f[i];
    acc += d * d;
  }
  for (std::size_t i = 0; i < s.g_params.size(); ++i) {
    const double d = s.g_params[i] - s.frozen_init.g[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

// FNV-1a over the raw bytes of the frozen snapshot. Used to assert that
// ablation rows really share one set of initial weights.
inline std::uint64_t frozen_checksum(const ModelState& s) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const Vec& v) {
    for (double x : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    }
  };
  mix(s.frozen_init.f);
  mix(s.frozen_init.g);
  mix(s.frozen_init.h);
  return h;
}

}  // namespace streamttt
