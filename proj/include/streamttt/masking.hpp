#pragma once

// Patch masking for the reconstruction task. A frame is split into
// non-overlapping patches; round(ratio * patch_count) of them are masked,
// chosen uniformly without replacement from the seed.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "streamttt/linalg.hpp"
#include "streamttt/rng.hpp"

namespace streamttt {

struct PatchGrid {
  std::size_t height = 1, width = 1, patch = 1;

  std::size_t pixel_count() const { return height * width; }
  std::size_t patches_y() const { return height / patch; }
  std::size_t patches_x() const { return width / patch; }
  std::size_t patch_count() const { return patches_y() * patches_x(); }

  void validate() const {
    if (patch == 0 || height % patch != 0 || width % patch != 0)
      throw std::invalid_argument("patch size must divide height and width");
  }

  // Latent vectors mask one coordinate per "patch".
  static PatchGrid flat(std::size_t dim) { return {1, dim, 1}; }
};

struct MaskedView {
  std::vector<std::size_t> visible_idx;   // patch indices, ascending
  std::vector<std::size_t> masked_idx;    // patch indices, ascending
  std::vector<std::size_t> masked_pixels; // flat pixel indices of masked patches
  Vec masked_values;                      // original values at masked_pixels
  Vec input_with_mask;                    // [values with masked pixels zeroed | mask channel]
};

inline MaskedView mask_frame(const Vec& values, const PatchGrid& grid,
                             double ratio, std::uint64_t seed) {
  grid.validate();
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument("mask ratio must be in [0, 1]");
  if (values.size() != grid.pixel_count())
    throw std::invalid_argument("mask_frame: frame size does not match grid");

  const std::size_t patches = grid.patch_count();
  const std::size_t n_masked = std::min<std::size_t>(
      patches, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(patches))));

  std::vector<std::size_t> order(patches);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n_masked; ++i) {
    const std::size_t j = i + rng.uniform_index(patches - i);
    std::swap(order[i], order[j]);
  }

  MaskedView view;
  view.masked_idx.assign(order.begin(), order.begin() + n_masked);
  view.visible_idx.assign(order.begin() + n_masked, order.end());
  std::sort(view.masked_idx.begin(), view.masked_idx.end());
  std::sort(view.visible_idx.begin(), view.visible_idx.end());

  const std::size_t n = grid.pixel_count();
  view.input_with_mask.assign(2 * n, 0.0);
  std::copy(values.begin(), values.end(), view.input_with_mask.begin());

  view.masked_pixels.reserve(n_masked * grid.patch * grid.patch);
  for (std::size_t pi : view.masked_idx) {
    const std::size_t py = (pi / grid.patches_x()) * grid.patch;
    const std::size_t px = (pi % grid.patches_x()) * grid.patch;
    for (std::size_t dy = 0; dy < grid.patch; ++dy)
      for (std::size_t dx = 0; dx < grid.patch; ++dx) {
        const std::size_t p = (py + dy) * grid.width + (px + dx);
        view.masked_pixels.push_back(p);
        view.input_with_mask[p] = 0.0;      // black out
        view.input_with_mask[n + p] = 1.0;  // mask channel marks masked pixels
      }
  }
  view.masked_values.reserve(view.masked_pixels.size());
  for (std::size_t p : view.masked_pixels) view.masked_values.push_back(values[p]);
  return view;
}

}  // namespace streamttt
