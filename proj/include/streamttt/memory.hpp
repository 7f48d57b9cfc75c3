#pragma once

// Explicit memory: a sliding window over the last k frames with uniform
// with-replacement batch sampling. Implicit memory: the choice of where each
// frame's adaptation starts (previous parameters or the frozen initialization).

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamttt/frame.hpp"
#include "streamttt/model_state.hpp"
#include "streamttt/rng.hpp"

namespace streamttt {

class WindowBuffer {
 public:
  explicit WindowBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0)
      throw std::invalid_argument("WindowBuffer capacity must be positive");
  }

  // Frames must arrive in streaming order: index = last index + 1.
  void push(LabeledFrame frame) {
    if (!frames_.empty() && frame.frame.index != frames_.back().frame.index + 1)
      throw std::invalid_argument(
          "WindowBuffer::push: out-of-order frame index " +
          std::to_string(frame.frame.index));
    frames_.push_back(std::move(frame));
    if (frames_.size() > capacity_) frames_.pop_front();
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  const LabeledFrame& at(std::size_t i) const { return frames_.at(i); }
  const std::deque<LabeledFrame>& frames() const { return frames_; }

 private:
  std::size_t capacity_;
  std::deque<LabeledFrame> frames_;
};

// b independent uniform draws with replacement, returned as positions into
// the buffer (oldest = 0).
inline std::vector<std::size_t> sample_batch_positions(const WindowBuffer& buffer,
                                                       std::size_t b,
                                                       std::uint64_t seed) {
  if (buffer.empty())
    throw std::invalid_argument("sample_batch: empty buffer");
  Rng rng(seed);
  std::vector<std::size_t> out(b);
  for (std::size_t& p : out) p = rng.uniform_index(buffer.size());
  return out;
}

inline std::vector<LabeledFrame> sample_batch(const WindowBuffer& buffer,
                                              std::size_t b,
                                              std::uint64_t seed) {
  std::vector<LabeledFrame> out;
  out.reserve(b);
  for (std::size_t p : sample_batch_positions(buffer, b, seed))
    out.push_back(buffer.at(p));
  return out;
}

enum class InitPolicy { kCarryOver, kReset };

inline std::string to_string(InitPolicy p) {
  return p == InitPolicy::kCarryOver ? "carry-over" : "reset";
}

inline InitPolicy init_policy_from_string(const std::string& s) {
  if (s == "carry-over") return InitPolicy::kCarryOver;
  if (s == "reset") return InitPolicy::kReset;
  throw std::invalid_argument("unknown init policy: " + s);
}

// Reset puts f and g back to the frozen values; h is frozen either way.
inline ModelState select_init(InitPolicy policy, const ModelState& previous) {
  ModelState next = previous;
  if (policy == InitPolicy::kReset) {
    next.f_params = next.frozen_init.f;
    next.g_params = next.frozen_init.g;
  }
  return next;
}

}  // namespace streamttt
