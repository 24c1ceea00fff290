#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace movieseq {

/// A frame is either synthetic (a seed the toy encoder hashes) or a row index
/// into a precomputed embedding file.
struct FrameRef {
  enum class Kind : std::uint8_t { kSeed, kRow };

  Kind kind = Kind::kSeed;
  std::uint64_t value = 0;

  static FrameRef seed(std::uint64_t s) { return {Kind::kSeed, s}; }
  static FrameRef row(std::uint64_t r) { return {Kind::kRow, r}; }

  std::string str() const { return (kind == Kind::kSeed ? "s" : "r") + std::to_string(value); }

  friend bool operator==(const FrameRef&, const FrameRef&) = default;
};

/// Ordered frames of an image (exactly one frame) or a video (one or more).
struct VisualPayload {
  std::vector<FrameRef> frames;
  std::vector<double> timestamps;  // empty, or one per frame, nondecreasing

  std::size_t frame_count() const { return frames.size(); }

  static VisualPayload image(FrameRef ref) { return {{ref}, {}}; }

  /// `count` consecutive frames starting at `first` (seeds or rows).
  static VisualPayload span(FrameRef first, std::size_t count) {
    VisualPayload p;
    for (std::size_t i = 0; i < count; ++i) p.frames.push_back({first.kind, first.value + i});
    return p;
  }

  friend bool operator==(const VisualPayload&, const VisualPayload&) = default;
};

}  // namespace movieseq
