#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "lrope_lab/temporal.h"

namespace lrope_lab::longvideo {

/// Frames of the previous chunk reused as conditions for the next one.
inline constexpr std::size_t kOverlapFrames = 5;
/// A chunk must hold the overlap plus at least one new frame.
inline constexpr std::size_t kMinChunkFrames = kOverlapFrames + 1;

struct Chunk {
  std::size_t start;  // 1-indexed, inclusive
  std::size_t end;    // inclusive
  std::size_t overlap;  // frames shared with the previous chunk (0 for the first)

  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct ChunkPlan {
  std::size_t total_frames = 0;
  std::size_t chunk_len = 0;
  std::vector<Chunk> chunks;
};

/// Windows of chunk_len frames, each starting 5 frames before the previous
/// one ended; the last window is truncated at total_frames.
/// Throws ConfigError for chunk_len < 6 or total_frames == 0.
ChunkPlan plan_chunks(std::size_t total_frames, std::size_t chunk_len);

/// Latent frames after 4x temporal compression with a separate first frame.
inline std::size_t latent_arithmetic(std::size_t pixel_frames) {
  return latent_frame_count(pixel_frames);
}

/// Conditioning layout of one chunk in latent space.
///
/// mask[t] = 1 marks latent frame t as a condition slot (filled from the
/// previous chunk's last 5 frames, or from the reference image for the
/// first chunk); 0 marks zero-padded slots that are generated.
///
/// Serialized layout (little-endian): u32 total_latents, u32
/// condition_latents, then total_latents bytes of mask (0x00 / 0x01).
struct ConditionLatents {
  std::size_t condition_latents = 0;
  std::size_t total_latents = 0;
  std::vector<std::uint8_t> mask;

  std::vector<std::uint8_t> serialize() const;
};

/// Continuation chunks condition on 2 latent frames (the 5 overlap frames);
/// the first chunk of a video conditions on the image only (1 latent frame).
ConditionLatents build_condition(std::size_t chunk_len, bool first_chunk = false);

/// Text export, one chunk per line: "index start end overlap", index from 1,
/// after a "# index start end overlap" comment line.
void write_chunk_plan(std::ostream& out, const ChunkPlan& plan);

}  // namespace lrope_lab::longvideo
