#pragma once

#include <cstddef>

namespace lrope_lab {

/// Temporal compression of the video VAE: the first frame is coded on its
/// own, every following group of this many frames becomes one latent frame.
inline constexpr std::size_t kTemporalCompression = 4;

/// 1 + ceil((n - 1) / 4) for n >= 1; 0 for n = 0.
constexpr std::size_t latent_frame_count(std::size_t pixel_frames) {
  if (pixel_frames == 0) return 0;
  return 1 + (pixel_frames - 1 + kTemporalCompression - 1) / kTemporalCompression;
}

}  // namespace lrope_lab
