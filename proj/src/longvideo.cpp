#include "lrope_lab/longvideo.h"

#include <algorithm>
#include <ostream>
#include <string>

#include "lrope_lab/errors.h"

namespace lrope_lab::longvideo {

ChunkPlan plan_chunks(std::size_t total_frames, std::size_t chunk_len) {
  if (chunk_len < kMinChunkFrames) {
    throw ConfigError("chunk length " + std::to_string(chunk_len) + " cannot hold " +
                      std::to_string(kOverlapFrames) + " condition frames plus a new frame");
  }
  if (total_frames == 0) throw ConfigError("total frame count must be positive");
  ChunkPlan plan{total_frames, chunk_len, {}};
  std::size_t start = 1;
  std::size_t overlap = 0;
  while (true) {
    const std::size_t end = std::min(total_frames, start + chunk_len - 1);
    plan.chunks.push_back({start, end, overlap});
    if (end == total_frames) break;
    start = end - (kOverlapFrames - 1);
    overlap = kOverlapFrames;
  }
  return plan;
}

std::vector<std::uint8_t> ConditionLatents::serialize() const {
  std::vector<std::uint8_t> out;
  auto put = [&out](std::size_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  put(total_latents);
  put(condition_latents);
  out.insert(out.end(), mask.begin(), mask.end());
  return out;
}

ConditionLatents build_condition(std::size_t chunk_len, bool first_chunk) {
  if (chunk_len < kMinChunkFrames) {
    throw ConfigError("chunk length " + std::to_string(chunk_len) + " is below the minimum of " +
                      std::to_string(kMinChunkFrames));
  }
  ConditionLatents c;
  c.total_latents = latent_arithmetic(chunk_len);
  c.condition_latents = first_chunk ? 1 : latent_arithmetic(kOverlapFrames);
  c.mask.assign(c.total_latents, 0);
  for (std::size_t t = 0; t < c.condition_latents; ++t) c.mask[t] = 1;
  return c;
}

void write_chunk_plan(std::ostream& out, const ChunkPlan& plan) {
  out << "# index start end overlap\n";
  for (std::size_t i = 0; i < plan.chunks.size(); ++i) {
    const Chunk& c = plan.chunks[i];
    out << (i + 1) << ' ' << c.start << ' ' << c.end << ' ' << c.overlap << '\n';
  }
}

}  // namespace lrope_lab::longvideo
