#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "lrope_lab/numerics.h"
#include "lrope_lab/temporal.h"

namespace lrope_lab::audio {

/// l frames x d_a acoustic embedding, one row per video frame.
class AudioEmbeddingSequence {
 public:
  /// Throws ConfigError when values has no rows or columns.
  explicit AudioEmbeddingSequence(Matrix values);

  std::size_t frames() const { return values_.rows(); }
  std::size_t dim() const { return values_.cols(); }
  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

/// Two-layer perceptron: gelu(x W1 + b1) W2 + b2, applied row-wise.
struct Mlp {
  Matrix w1;  // in x hidden
  Matrix b1;  // 1 x hidden
  Matrix w2;  // hidden x out
  Matrix b2;  // 1 x out

  std::size_t in_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  std::size_t out_dim() const { return w2.cols(); }

  Matrix forward(const Matrix& x) const;
};

struct AdapterConfig {
  std::size_t context = 5;  // k, odd
  std::size_t audio_dim = 0;  // d_a
  std::size_t hidden_dim = 64;  // d_h
  std::size_t cond_dim = 32;  // d_c

  void validate() const;
};

struct AdapterParams {
  Mlp enc_first;  // k*d_a -> d_h -> d_c
  Mlp enc_down;   // k*d_a -> d_h -> d_c
  Mlp enc_fuse;   // d_c -> d_h -> d_c

  /// He-style normal init, zero biases.
  static AdapterParams random(const AdapterConfig& cfg, Rng& rng);
  static AdapterParams zeros(const AdapterConfig& cfg);

  /// Throws ConfigError if any width disagrees with cfg.
  void validate(const AdapterConfig& cfg) const;
};

struct CompressedAudioCondition {
  Matrix values;  // f_a x d_c

  std::size_t latent_frames() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

/// Concatenates each frame with its k/2 neighbours on either side; indices
/// past either end are clamped to the edge frame.
AudioEmbeddingSequence context_window(const AudioEmbeddingSequence& seq, std::size_t k);

/// Mean over non-overlapping windows of kTemporalCompression frames; a short
/// trailing window is averaged over its actual length.
AudioEmbeddingSequence temporal_downsample(const AudioEmbeddingSequence& seq);

/// Compresses l audio frames to 1 + ceil((l-1)/4) latent frames.
///
/// Frame 1 goes through enc_first; frames 2..l are pooled and go through
/// enc_down; the two are stacked in time and enc_fuse is applied per frame.
/// A single-frame clip only takes the enc_first path.
CompressedAudioCondition adapter_forward(const AudioEmbeddingSequence& seq, std::size_t k,
                                         const AdapterParams& params);

AudioEmbeddingSequence synthetic_audio(std::size_t frames, std::size_t dim, Rng& rng);

AudioEmbeddingSequence read_audio_file(const std::filesystem::path& path);
void write_audio_file(const std::filesystem::path& path, const AudioEmbeddingSequence& seq);

}  // namespace lrope_lab::audio
