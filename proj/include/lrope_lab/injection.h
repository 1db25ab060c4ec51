#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lrope_lab/localization.h"
#include "lrope_lab/lrope.h"
#include "lrope_lab/numerics.h"

namespace lrope_lab::injection {

using localization::Subject;

enum class Scheme { concat, add, split, lrope };

inline constexpr Scheme kAllSchemes[] = {Scheme::concat, Scheme::add, Scheme::split,
                                         Scheme::lrope};

std::string_view to_string(Scheme s);
/// Throws ConfigError on an unknown name.
Scheme parse_scheme(std::string_view name);

/// Two audio streams of equal shape (latent frames x dim).
class AudioStreamPair {
 public:
  AudioStreamPair(Matrix stream1, Matrix stream2);

  const Matrix& stream1() const { return s1_; }
  const Matrix& stream2() const { return s2_; }
  std::size_t frames() const { return s1_.rows(); }
  std::size_t dim() const { return s1_.cols(); }
  /// Temporal concatenation [stream1; stream2].
  Matrix stacked() const { return vstack(s1_, s2_); }

 private:
  Matrix s1_;
  Matrix s2_;
};

/// Frame-by-frame attention: query i only sees the key rows of latent frame
/// query_frame[i] (row t of each stream is latent frame t).
struct FrameAlignment {
  std::vector<std::size_t> query_frame;
};

/// Keep-mask over the stacked keys of `streams` streams with `frames` rows
/// each. Without alignment every key is kept.
AttentionMask stacked_key_mask(std::size_t queries, std::size_t frames, std::size_t streams,
                               const FrameAlignment* align);

/// out has the shape of the queries; weights is queries x (2*frames) over
/// [stream1 | stream2] with every row summing to 1.
struct SchemeResult {
  Matrix out;
  Matrix weights;
};

/// Left/right split of each frame's token columns.
struct SplitLayout {
  std::vector<std::size_t> token_columns;  // column of each query token
  std::size_t width = 0;                   // w
  std::size_t split_column = 0;            // columns < split go left; 0..w allowed
};

/// One attention over the concatenated streams.
SchemeResult scheme_concat(const Matrix& queries, const AudioStreamPair& keys,
                           const AudioStreamPair& values, const FrameAlignment* align = nullptr);

/// Separate attention per stream, outputs summed. The reported weight
/// matrix is [w1 | w2] / 2 so rows sum to 1 like the other schemes.
SchemeResult scheme_add(const Matrix& queries, const AudioStreamPair& keys,
                        const AudioStreamPair& values, const FrameAlignment* align = nullptr);

/// Left tokens attend only to stream 1, right tokens only to stream 2.
/// Off-half weights are exactly 0. Throws ConfigError for a split column
/// past w or a column list that does not match the queries.
SchemeResult scheme_split(const Matrix& queries, const SplitLayout& layout,
                          const AudioStreamPair& keys, const AudioStreamPair& values,
                          const FrameAlignment* align = nullptr);

/// Concatenates the streams, labels stream-1 keys with audio1 and stream-2
/// keys with audio2, and runs labeled cross-attention with token_labels on
/// the queries.
SchemeResult scheme_lrope(const Matrix& queries, std::span<const double> token_labels,
                          const AudioStreamPair& keys, const AudioStreamPair& values,
                          const localization::LabelRangeConfig& labels,
                          const lrope::RotaryConfig& rotary,
                          const FrameAlignment* align = nullptr);

/// Key labels for the stacked [stream1; stream2] keys.
std::vector<double> stacked_key_labels(std::size_t frames,
                                       const localization::LabelRangeConfig& labels);

struct BindingReport {
  Scheme scheme = Scheme::concat;
  double person1 = 0.0;
  double person2 = 0.0;
  double mean = 0.0;
};

/// Mean over person-i tokens of the attention mass on stream-i columns
/// (columns [0, boundary) are stream 1). Mass is taken relative to the
/// row total. Background tokens are ignored. Throws UndefinedScore when a
/// person has no tokens.
BindingReport binding_score(const Matrix& weights, const std::vector<Subject>& truth,
                            std::size_t stream_boundary, Scheme scheme);

}  // namespace lrope_lab::injection
