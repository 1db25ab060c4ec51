#include "lrope_lab/injection.h"

#include <algorithm>
#include <string>

#include "lrope_lab/errors.h"

namespace lrope_lab::injection {

namespace {

void check_queries(const Matrix& queries, const AudioStreamPair& keys,
                   const AudioStreamPair& values) {
  if (queries.cols() != keys.dim()) {
    throw ShapeError("injection: query dim " + std::to_string(queries.cols()) + " != key dim " +
                     std::to_string(keys.dim()));
  }
  if (keys.frames() != values.frames()) {
    throw ShapeError("injection: key and value streams have different frame counts");
  }
}

}  // namespace

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::concat:
      return "concat";
    case Scheme::add:
      return "add";
    case Scheme::split:
      return "split";
    case Scheme::lrope:
      return "lrope";
  }
  return "?";
}

Scheme parse_scheme(std::string_view name) {
  for (Scheme s : kAllSchemes)
    if (to_string(s) == name) return s;
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

AudioStreamPair::AudioStreamPair(Matrix stream1, Matrix stream2)
    : s1_(std::move(stream1)), s2_(std::move(stream2)) {
  if (s1_.rows() != s2_.rows() || s1_.cols() != s2_.cols()) {
    throw ShapeError("audio stream pair: streams differ in shape");
  }
  if (s1_.rows() == 0 || s1_.cols() == 0) throw ShapeError("audio stream pair: empty stream");
}

AttentionMask stacked_key_mask(std::size_t queries, std::size_t frames, std::size_t streams,
                               const FrameAlignment* align) {
  AttentionMask mask(queries, frames * streams, align == nullptr);
  if (align == nullptr) return mask;
  if (align->query_frame.size() != queries) {
    throw ShapeError("frame alignment: " + std::to_string(align->query_frame.size()) +
                     " frame indices for " + std::to_string(queries) + " queries");
  }
  for (std::size_t i = 0; i < queries; ++i) {
    const std::size_t t = align->query_frame[i];
    if (t >= frames) {
      throw ConfigError("frame alignment: query frame " + std::to_string(t) + " beyond " +
                        std::to_string(frames) + " audio frames");
    }
    for (std::size_t s = 0; s < streams; ++s) mask.set(i, s * frames + t, true);
  }
  return mask;
}

SchemeResult scheme_concat(const Matrix& queries, const AudioStreamPair& keys,
                           const AudioStreamPair& values, const FrameAlignment* align) {
  check_queries(queries, keys, values);
  auto mask = stacked_key_mask(queries.rows(), keys.frames(), 2, align);
  auto r = scaled_dot_attention(queries, keys.stacked(), values.stacked(), mask);
  return {std::move(r.out), std::move(r.weights)};
}

SchemeResult scheme_add(const Matrix& queries, const AudioStreamPair& keys,
                        const AudioStreamPair& values, const FrameAlignment* align) {
  check_queries(queries, keys, values);
  auto mask = stacked_key_mask(queries.rows(), keys.frames(), 1, align);
  auto a1 = scaled_dot_attention(queries, keys.stream1(), values.stream1(), mask);
  auto a2 = scaled_dot_attention(queries, keys.stream2(), values.stream2(), mask);
  return {add(a1.out, a2.out), scale(hstack(a1.weights, a2.weights), 0.5)};
}

SchemeResult scheme_split(const Matrix& queries, const SplitLayout& layout,
                          const AudioStreamPair& keys, const AudioStreamPair& values,
                          const FrameAlignment* align) {
  check_queries(queries, keys, values);
  if (layout.split_column > layout.width) {
    throw ConfigError("split column " + std::to_string(layout.split_column) +
                      " outside [0, " + std::to_string(layout.width) + "]");
  }
  if (layout.token_columns.size() != queries.rows()) {
    throw ConfigError("split: column list does not match the query count");
  }
  const std::size_t frames = keys.frames();
  auto mask = stacked_key_mask(queries.rows(), frames, 2, align);
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const std::size_t col = layout.token_columns[i];
    if (col >= layout.width) throw ConfigError("split: token column beyond grid width");
    const std::size_t blocked = col < layout.split_column ? 1 : 0;
    for (std::size_t t = 0; t < frames; ++t) mask.set(i, blocked * frames + t, false);
  }
  auto r = scaled_dot_attention(queries, keys.stacked(), values.stacked(), mask);
  return {std::move(r.out), std::move(r.weights)};
}

std::vector<double> stacked_key_labels(std::size_t frames,
                                       const localization::LabelRangeConfig& labels) {
  std::vector<double> out(2 * frames, labels.audio1);
  std::fill(out.begin() + static_cast<std::ptrdiff_t>(frames), out.end(), labels.audio2);
  return out;
}

SchemeResult scheme_lrope(const Matrix& queries, std::span<const double> token_labels,
                          const AudioStreamPair& keys, const AudioStreamPair& values,
                          const localization::LabelRangeConfig& labels,
                          const lrope::RotaryConfig& rotary, const FrameAlignment* align) {
  check_queries(queries, keys, values);
  labels.validate();
  if (token_labels.size() != queries.rows()) {
    throw ConfigError("lrope: label map covers " + std::to_string(token_labels.size()) +
                      " tokens, queries have " + std::to_string(queries.rows()));
  }
  auto mask = stacked_key_mask(queries.rows(), keys.frames(), 2, align);
  const auto key_labels = stacked_key_labels(keys.frames(), labels);
  auto r = lrope::labeled_cross_attention(queries, token_labels, keys.stacked(), key_labels,
                                          values.stacked(), rotary, mask);
  return {std::move(r.out), std::move(r.weights)};
}

BindingReport binding_score(const Matrix& weights, const std::vector<Subject>& truth,
                            std::size_t stream_boundary, Scheme scheme) {
  if (weights.rows() != truth.size()) {
    throw ShapeError("binding: " + std::to_string(truth.size()) + " categories for " +
                     std::to_string(weights.rows()) + " weight rows");
  }
  if (stream_boundary > weights.cols()) throw ShapeError("binding: stream boundary past last column");
  double score[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == Subject::background) continue;
    const std::size_t p = truth[i] == Subject::person1 ? 0 : 1;
    double own = 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      total += weights(i, j);
      if ((j < stream_boundary) == (p == 0)) own += weights(i, j);
    }
    if (total <= 0.0) throw UndefinedScore("binding: token " + std::to_string(i) + " has no attention mass");
    score[p] += own / total;
    ++count[p];
  }
  for (std::size_t p = 0; p < 2; ++p) {
    if (count[p] == 0) {
      throw UndefinedScore("binding: no tokens for person" + std::to_string(p + 1));
    }
    score[p] /= static_cast<double>(count[p]);
  }
  return {scheme, score[0], score[1], 0.5 * (score[0] + score[1])};
}

}  // namespace lrope_lab::injection
