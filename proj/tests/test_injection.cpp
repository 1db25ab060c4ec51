#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lrope_lab/errors.h"
#include "lrope_lab/injection.h"
#include "oracles.h"

using namespace lrope_lab;
using namespace lrope_lab::injection;

namespace {

constexpr Subject P1 = Subject::person1;
constexpr Subject P2 = Subject::person2;
constexpr Subject BG = Subject::background;

struct Streams {
  AudioStreamPair keys;
  AudioStreamPair values;
};

Streams random_streams(Rng& rng, std::size_t frames, std::size_t d, std::size_t dv) {
  return {AudioStreamPair(rng.normal_matrix(frames, d), rng.normal_matrix(frames, d)),
          AudioStreamPair(rng.normal_matrix(frames, dv), rng.normal_matrix(frames, dv))};
}

}  // namespace

TEST_CASE("scheme names round trip") {
  for (Scheme s : kAllSchemes) CHECK(parse_scheme(to_string(s)) == s);
  CHECK_THROWS_AS(parse_scheme("mix"), ConfigError);
}

TEST_CASE("concat with identical streams equals single-stream attention") {
  Rng rng(1);
  const Matrix q = rng.normal_matrix(5, 4), k = rng.normal_matrix(3, 4), v = rng.normal_matrix(3, 2);
  const auto r = scheme_concat(q, AudioStreamPair(k, k), AudioStreamPair(v, v));
  CHECK(max_abs_diff(r.out, scaled_dot_attention(q, k, v).out) < 1e-12);
  CHECK(r.weights.cols() == 6);
}

TEST_CASE("concat weight rows sum to one") {
  Rng rng(2);
  const auto s = random_streams(rng, 4, 6, 3);
  const auto r = scheme_concat(rng.normal_matrix(7, 6), s.keys, s.values);
  for (std::size_t i = 0; i < r.weights.rows(); ++i) {
    const auto row = r.weights.row(i);
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-9);
  }
}

TEST_CASE("query orthogonal to both streams binds at one half") {
  // Both streams hold the same key, and the zero query is equidistant anyway.
  Rng rng(3);
  const Matrix k = rng.normal_matrix(2, 4);
  const auto r = scheme_concat(Matrix(4, 4), AudioStreamPair(k, k), AudioStreamPair(k, k));
  const auto b = binding_score(r.weights, {P1, P2, P1, P2}, 2, Scheme::concat);
  CHECK(std::abs(b.person1 - 0.5) < 1e-9);
  CHECK(std::abs(b.person2 - 0.5) < 1e-9);
}

TEST_CASE("add with a silent second stream is stream-1 attention") {
  Rng rng(4);
  const Matrix q = rng.normal_matrix(5, 4), k1 = rng.normal_matrix(3, 4), v1 = rng.normal_matrix(3, 2);
  const auto r = scheme_add(q, AudioStreamPair(k1, rng.normal_matrix(3, 4)),
                            AudioStreamPair(v1, Matrix(3, 2)));
  CHECK(max_abs_diff(r.out, scaled_dot_attention(q, k1, v1).out) < 1e-12);
}

TEST_CASE("add of a stream with itself doubles the output") {
  Rng rng(5);
  const Matrix q = rng.normal_matrix(5, 4), k = rng.normal_matrix(3, 4), v = rng.normal_matrix(3, 2);
  const auto r = scheme_add(q, AudioStreamPair(k, k), AudioStreamPair(v, v));
  CHECK(max_abs_diff(r.out, scale(scaled_dot_attention(q, k, v).out, 2.0)) < 1e-12);
}

TEST_CASE("add equals two separate passes") {
  Rng rng(6);
  const Matrix q = rng.normal_matrix(6, 4);
  const auto s = random_streams(rng, 3, 4, 5);
  const auto r = scheme_add(q, s.keys, s.values);
  const Matrix k1t = transpose(s.keys.stream1()), k2t = transpose(s.keys.stream2());
  auto pass = [&](const Matrix& kt, const Matrix& v) {
    Matrix logits = scale(oracle::naive_matmul(q, kt), 0.5);
    Matrix w(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j));
      for (std::size_t j = 0; j < logits.cols(); ++j) w(i, j) = std::exp(logits(i, j)) / z;
    }
    return oracle::naive_matmul(w, v);
  };
  const Matrix expected = add(pass(k1t, s.values.stream1()), pass(k2t, s.values.stream2()));
  CHECK(max_abs_diff(r.out, expected) < 1e-12);
}

TEST_CASE("split at the full width is stream-1 attention") {
  Rng rng(7);
  const Matrix q = rng.normal_matrix(6, 4);
  const auto s = random_streams(rng, 3, 4, 2);
  const SplitLayout layout{{0, 1, 2, 0, 1, 2}, 3, 3};
  const auto r = scheme_split(q, layout, s.keys, s.values);
  CHECK(max_abs_diff(r.out, scaled_dot_attention(q, s.keys.stream1(), s.values.stream1()).out) <
        1e-12);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 3; j < 6; ++j) CHECK(r.weights(i, j) == 0.0);
}

TEST_CASE("split keeps token order under permutation") {
  Rng rng(8);
  const Matrix q = rng.normal_matrix(6, 4);
  const auto s = random_streams(rng, 2, 4, 3);
  const std::vector<std::size_t> cols{0, 1, 2, 3, 0, 3};
  const auto base = scheme_split(q, {cols, 4, 2}, s.keys, s.values);
  const std::vector<std::size_t> perm{4, 2, 5, 0, 3, 1};
  Matrix qp(6, 4);
  std::vector<std::size_t> cp(6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 4; ++c) qp(i, c) = q(perm[i], c);
    cp[i] = cols[perm[i]];
  }
  const auto permuted = scheme_split(qp, {cp, 4, 2}, s.keys, s.values);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(permuted.out(i, c) == base.out(perm[i], c));
}

TEST_CASE("split rejects bad layouts") {
  Rng rng(9);
  const auto s = random_streams(rng, 2, 4, 3);
  CHECK_THROWS_AS(scheme_split(Matrix(2, 4), {{0, 1}, 2, 3}, s.keys, s.values), ConfigError);
  CHECK_THROWS_AS(scheme_split(Matrix(2, 4), {{0}, 2, 1}, s.keys, s.values), Error);
}

TEST_CASE("split misbinds people who change sides") {
  // 3 frames of 1 x 2 tokens; the people trade sides after the first frame.
  Rng rng(10);
  const Matrix q = rng.normal_matrix(6, 4);
  const auto s = random_streams(rng, 3, 4, 2);
  const std::vector<Subject> truth{P1, P2, P2, P1, P2, P1};
  const SplitLayout layout{{0, 1, 0, 1, 0, 1}, 2, 1};
  const FrameAlignment align{{0, 0, 1, 1, 2, 2}};
  const auto r = scheme_split(q, layout, s.keys, s.values, &align);
  const auto b = binding_score(r.weights, truth, 3, Scheme::split);
  CHECK(b.person1 == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(b.person2 == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(b.person1 < 0.5);
}

TEST_CASE("lrope with zero base angle is concat") {
  Rng rng(11);
  const Matrix q = rng.normal_matrix(5, 8);
  const auto s = random_streams(rng, 3, 8, 2);
  const std::vector<double> labels{0, 3, 12, 21, 24};
  const auto cfg = localization::LabelRangeConfig::standard();
  const auto r = scheme_lrope(q, labels, s.keys, s.values, cfg, lrope::RotaryConfig::make(8, 0.0));
  const auto c = scheme_concat(q, s.keys, s.values);
  CHECK(max_abs_diff(r.out, c.out) < 1e-9);
  CHECK(max_abs_diff(r.weights, c.weights) < 1e-9);
}

TEST_CASE("lrope approaches concat as the base angle shrinks") {
  Rng rng(12);
  const Matrix q = rng.normal_matrix(5, 8);
  const auto s = random_streams(rng, 3, 8, 2);
  const std::vector<double> labels{0, 3, 12, 21, 24};
  const auto cfg = localization::LabelRangeConfig::standard();
  const auto r = scheme_lrope(q, labels, s.keys, s.values, cfg, lrope::RotaryConfig::make(8, 1e-6));
  CHECK(max_abs_diff(r.out, scheme_concat(q, s.keys, s.values).out) < 1e-4);
}

TEST_CASE("matching labels never lose mass to the other stream") {
  Rng rng(13);
  const std::size_t frames = 5;
  const Matrix k = rng.normal_matrix(frames, 8);
  const AudioStreamPair keys(k, k), values(k, k);
  std::vector<std::size_t> frame_of(frames);
  std::iota(frame_of.begin(), frame_of.end(), 0);
  const FrameAlignment align{frame_of};
  const auto cfg = localization::LabelRangeConfig::standard();
  const std::vector<double> labels(frames, cfg.audio1);
  const auto l = scheme_lrope(k, labels, keys, values, cfg, lrope::RotaryConfig::make(8), &align);
  const auto c = scheme_concat(k, keys, values, &align);
  for (std::size_t i = 0; i < frames; ++i) {
    double lm = 0.0, cm = 0.0;
    for (std::size_t j = 0; j < frames; ++j) {
      lm += l.weights(i, j);
      cm += c.weights(i, j);
    }
    CHECK(lm >= cm - 1e-12);
  }
}

TEST_CASE("lrope beats split on a constructed side swap") {
  // 4 frames of 1 x 2 tokens, sides swap at frame 2; both streams carry the
  // same key per frame and every query points at it.
  Rng rng(14);
  const std::size_t frames = 4;
  const Matrix k = rng.normal_matrix(frames, 8);
  const AudioStreamPair keys(k, k), values(k, k);
  const auto cfg = localization::LabelRangeConfig::standard();
  Matrix q(2 * frames, 8);
  std::vector<Subject> truth;
  std::vector<std::size_t> cols, frame_of;
  std::vector<double> labels;
  for (std::size_t t = 0; t < frames; ++t) {
    const bool swapped = t >= frames / 2;
    for (std::size_t c = 0; c < 2; ++c) {
      const Subject who = (c == 0) != swapped ? P1 : P2;
      for (std::size_t j = 0; j < 8; ++j) q(truth.size(), j) = 2.0 * k(t, j);
      truth.push_back(who);
      cols.push_back(c);
      frame_of.push_back(t);
      labels.push_back(who == P1 ? cfg.audio1 : cfg.audio2);
    }
  }
  const FrameAlignment align{frame_of};
  const auto split = scheme_split(q, {cols, 2, 1}, keys, values, &align);
  const auto lr = scheme_lrope(q, labels, keys, values, cfg, lrope::RotaryConfig::make(8), &align);
  const auto bs = binding_score(split.weights, truth, frames, Scheme::split);
  const auto bl = binding_score(lr.weights, truth, frames, Scheme::lrope);
  CHECK(bs.person1 == 0.5);
  CHECK(bs.person2 == 0.5);
  CHECK(bl.person1 > bs.person1);
  CHECK(bl.person2 > bs.person2);
}

TEST_CASE("binding score examples") {
  const Matrix onehot = Matrix::from_rows({{1, 0, 0, 0}, {0, 0, 0, 1}, {0.25, 0.25, 0.25, 0.25}});
  const auto a = binding_score(onehot, {P1, P2, BG}, 2, Scheme::concat);
  CHECK(a.person1 == 1.0);
  CHECK(a.person2 == 1.0);
  CHECK(a.mean == 1.0);

  const Matrix uniform(2, 4, 0.25);
  const auto u = binding_score(uniform, {P1, P2}, 2, Scheme::concat);
  CHECK(u.person1 == 0.5);
  CHECK(u.person2 == 0.5);

  const Matrix hand = Matrix::from_rows({{0.7, 0.1, 0.1, 0.1}, {0.1, 0.1, 0.4, 0.4}});
  const auto h = binding_score(hand, {P1, P2}, 2, Scheme::concat);
  CHECK(h.person1 == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(h.person2 == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("binding plus wrong-stream mass is one") {
  Rng rng(15);
  const auto s = random_streams(rng, 3, 4, 2);
  const auto r = scheme_concat(rng.normal_matrix(2, 4), s.keys, s.values);
  const auto b = binding_score(r.weights, {P1, P2}, 3, Scheme::concat);
  const double wrong1 = r.weights(0, 3) + r.weights(0, 4) + r.weights(0, 5);
  const double wrong2 = r.weights(1, 0) + r.weights(1, 1) + r.weights(1, 2);
  CHECK(std::abs(b.person1 + wrong1 - 1.0) < 1e-12);
  CHECK(std::abs(b.person2 + wrong2 - 1.0) < 1e-12);
}

TEST_CASE("binding needs both people") {
  CHECK_THROWS_AS(binding_score(Matrix(2, 4, 0.25), {P1, BG}, 2, Scheme::concat), UndefinedScore);
  CHECK_THROWS_AS(binding_score(Matrix(2, 4, 0.25), {P1}, 2, Scheme::concat), ShapeError);
}

TEST_CASE("stream shapes must agree") {
  CHECK_THROWS_AS(AudioStreamPair(Matrix(2, 3), Matrix(3, 3)), ShapeError);
  Rng rng(16);
  const auto s = random_streams(rng, 2, 4, 3);
  CHECK_THROWS_AS(scheme_concat(Matrix(1, 5), s.keys, s.values), ShapeError);
}
