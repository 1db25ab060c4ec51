#include <sstream>

#include "doctest.h"
#include "lrope_lab/errors.h"
#include "lrope_lab/localization.h"

using namespace lrope_lab;
using namespace lrope_lab::localization;

namespace {

constexpr Subject P1 = Subject::person1;
constexpr Subject P2 = Subject::person2;
constexpr Subject BG = Subject::background;

// 1 x 4 reference frame: two person-1 cells, one person-2 cell, one background cell.
SubjectMaskSet strip() { return SubjectMaskSet(1, 4, {P1, P1, P2, BG}); }

}  // namespace

TEST_CASE("similarity is the per-subject mean") {
  const RefToVideoAttentionMap a(Matrix::from_rows({{0.2, 0.4, 0.3, 0.1},
                                                    {0.0, 0.0, 0.0, 1.0},
                                                    {0.1, 0.1, 0.6, 0.2},
                                                    {0.5, 0.1, 0.2, 0.2}}),
                                 1, 1, 4);
  const Matrix s = subject_similarity(a, strip());
  const Matrix expected = Matrix::from_rows(
      {{0.3, 0.3, 0.1}, {0.0, 0.0, 1.0}, {0.1, 0.6, 0.2}, {0.3, 0.2, 0.2}});
  CHECK(max_abs_diff(s, expected) < 1e-15);
  CHECK(categorize(s) == std::vector<Subject>{P1, BG, P2, P1});
}

TEST_CASE("ties go to the lowest column") {
  CHECK(categorize(Matrix::from_rows({{0.5, 0.5, 0.5}, {0.1, 0.4, 0.4}})) ==
        std::vector<Subject>{P1, P2});
}

TEST_CASE("person labels spread over the range") {
  const Matrix s = Matrix::from_rows({{0.1, 0, 0}, {0.5, 0, 0}, {0.9, 0, 0}});
  const auto m = normalize_labels(s, {P1, P1, P1}, LabelRangeConfig::standard());
  REQUIRE(m.labels.size() == 3);
  CHECK(m.labels[0] == doctest::Approx(0.0));
  CHECK(m.labels[1] == doctest::Approx(2.0));
  CHECK(m.labels[2] == doctest::Approx(4.0));
}

TEST_CASE("a lone person token takes the range midpoint") {
  const Matrix s = Matrix::from_rows({{0, 0.7, 0}, {0, 0, 0.9}});
  const auto m = normalize_labels(s, {P2, BG}, LabelRangeConfig::standard());
  CHECK(m.labels[0] == 22.0);
  CHECK(m.labels[1] == 12.0);
}

TEST_CASE("labels never leave their range and follow similarity order") {
  Rng rng(31);
  const auto cfg = LabelRangeConfig::standard();
  const std::size_t n = 40;
  Matrix s(n, 3);
  std::vector<Subject> cats(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) s(i, j) = rng.uniform();
    cats[i] = static_cast<Subject>(rng.below(3));
  }
  const auto m = normalize_labels(s, cats, cfg);
  for (std::size_t i = 0; i < n; ++i) {
    if (cats[i] == BG) {
      CHECK(m.labels[i] == 12.0);
      continue;
    }
    const auto col = static_cast<std::size_t>(cats[i]);
    CHECK(cfg.range(cats[i]).contains(m.labels[i]));
    for (std::size_t j = 0; j < n; ++j) {
      if (cats[j] != cats[i]) continue;
      if (s(i, col) < s(j, col)) CHECK(m.labels[i] <= m.labels[j]);
    }
  }
}

TEST_CASE("scaling the attention map leaves labels unchanged") {
  Rng rng(32);
  const auto masks = strip();
  const Matrix raw = rng.normal_matrix(12, 4);
  Matrix a(12, 4);
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = std::abs(raw.data()[i]);
  const auto cfg = LabelRangeConfig::standard();
  const auto base = build_label_map(RefToVideoAttentionMap(a, 3, 1, 4), masks, cfg);
  const auto scaled = build_label_map(RefToVideoAttentionMap(scale(a, 37.0), 3, 1, 4), masks, cfg);
  CHECK(base.categories == scaled.categories);
  for (std::size_t i = 0; i < 12; ++i) CHECK(base.labels[i] == doctest::Approx(scaled.labels[i]));
}

TEST_CASE("label range presets") {
  const auto a = LabelRangeConfig::standard();
  CHECK(a.person1.lo == 0.0);
  CHECK(a.person1.hi == 4.0);
  CHECK(a.person2.lo == 20.0);
  CHECK(a.person2.hi == 24.0);
  CHECK(a.background == 12.0);
  CHECK(a.audio1 == 2.0);
  CHECK(a.audio2 == 22.0);
  const auto b = LabelRangeConfig::narrow();
  CHECK(b.person1.hi == 2.0);
  CHECK(b.person2.lo == 2.0);
  CHECK(b.audio1 == 1.0);
  CHECK(b.audio2 == 3.0);
  CHECK_NOTHROW(a.validate());
  CHECK_NOTHROW(b.validate());
}

TEST_CASE("overlapping or misplaced ranges are rejected") {
  LabelRangeConfig c;
  c.person2 = {3.0, 8.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LabelRangeConfig{};
  c.background = 2.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LabelRangeConfig{};
  c.audio2 = 5.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mask grid parsing") {
  std::istringstream good("2 3\n11b\nb22\n");
  const auto m = parse_mask_grid(good);
  CHECK(m.height() == 2);
  CHECK(m.width() == 3);
  CHECK(m.grid() == std::vector<Subject>{P1, P1, BG, BG, P2, P2});
  CHECK(m.members(P2) == std::vector<std::size_t>{4, 5});

  std::ostringstream out;
  write_mask_grid(out, m);
  std::istringstream again(out.str());
  CHECK(parse_mask_grid(again).grid() == m.grid());

  std::istringstream bad_char("1 3\n1x2\n");
  CHECK_THROWS_AS(parse_mask_grid(bad_char), ParseError);
  std::istringstream short_row("2 3\n11b\nb2\n");
  CHECK_THROWS_AS(parse_mask_grid(short_row), ParseError);
  std::istringstream no_header("11b\n");
  CHECK_THROWS_AS(parse_mask_grid(no_header), ParseError);
}

TEST_CASE("masks must partition the frame") {
  CHECK_THROWS_AS(SubjectMaskSet(1, 3, {P1, P1, BG}), ConfigError);
  CHECK_THROWS_AS(SubjectMaskSet(1, 3, {P1, P2}), ConfigError);
  const std::vector<bool> p1{true, false, false}, p2{false, true, false}, bg{false, false, true};
  CHECK_NOTHROW(SubjectMaskSet::from_masks(1, 3, p1, p2, bg));
  const std::vector<bool> overlap{true, true, false};
  CHECK_THROWS_AS(SubjectMaskSet::from_masks(1, 3, p1, overlap, bg), ConfigError);
  const std::vector<bool> gap{false, false, false};
  CHECK_THROWS_AS(SubjectMaskSet::from_masks(1, 3, p1, p2, gap), ConfigError);
}

TEST_CASE("attention maps must match the frame and be non-negative") {
  CHECK_THROWS_AS(RefToVideoAttentionMap(Matrix(5, 4), 2, 1, 4), Error);
  CHECK_THROWS_AS(RefToVideoAttentionMap(Matrix(4, 4, -0.1), 1, 1, 4), Error);
}
