#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "lrope_lab/numerics.h"

namespace lrope_lab::localization {

enum class Subject : std::uint8_t { person1 = 0, person2 = 1, background = 2 };

inline constexpr std::size_t kSubjectCount = 3;

std::string_view to_string(Subject s);

/// Reference-frame segmentation into person1 / person2 / background.
/// Stored as one subject per grid cell, so the three masks always
/// partition the h*w tokens.
class SubjectMaskSet {
 public:
  /// Throws ConfigError if grid.size() != h*w or a subject has no cell.
  SubjectMaskSet(std::size_t h, std::size_t w, std::vector<Subject> grid);

  /// Builds from three boolean masks; throws ConfigError unless they are
  /// disjoint and cover every cell.
  static SubjectMaskSet from_masks(std::size_t h, std::size_t w, const std::vector<bool>& person1,
                                   const std::vector<bool>& person2,
                                   const std::vector<bool>& background);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t cells() const { return grid_.size(); }
  Subject at(std::size_t cell) const { return grid_[cell]; }
  const std::vector<Subject>& grid() const { return grid_; }
  /// Cell indices belonging to s, ascending.
  std::vector<std::size_t> members(Subject s) const;

 private:
  std::size_t h_;
  std::size_t w_;
  std::vector<Subject> grid_;
};

/// Slice of self-attention from every video token onto the reference
/// frame's tokens: (f*h*w) x (h*w), entries >= 0.
class RefToVideoAttentionMap {
 public:
  RefToVideoAttentionMap(Matrix attention, std::size_t f, std::size_t h, std::size_t w);

  const Matrix& matrix() const { return a_; }
  std::size_t frames() const { return f_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t tokens() const { return a_.rows(); }

 private:
  Matrix a_;
  std::size_t f_;
  std::size_t h_;
  std::size_t w_;
};

struct LabelRange {
  double lo;
  double hi;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct LabelRangeConfig {
  LabelRange person1{0.0, 4.0};
  LabelRange person2{20.0, 24.0};
  double background = 12.0;
  double audio1 = 2.0;
  double audio2 = 22.0;

  /// Person ranges 0-4 / 20-24, background 12, audio 2 / 22.
  static LabelRangeConfig standard() { return {}; }
  /// Narrow adjacent ranges 0-2 / 2-4, audio 1 / 3.
  static LabelRangeConfig narrow() { return {{0.0, 2.0}, {2.0, 4.0}, 12.0, 1.0, 3.0}; }

  /// Ranges must be non-empty and may touch but not overlap; background
  /// outside both; audio label i inside range i.
  void validate() const;
  const LabelRange& range(Subject s) const { return s == Subject::person1 ? person1 : person2; }
};

struct TokenLabelMap {
  std::vector<double> labels;
  std::vector<Subject> categories;
};

/// S[i, j] = mean of A[i, r] over reference cells r of subject j.
/// Columns are (person1, person2, background).
Matrix subject_similarity(const RefToVideoAttentionMap& attention, const SubjectMaskSet& masks);

/// Row argmax of S, ties to the lowest column.
std::vector<Subject> categorize(const Matrix& similarity);

/// Min-max normalizes each person's own-column similarity over the tokens
/// assigned to that person into its label range. Constant similarity maps
/// to the range midpoint. Background tokens get the background label.
TokenLabelMap normalize_labels(const Matrix& similarity, const std::vector<Subject>& categories,
                               const LabelRangeConfig& cfg);

TokenLabelMap build_label_map(const RefToVideoAttentionMap& attention,
                              const SubjectMaskSet& masks, const LabelRangeConfig& cfg);

/// Text grid: first line "h w", then h lines of w characters from {1,2,b}.
SubjectMaskSet parse_mask_grid(std::istream& in);
SubjectMaskSet read_mask_file(const std::filesystem::path& path);
void write_mask_grid(std::ostream& out, const SubjectMaskSet& masks);

/// Reads the binary float64 tensor (header fhw, hw) and checks it against
/// the mask grid.
RefToVideoAttentionMap read_attention_file(const std::filesystem::path& path,
                                           const SubjectMaskSet& masks);

}  // namespace lrope_lab::localization
