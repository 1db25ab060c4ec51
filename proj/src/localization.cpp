#include "lrope_lab/localization.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "lrope_lab/errors.h"
#include "lrope_lab/tensor_io.h"

namespace lrope_lab::localization {

namespace {

constexpr Subject kAllSubjects[] = {Subject::person1, Subject::person2, Subject::background};

std::size_t column(Subject s) { return static_cast<std::size_t>(s); }

}  // namespace

std::string_view to_string(Subject s) {
  switch (s) {
    case Subject::person1:
      return "person1";
    case Subject::person2:
      return "person2";
    case Subject::background:
      return "background";
  }
  return "?";
}

SubjectMaskSet::SubjectMaskSet(std::size_t h, std::size_t w, std::vector<Subject> grid)
    : h_(h), w_(w), grid_(std::move(grid)) {
  if (h_ == 0 || w_ == 0 || grid_.size() != h_ * w_) {
    throw ConfigError("mask grid: " + std::to_string(grid_.size()) + " cells for " +
                      std::to_string(h_) + "x" + std::to_string(w_));
  }
  for (Subject s : kAllSubjects) {
    if (std::find(grid_.begin(), grid_.end(), s) == grid_.end()) {
      throw ConfigError("mask grid: " + std::string(to_string(s)) + " mask is empty");
    }
  }
}

SubjectMaskSet SubjectMaskSet::from_masks(std::size_t h, std::size_t w,
                                          const std::vector<bool>& person1,
                                          const std::vector<bool>& person2,
                                          const std::vector<bool>& background) {
  const std::size_t n = h * w;
  if (person1.size() != n || person2.size() != n || background.size() != n) {
    throw ConfigError("mask set: mask sizes do not match the grid");
  }
  std::vector<Subject> grid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int hits = int(person1[i]) + int(person2[i]) + int(background[i]);
    if (hits != 1) {
      throw ConfigError("mask set: cell " + std::to_string(i) + " is covered " +
                        std::to_string(hits) + " times; masks must partition the grid");
    }
    grid[i] = person1[i] ? Subject::person1 : person2[i] ? Subject::person2 : Subject::background;
  }
  return SubjectMaskSet(h, w, std::move(grid));
}

std::vector<std::size_t> SubjectMaskSet::members(Subject s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < grid_.size(); ++i)
    if (grid_[i] == s) out.push_back(i);
  return out;
}

RefToVideoAttentionMap::RefToVideoAttentionMap(Matrix attention, std::size_t f, std::size_t h,
                                               std::size_t w)
    : a_(std::move(attention)), f_(f), h_(h), w_(w) {
  if (f_ == 0 || h_ == 0 || w_ == 0) throw ConfigError("attention map: zero dimension");
  if (a_.rows() != f_ * h_ * w_ || a_.cols() != h_ * w_) {
    throw ShapeError("attention map: got " + std::to_string(a_.rows()) + "x" +
                     std::to_string(a_.cols()) + ", expected " + std::to_string(f_ * h_ * w_) +
                     "x" + std::to_string(h_ * w_));
  }
  for (double v : a_.data())
    if (v < 0.0) throw ConfigError("attention map: negative entry");
}

void LabelRangeConfig::validate() const {
  for (const LabelRange* r : {&person1, &person2}) {
    if (!(r->lo < r->hi)) throw ConfigError("label range needs lo < hi");
  }
  // Touching ranges (e.g. 0-2 and 2-4) are allowed; overlapping interiors are not.
  if (person1.hi > person2.lo && person2.hi > person1.lo) {
    throw ConfigError("person label ranges overlap");
  }
  if (person1.contains(background) || person2.contains(background)) {
    throw ConfigError("background label lies inside a person range");
  }
  if (!person1.contains(audio1)) throw ConfigError("audio1 label outside person1 range");
  if (!person2.contains(audio2)) throw ConfigError("audio2 label outside person2 range");
}

Matrix subject_similarity(const RefToVideoAttentionMap& attention, const SubjectMaskSet& masks) {
  if (attention.matrix().cols() != masks.cells() || attention.height() != masks.height() ||
      attention.width() != masks.width()) {
    throw ConfigError("similarity: attention map grid does not match the mask grid");
  }
  const Matrix& a = attention.matrix();
  Matrix s(a.rows(), kSubjectCount);
  for (Subject subj : kAllSubjects) {
    const auto cells = masks.members(subj);
    if (cells.empty()) throw ConfigError("similarity: empty mask for " + std::string(to_string(subj)));
    const std::size_t j = column(subj);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double total = 0.0;
      for (std::size_t r : cells) total += a(i, r);
      s(i, j) = total / static_cast<double>(cells.size());
    }
  }
  return s;
}

std::vector<Subject> categorize(const Matrix& similarity) {
  if (similarity.cols() != kSubjectCount) throw ShapeError("categorize: S must have 3 columns");
  std::vector<Subject> out(similarity.rows());
  for (std::size_t i = 0; i < similarity.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < kSubjectCount; ++j)
      if (similarity(i, j) > similarity(i, best)) best = j;
    out[i] = static_cast<Subject>(best);
  }
  return out;
}

TokenLabelMap normalize_labels(const Matrix& similarity, const std::vector<Subject>& categories,
                               const LabelRangeConfig& cfg) {
  cfg.validate();
  if (similarity.cols() != kSubjectCount || similarity.rows() != categories.size()) {
    throw ShapeError("normalize_labels: similarity and categories disagree");
  }
  TokenLabelMap map{std::vector<double>(categories.size(), cfg.background), categories};
  for (Subject person : {Subject::person1, Subject::person2}) {
    const std::size_t j = column(person);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < categories.size(); ++i) {
      if (categories[i] != person) continue;
      lo = std::min(lo, similarity(i, j));
      hi = std::max(hi, similarity(i, j));
    }
    const LabelRange& range = cfg.range(person);
    for (std::size_t i = 0; i < categories.size(); ++i) {
      if (categories[i] != person) continue;
      if (hi > lo) {
        map.labels[i] = (similarity(i, j) - lo) / (hi - lo) * (range.hi - range.lo) + range.lo;
      } else {
        map.labels[i] = 0.5 * (range.lo + range.hi);
      }
    }
  }
  return map;
}

TokenLabelMap build_label_map(const RefToVideoAttentionMap& attention,
                              const SubjectMaskSet& masks, const LabelRangeConfig& cfg) {
  cfg.validate();
  const Matrix s = subject_similarity(attention, masks);
  return normalize_labels(s, categorize(s), cfg);
}

SubjectMaskSet parse_mask_grid(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("mask grid: missing header line");
  std::istringstream header(line);
  long long h = 0, w = 0;
  std::string extra;
  if (!(header >> h >> w) || (header >> extra) || h <= 0 || w <= 0) {
    throw ParseError("mask grid: header must be \"h w\" with positive integers");
  }
  std::vector<Subject> grid;
  grid.reserve(static_cast<std::size_t>(h * w));
  for (long long r = 0; r < h; ++r) {
    if (!std::getline(in, line)) {
      throw ParseError("mask grid: expected " + std::to_string(h) + " rows, got " + std::to_string(r));
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (static_cast<long long>(line.size()) != w) {
      throw ParseError("mask grid: row " + std::to_string(r + 1) + " has " +
                       std::to_string(line.size()) + " cells, expected " + std::to_string(w));
    }
    for (char c : line) {
      switch (c) {
        case '1':
          grid.push_back(Subject::person1);
          break;
        case '2':
          grid.push_back(Subject::person2);
          break;
        case 'b':
          grid.push_back(Subject::background);
          break;
        default:
          throw ParseError(std::string("mask grid: invalid cell '") + c + "'");
      }
    }
  }
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw ParseError("mask grid: trailing content after grid rows");
    }
  }
  try {
    return SubjectMaskSet(static_cast<std::size_t>(h), static_cast<std::size_t>(w), std::move(grid));
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
}

SubjectMaskSet read_mask_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_mask_grid(in);
}

void write_mask_grid(std::ostream& out, const SubjectMaskSet& masks) {
  out << masks.height() << ' ' << masks.width() << '\n';
  for (std::size_t r = 0; r < masks.height(); ++r) {
    for (std::size_t c = 0; c < masks.width(); ++c) {
      switch (masks.at(r * masks.width() + c)) {
        case Subject::person1:
          out << '1';
          break;
        case Subject::person2:
          out << '2';
          break;
        case Subject::background:
          out << 'b';
          break;
      }
    }
    out << '\n';
  }
}

RefToVideoAttentionMap read_attention_file(const std::filesystem::path& path,
                                           const SubjectMaskSet& masks) {
  Matrix a = read_tensor_file(path);
  const std::size_t hw = masks.cells();
  if (a.cols() != hw || a.rows() == 0 || a.rows() % hw != 0) {
    throw ParseError(path.string() + ": attention map " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " does not fit a " +
                     std::to_string(masks.height()) + "x" + std::to_string(masks.width()) + " grid");
  }
  const std::size_t frames = a.rows() / hw;
  try {
    return RefToVideoAttentionMap(std::move(a), frames, masks.height(), masks.width());
  } catch (const ConfigError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace lrope_lab::localization
