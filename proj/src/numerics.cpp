#include "lrope_lab/numerics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "lrope_lab/errors.h"

namespace lrope_lab {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (!std::isfinite(fill)) throw ConfigError("Matrix: non-finite fill value");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  if (!all_finite()) throw ConfigError("Matrix: non-finite entry");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  auto dst = out.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  auto dst = out.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

Matrix scale(const Matrix& m, double s) {
  Matrix out = m;
  for (double& v : out.data()) v *= s;
  return out;
}

Matrix hstack(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("hstack: " + shape_str(a) + " | " + shape_str(b));
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), out.row(i).begin() + a.cols());
  }
  return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("vstack: " + shape_str(a) + " ; " + shape_str(b));
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Matrix(a.rows() + b.rows(), a.cols(), std::move(data));
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) throw ShapeError("slice_rows: range out of bounds");
  std::vector<double> data(m.data().begin() + begin * m.cols(), m.data().begin() + end * m.cols());
  return Matrix(end - begin, m.cols(), std::move(data));
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

Matrix softmax_rows(const Matrix& m) {
  return softmax_rows(m, AttentionMask(m.rows(), m.cols(), true));
}

Matrix softmax_rows(const Matrix& m, const AttentionMask& mask) {
  if (mask.rows() != m.rows() || mask.cols() != m.cols()) {
    throw ShapeError("softmax_rows: mask shape does not match logits");
  }
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (mask.keep(i, j)) peak = std::max(peak, m(i, j));
    if (m.cols() > 0 && !std::isfinite(peak)) {
      throw ConfigError("softmax_rows: row " + std::to_string(i) + " keeps no entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (!mask.keep(i, j)) continue;
      out(i, j) = std::exp(m(i, j) - peak);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  return scaled_dot_attention(q, k, v, AttentionMask(q.rows(), k.rows(), true));
}

AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                     const AttentionMask& mask) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query dim " + std::to_string(q.cols()) + " != key dim " +
                     std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: " + std::to_string(k.rows()) + " keys but " +
                     std::to_string(v.rows()) + " values");
  }
  Matrix logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  Matrix weights = softmax_rows(logits, mask);
  Matrix out = matmul(weights, v);
  return {std::move(out), std::move(weights)};
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ConfigError("Rng::below: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

Matrix Rng::normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = stddev * normal();
  return m;
}

}  // namespace lrope_lab
