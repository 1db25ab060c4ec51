#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace lrope_lab {

/// Dense row-major matrix of doubles.
///
/// Shapes are always explicit; nothing broadcasts. A default-constructed
/// matrix is 0x0 and is the only shape allowed to have a zero dimension.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Throws ShapeError if data.size() != rows*cols, ConfigError on non-finite data.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Boolean keep-mask for attention logits; a false entry removes the key
/// from that query's softmax entirely (weight exactly 0).
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool fill = true)
      : rows_(rows), cols_(cols), keep_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool keep(std::size_t r, std::size_t c) const { return keep_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { keep_[r * cols_ + c] = v ? 1 : 0; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> keep_;
};

struct AttentionResult {
  Matrix out;
  Matrix weights;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
/// [a | b], row counts must match.
Matrix hstack(const Matrix& a, const Matrix& b);
/// [a ; b], column counts must match.
Matrix vstack(const Matrix& a, const Matrix& b);
Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end);

double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m);

/// Row softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);
/// Softmax over the kept entries of each row; dropped entries get weight 0.
/// Throws ConfigError if a row keeps no entry.
Matrix softmax_rows(const Matrix& m, const AttentionMask& mask);

/// weights = softmax(q kᵀ / sqrt(d)), out = weights v.
AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v);
AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                     const AttentionMask& mask);

/// Exact GELU, x * Phi(x).
double gelu(double x);
double gelu_derivative(double x);

/// xoshiro256** seeded through splitmix64. The integer stream is fixed by
/// the seed on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (the spare value is cached).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace lrope_lab
