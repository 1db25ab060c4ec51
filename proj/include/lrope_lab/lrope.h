#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lrope_lab/numerics.h"

namespace lrope_lab::lrope {

/// How a token's label becomes its rotation angle.
enum class AngleMode {
  /// angle_m = label * theta_base * freq_m
  linear,
  /// angle_m = label^2 * theta_base * freq_m (literal reading of the
  /// exponent l * theta with theta = l * theta_base); breaks relative invariance.
  quadratic,
};

struct RotaryConfig {
  std::size_t dim = 0;
  double theta_base = 1.0;
  AngleMode mode = AngleMode::linear;

  /// Throws ConfigError for odd or zero dim, or non-finite theta_base.
  static RotaryConfig make(std::size_t dim, double theta_base = 1.0,
                           AngleMode mode = AngleMode::linear);

  void validate() const;
  /// freq_m = 10000^(-2m/d), m = 0 .. d/2-1.
  std::vector<double> freqs() const;
  double angle_scale(double label) const {
    return mode == AngleMode::linear ? label * theta_base : label * label * theta_base;
  }
};

/// Rotates each (2m, 2m+1) pair of row i by angle_scale(labels[i]) * freq_m.
Matrix rotate(const Matrix& tokens, std::span<const double> labels, const RotaryConfig& cfg);

/// Applies the inverse (transposed) rotation of rotate().
Matrix unrotate(const Matrix& tokens, std::span<const double> labels, const RotaryConfig& cfg);

/// weights = softmax(rotate(q) rotate(kv)ᵀ / sqrt(d)), out = weights v.
/// Values are not rotated.
AttentionResult labeled_cross_attention(const Matrix& q, std::span<const double> q_labels,
                                        const Matrix& kv, std::span<const double> kv_labels,
                                        const Matrix& v, const RotaryConfig& cfg);
AttentionResult labeled_cross_attention(const Matrix& q, std::span<const double> q_labels,
                                        const Matrix& kv, std::span<const double> kv_labels,
                                        const Matrix& v, const RotaryConfig& cfg,
                                        const AttentionMask& mask);

}  // namespace lrope_lab::lrope
