#include "lrope_lab/lrope.h"

#include <cmath>
#include <string>

#include "lrope_lab/errors.h"

namespace lrope_lab::lrope {

namespace {

Matrix rotate_signed(const Matrix& tokens, std::span<const double> labels,
                     const RotaryConfig& cfg, double sign) {
  cfg.validate();
  if (tokens.cols() != cfg.dim) {
    throw ConfigError("rotate: token dim " + std::to_string(tokens.cols()) +
                      " != rotary dim " + std::to_string(cfg.dim));
  }
  if (labels.size() != tokens.rows()) {
    throw ConfigError("rotate: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(tokens.rows()) + " tokens");
  }
  const auto freqs = cfg.freqs();
  Matrix out(tokens.rows(), tokens.cols());
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    if (!std::isfinite(labels[i])) throw ConfigError("rotate: non-finite label");
    const double base = sign * cfg.angle_scale(labels[i]);
    for (std::size_t m = 0; m < freqs.size(); ++m) {
      const double angle = base * freqs[m];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double x = tokens(i, 2 * m);
      const double y = tokens(i, 2 * m + 1);
      out(i, 2 * m) = x * c - y * s;
      out(i, 2 * m + 1) = x * s + y * c;
    }
  }
  return out;
}

}  // namespace

RotaryConfig RotaryConfig::make(std::size_t dim, double theta_base, AngleMode mode) {
  RotaryConfig cfg{dim, theta_base, mode};
  cfg.validate();
  return cfg;
}

void RotaryConfig::validate() const {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("rotary dim must be even and positive, got " + std::to_string(dim));
  }
  if (!std::isfinite(theta_base)) throw ConfigError("theta_base must be finite");
}

std::vector<double> RotaryConfig::freqs() const {
  std::vector<double> f(dim / 2);
  for (std::size_t m = 0; m < f.size(); ++m) {
    f[m] = std::pow(10000.0, -2.0 * static_cast<double>(m) / static_cast<double>(dim));
  }
  return f;
}

Matrix rotate(const Matrix& tokens, std::span<const double> labels, const RotaryConfig& cfg) {
  return rotate_signed(tokens, labels, cfg, 1.0);
}

Matrix unrotate(const Matrix& tokens, std::span<const double> labels, const RotaryConfig& cfg) {
  return rotate_signed(tokens, labels, cfg, -1.0);
}

AttentionResult labeled_cross_attention(const Matrix& q, std::span<const double> q_labels,
                                        const Matrix& kv, std::span<const double> kv_labels,
                                        const Matrix& v, const RotaryConfig& cfg) {
  return labeled_cross_attention(q, q_labels, kv, kv_labels, v, cfg,
                                 AttentionMask(q.rows(), kv.rows(), true));
}

AttentionResult labeled_cross_attention(const Matrix& q, std::span<const double> q_labels,
                                        const Matrix& kv, std::span<const double> kv_labels,
                                        const Matrix& v, const RotaryConfig& cfg,
                                        const AttentionMask& mask) {
  if (q.cols() != kv.cols()) throw ShapeError("labeled attention: query/key dims differ");
  return scaled_dot_attention(rotate(q, q_labels, cfg), rotate(kv, kv_labels, cfg), v, mask);
}

}  // namespace lrope_lab::lrope
