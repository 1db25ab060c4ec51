#include "lrope_lab/audio_pipeline.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "lrope_lab/errors.h"
#include "lrope_lab/tensor_io.h"

namespace lrope_lab::audio {

namespace {

Mlp random_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  return {rng.normal_matrix(in, hidden, std::sqrt(2.0 / static_cast<double>(in))),
          Matrix(1, hidden),
          rng.normal_matrix(hidden, out, std::sqrt(1.0 / static_cast<double>(hidden))),
          Matrix(1, out)};
}

Mlp zero_mlp(std::size_t in, std::size_t hidden, std::size_t out) {
  return {Matrix(in, hidden), Matrix(1, hidden), Matrix(hidden, out), Matrix(1, out)};
}

void check_mlp(const Mlp& m, std::size_t in, std::size_t hidden, std::size_t out,
               const char* name) {
  const bool ok = m.w1.rows() == in && m.w1.cols() == hidden && m.b1.rows() == 1 &&
                  m.b1.cols() == hidden && m.w2.rows() == hidden && m.w2.cols() == out &&
                  m.b2.rows() == 1 && m.b2.cols() == out;
  if (!ok) {
    throw ConfigError(std::string("adapter: ") + name + " widths do not match " +
                      std::to_string(in) + " -> " + std::to_string(hidden) + " -> " +
                      std::to_string(out));
  }
}

}  // namespace

AudioEmbeddingSequence::AudioEmbeddingSequence(Matrix values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0) {
    throw ConfigError("audio sequence needs at least one frame and one dimension");
  }
}

Matrix Mlp::forward(const Matrix& x) const {
  if (x.cols() != in_dim()) {
    throw ConfigError("mlp: input width " + std::to_string(x.cols()) + ", expected " +
                      std::to_string(in_dim()));
  }
  Matrix h = matmul(x, w1);
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) = gelu(h(i, j) + b1(0, j));
  Matrix y = matmul(h, w2);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b2(0, j);
  return y;
}

void AdapterConfig::validate() const {
  if (context == 0 || context % 2 == 0) {
    throw ConfigError("context length k must be odd and positive, got " + std::to_string(context));
  }
  if (audio_dim == 0 || hidden_dim == 0 || cond_dim == 0) {
    throw ConfigError("adapter widths must be positive");
  }
}

AdapterParams AdapterParams::random(const AdapterConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t in = cfg.context * cfg.audio_dim;
  AdapterParams p;
  p.enc_first = random_mlp(in, cfg.hidden_dim, cfg.cond_dim, rng);
  p.enc_down = random_mlp(in, cfg.hidden_dim, cfg.cond_dim, rng);
  p.enc_fuse = random_mlp(cfg.cond_dim, cfg.hidden_dim, cfg.cond_dim, rng);
  return p;
}

AdapterParams AdapterParams::zeros(const AdapterConfig& cfg) {
  cfg.validate();
  const std::size_t in = cfg.context * cfg.audio_dim;
  return {zero_mlp(in, cfg.hidden_dim, cfg.cond_dim), zero_mlp(in, cfg.hidden_dim, cfg.cond_dim),
          zero_mlp(cfg.cond_dim, cfg.hidden_dim, cfg.cond_dim)};
}

void AdapterParams::validate(const AdapterConfig& cfg) const {
  cfg.validate();
  const std::size_t in = cfg.context * cfg.audio_dim;
  check_mlp(enc_first, in, cfg.hidden_dim, cfg.cond_dim, "enc_first");
  check_mlp(enc_down, in, cfg.hidden_dim, cfg.cond_dim, "enc_down");
  check_mlp(enc_fuse, cfg.cond_dim, cfg.hidden_dim, cfg.cond_dim, "enc_fuse");
}

AudioEmbeddingSequence context_window(const AudioEmbeddingSequence& seq, std::size_t k) {
  if (k == 0 || k % 2 == 0) {
    throw ConfigError("context length k must be odd and positive, got " + std::to_string(k));
  }
  const auto frames = static_cast<std::ptrdiff_t>(seq.frames());
  const std::size_t d = seq.dim();
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  Matrix out(seq.frames(), k * d);
  for (std::ptrdiff_t i = 0; i < frames; ++i) {
    auto dst = out.row(static_cast<std::size_t>(i));
    for (std::ptrdiff_t off = -half; off <= half; ++off) {
      const auto src_idx = std::clamp<std::ptrdiff_t>(i + off, 0, frames - 1);
      auto src = seq.values().row(static_cast<std::size_t>(src_idx));
      std::copy(src.begin(), src.end(), dst.begin() + (off + half) * static_cast<std::ptrdiff_t>(d));
    }
  }
  return AudioEmbeddingSequence(std::move(out));
}

AudioEmbeddingSequence temporal_downsample(const AudioEmbeddingSequence& seq) {
  const std::size_t n = seq.frames();
  const std::size_t out_frames = (n + kTemporalCompression - 1) / kTemporalCompression;
  Matrix out(out_frames, seq.dim());
  for (std::size_t w = 0; w < out_frames; ++w) {
    const std::size_t begin = w * kTemporalCompression;
    const std::size_t end = std::min(n, begin + kTemporalCompression);
    auto dst = out.row(w);
    for (std::size_t t = begin; t < end; ++t) {
      auto src = seq.values().row(t);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    for (double& v : dst) v /= static_cast<double>(end - begin);
  }
  return AudioEmbeddingSequence(std::move(out));
}

CompressedAudioCondition adapter_forward(const AudioEmbeddingSequence& seq, std::size_t k,
                                         const AdapterParams& params) {
  if (params.enc_first.in_dim() % seq.dim() != 0 || params.enc_first.in_dim() / seq.dim() != k) {
    throw ConfigError("adapter: enc_first expects input width " +
                      std::to_string(params.enc_first.in_dim()) + ", got k*d_a = " +
                      std::to_string(k * seq.dim()));
  }
  AdapterConfig cfg{k, seq.dim(), params.enc_first.hidden_dim(), params.enc_first.out_dim()};
  params.validate(cfg);

  const AudioEmbeddingSequence windowed = context_window(seq, k);
  Matrix latent = params.enc_first.forward(slice_rows(windowed.values(), 0, 1));
  if (seq.frames() > 1) {
    const AudioEmbeddingSequence tail(slice_rows(windowed.values(), 1, seq.frames()));
    latent = vstack(latent, params.enc_down.forward(temporal_downsample(tail).values()));
  }
  return {params.enc_fuse.forward(latent)};
}

AudioEmbeddingSequence synthetic_audio(std::size_t frames, std::size_t dim, Rng& rng) {
  return AudioEmbeddingSequence(rng.normal_matrix(frames, dim));
}

AudioEmbeddingSequence read_audio_file(const std::filesystem::path& path) {
  Matrix m = read_tensor_file(path);
  if (m.rows() == 0 || m.cols() == 0) throw ParseError(path.string() + ": empty audio tensor");
  return AudioEmbeddingSequence(std::move(m));
}

void write_audio_file(const std::filesystem::path& path, const AudioEmbeddingSequence& seq) {
  write_tensor_file(path, seq.values());
}

}  // namespace lrope_lab::audio
