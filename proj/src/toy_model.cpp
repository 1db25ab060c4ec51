#include "lrope_lab/toy_model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lrope_lab/errors.h"
#include "lrope_lab/tensor_io.h"
#include "lrope_lab/temporal.h"

namespace lrope_lab::toy {

namespace {

constexpr double kDivergenceLimit = 1e6;

// Seeds for the independent streams derived from one user seed.
constexpr std::uint64_t kDataStream = 0x5851f42d4c957f2dULL;
constexpr std::uint64_t kEvalStream = 0x14057b7ef767814fULL;

void require_square(const Matrix& m, std::size_t d, const char* name) {
  if (m.rows() != d || m.cols() != d) {
    throw ConfigError(std::string("toy params: ") + name + " must be " + std::to_string(d) + "x" +
                      std::to_string(d));
  }
}

void sgd_update(Matrix& w, const Matrix& g, double lr) {
  auto dst = w.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= lr * src[i];
}

std::size_t own_stream(Subject s) { return s == Subject::person1 ? 0 : 1; }

}  // namespace

ToyBlockParams ToyBlockParams::random(std::size_t d, Rng& rng, double init_scale) {
  if (d == 0) throw ConfigError("toy params: dimension must be positive");
  const double sd = init_scale / std::sqrt(static_cast<double>(d));
  ToyBlockParams p;
  p.w_q = rng.normal_matrix(d, d, sd);
  p.w_k = rng.normal_matrix(d, d, sd);
  p.w_v = rng.normal_matrix(d, d, sd);
  p.w_o = rng.normal_matrix(d, d, sd);
  p.frozen_base = rng.normal_matrix(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
  return p;
}

ToyBlockParams ToyBlockParams::symmetric(std::size_t d, Rng& rng, double init_scale) {
  ToyBlockParams p = random(d, rng, init_scale);
  p.w_q = Matrix(d, d);
  p.w_k = Matrix(d, d);
  return p;
}

void ToyBlockParams::validate() const {
  const std::size_t d = w_q.rows();
  if (d == 0) throw ConfigError("toy params: empty W_q");
  require_square(w_q, d, "W_q");
  require_square(w_k, d, "W_k");
  require_square(w_v, d, "W_v");
  require_square(w_o, d, "W_o");
  require_square(frozen_base, d, "frozen_base");
}

std::vector<Matrix> ToyBlockParams::to_list() const { return {w_q, w_k, w_v, w_o, frozen_base}; }

ToyBlockParams ToyBlockParams::from_list(std::vector<Matrix> mats) {
  if (mats.size() != 5) {
    throw ParseError("toy params: expected 5 matrices, got " + std::to_string(mats.size()));
  }
  ToyBlockParams p{std::move(mats[0]), std::move(mats[1]), std::move(mats[2]), std::move(mats[3]),
                   std::move(mats[4])};
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  return p;
}

ForwardResult forward(const ToyBlockParams& params, const ToyBatch& batch,
                      const BlockSetup& setup) {
  params.validate();
  const std::size_t d = params.dim();
  const std::size_t n = batch.tokens.rows();
  const std::size_t frames = batch.audio.frames();
  const std::size_t keys = 2 * frames;
  if (batch.tokens.cols() != d || batch.audio.dim() != d) {
    throw ShapeError("toy forward: token/audio dim does not match parameters");
  }
  if (setup.frame_local && batch.token_frame.size() != n) {
    throw ShapeError("toy forward: token_frame must cover every token");
  }
  const bool lrope = setup.scheme == Scheme::lrope;
  if (lrope && batch.token_labels.size() != n) {
    throw ConfigError("toy forward: lrope scheme needs one label per token");
  }
  if (setup.scheme == Scheme::split) {
    if (batch.token_column.size() != n) throw ShapeError("toy forward: split needs token columns");
    if (setup.split_column > setup.grid_width) throw ConfigError("toy forward: split column past w");
  }

  ForwardCache c;
  c.scheme = setup.scheme;
  c.tokens = batch.tokens;
  c.audio = batch.audio.stacked();
  c.queries = matmul(c.tokens, params.w_q);
  c.keys = matmul(c.audio, params.w_k);
  c.values = matmul(c.audio, params.w_v);
  c.w_o = params.w_o;
  c.rotary = setup.rotary;
  if (lrope) {
    setup.labels.validate();
    c.query_labels = batch.token_labels;
    c.key_labels = injection::stacked_key_labels(frames, setup.labels);
    c.queries = lrope::rotate(c.queries, c.query_labels, setup.rotary);
    c.keys = lrope::rotate(c.keys, c.key_labels, setup.rotary);
  }

  c.group.assign(n * keys, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (setup.frame_local && batch.token_frame[i] >= frames) {
      throw ConfigError("toy forward: token frame beyond audio frames");
    }
    for (std::size_t j = 0; j < keys; ++j) {
      const std::size_t stream = j / frames;
      if (setup.frame_local && j % frames != batch.token_frame[i]) continue;
      switch (setup.scheme) {
        case Scheme::concat:
        case Scheme::lrope:
          c.group[i * keys + j] = 0;
          break;
        case Scheme::add:
          c.group[i * keys + j] = static_cast<int>(stream);
          break;
        case Scheme::split: {
          const std::size_t side = batch.token_column[i] < setup.split_column ? 0 : 1;
          if (stream == side) c.group[i * keys + j] = 0;
          break;
        }
      }
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const Matrix logits = scale(matmul(c.queries, transpose(c.keys)), inv_sqrt_d);
  c.probs = Matrix(n, keys);
  for (std::size_t i = 0; i < n; ++i) {
    for (int g = 0; g < 2; ++g) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < keys; ++j)
        if (c.group[i * keys + j] == g) peak = std::max(peak, logits(i, j));
      if (!std::isfinite(peak)) continue;
      double total = 0.0;
      for (std::size_t j = 0; j < keys; ++j) {
        if (c.group[i * keys + j] != g) continue;
        c.probs(i, j) = std::exp(logits(i, j) - peak);
        total += c.probs(i, j);
      }
      for (std::size_t j = 0; j < keys; ++j)
        if (c.group[i * keys + j] == g) c.probs(i, j) /= total;
    }
  }
  c.attended = matmul(c.probs, c.values);
  Matrix prediction = add(matmul(c.tokens, params.frozen_base), matmul(c.attended, params.w_o));
  return {std::move(prediction), std::move(c)};
}

Matrix binding_weights(const ForwardCache& cache) {
  Matrix w = cache.probs;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double total = 0.0;
    for (double v : w.row(i)) total += v;
    for (double& v : w.row(i)) v /= total;
  }
  return w;
}

double mse_loss(const Matrix& prediction, const Matrix& target) {
  const Matrix diff = subtract(prediction, target);
  double total = 0.0;
  for (double v : diff.data()) total += v * v;
  return total / static_cast<double>(diff.rows());
}

Matrix mse_loss_gradient(const Matrix& prediction, const Matrix& target) {
  return scale(subtract(prediction, target), 2.0 / static_cast<double>(prediction.rows()));
}

ToyGradients backward(const ForwardCache& c, const Matrix& upstream) {
  const std::size_t n = c.tokens.rows();
  const std::size_t keys = c.keys.rows();
  const std::size_t d = c.tokens.cols();
  if (upstream.rows() != n || upstream.cols() != d) {
    throw ShapeError("toy backward: upstream gradient shape does not match the prediction");
  }
  ToyGradients g;
  g.w_o = matmul(transpose(c.attended), upstream);
  const Matrix d_attended = matmul(upstream, transpose(c.w_o));
  const Matrix d_probs = matmul(d_attended, transpose(c.values));
  const Matrix d_values = matmul(transpose(c.probs), d_attended);

  // Softmax backward within each group.
  Matrix d_logits(n, keys);
  for (std::size_t i = 0; i < n; ++i) {
    double dot[2] = {0.0, 0.0};
    for (std::size_t j = 0; j < keys; ++j) {
      const int grp = c.group[i * keys + j];
      if (grp >= 0) dot[grp] += c.probs(i, j) * d_probs(i, j);
    }
    for (std::size_t j = 0; j < keys; ++j) {
      const int grp = c.group[i * keys + j];
      if (grp >= 0) d_logits(i, j) = c.probs(i, j) * (d_probs(i, j) - dot[grp]);
    }
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix d_queries = scale(matmul(d_logits, c.keys), inv_sqrt_d);
  Matrix d_keys = scale(matmul(transpose(d_logits), c.queries), inv_sqrt_d);
  if (c.scheme == Scheme::lrope) {
    d_queries = lrope::unrotate(d_queries, c.query_labels, c.rotary);
    d_keys = lrope::unrotate(d_keys, c.key_labels, c.rotary);
  }
  g.w_q = matmul(transpose(c.tokens), d_queries);
  g.w_k = matmul(transpose(c.audio), d_keys);
  g.w_v = matmul(transpose(c.audio), d_values);
  return g;
}

const char* to_string(ScenarioKind k) { return k == ScenarioKind::swap ? "swap" : "static"; }

ScenarioKind parse_scenario_kind(std::string_view name) {
  if (name == "swap") return ScenarioKind::swap;
  if (name == "static") return ScenarioKind::static_layout;
  throw ConfigError("unknown scenario '" + std::string(name) + "' (static|swap)");
}

void ScenarioConfig::validate() const {
  if (frames == 0 || dim == 0 || audio_dim == 0 || adapter_hidden == 0) {
    throw ConfigError("scenario: dimensions must be positive");
  }
  if (height < 2 || width < 2 || width % 2 != 0) {
    throw ConfigError("scenario: grid needs h >= 2 and an even w >= 2");
  }
  if (dim % 2 != 0) throw ConfigError("scenario: d must be even for rotary embedding");
  if (context == 0 || context % 2 == 0) throw ConfigError("scenario: context k must be odd");
  if (attention_leak < 0.0 || attention_leak >= 0.5) {
    throw ConfigError("scenario: attention_leak must lie in [0, 0.5)");
  }
  if (token_noise < 0.0 || appearance_scale <= 0.0 || target_scale <= 0.0) {
    throw ConfigError("scenario: scales must be positive");
  }
}

SyntheticScenario::SyntheticScenario(ScenarioConfig cfg, localization::SubjectMaskSet masks,
                                     localization::RefToVideoAttentionMap attention)
    : cfg_(std::move(cfg)), masks_(std::move(masks)), attention_(std::move(attention)) {}

SyntheticScenario SyntheticScenario::generate(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t f = cfg.frames, h = cfg.height, w = cfg.width;
  const std::size_t half = w / 2;

  auto layout = [&](std::size_t t, std::size_t r, std::size_t col) {
    if (r == 0) return Subject::background;
    const bool swapped = cfg.kind == ScenarioKind::swap && t >= f / 2;
    return ((col < half) != swapped) ? Subject::person1 : Subject::person2;
  };

  std::vector<Subject> ref(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) ref[r * w + col] = layout(0, r, col);
  localization::SubjectMaskSet masks(h, w, ref);

  std::vector<Subject> truth;
  std::vector<std::size_t> frame_of, column_of;
  for (std::size_t t = 0; t < f; ++t)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) {
        truth.push_back(layout(t, r, col));
        frame_of.push_back(t);
        column_of.push_back(col);
      }
  const std::size_t n = truth.size();

  // Every video token attends to its own subject's reference cells with a
  // per-token strength, plus a little leakage everywhere else.
  Matrix a(n, h * w);
  for (std::size_t i = 0; i < n; ++i) {
    const double strength = rng.uniform(0.5, 1.5);
    for (std::size_t r = 0; r < h * w; ++r) {
      a(i, r) = masks.at(r) == truth[i] ? strength : cfg.attention_leak * rng.uniform();
    }
  }

  SyntheticScenario sc(cfg, std::move(masks),
                       localization::RefToVideoAttentionMap(std::move(a), f, h, w));
  sc.truth_ = std::move(truth);
  sc.token_frame_ = std::move(frame_of);
  sc.token_column_ = std::move(column_of);

  const Matrix appearance = rng.normal_matrix(localization::kSubjectCount, cfg.dim, cfg.appearance_scale);
  sc.latent_ = rng.normal_matrix(n, cfg.dim, cfg.token_noise);
  for (std::size_t i = 0; i < n; ++i) {
    const auto look = appearance.row(static_cast<std::size_t>(sc.truth_[i]));
    auto z = sc.latent_.row(i);
    for (std::size_t j = 0; j < cfg.dim; ++j) z[j] += look[j];
  }
  sc.target_map_ = rng.normal_matrix(cfg.dim, cfg.dim,
                                     cfg.target_scale / std::sqrt(static_cast<double>(cfg.dim)));
  const audio::AdapterConfig acfg{cfg.context, cfg.audio_dim, cfg.adapter_hidden, cfg.dim};
  sc.adapter_ = audio::AdapterParams::random(acfg, rng);

  // Rescale the adapter output to unit RMS, measured on calibration clips.
  sc.audio_gain_ = 1.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (int k = 0; k < 16; ++k) {
    const Matrix s = sc.adapted_stream(rng);
    for (double v : s.data()) sum_sq += v * v;
    count += s.size();
  }
  if (sum_sq > 0.0) sc.audio_gain_ = std::sqrt(static_cast<double>(count) / sum_sq);
  return sc;
}

localization::TokenLabelMap SyntheticScenario::label_map(const LabelRangeConfig& cfg) const {
  return localization::build_label_map(attention_, masks_, cfg);
}

Matrix SyntheticScenario::adapted_stream(Rng& rng) const {
  const std::size_t pixel_frames = 1 + kTemporalCompression * (cfg_.frames - 1);
  const auto raw = audio::synthetic_audio(pixel_frames, cfg_.audio_dim, rng);
  return scale(audio::adapter_forward(raw, cfg_.context, adapter_).values, audio_gain_);
}

ToyBatch SyntheticScenario::draw(Rng& rng, const Matrix& frozen_base,
                                 const std::vector<double>& token_labels, bool zero_audio) const {
  Matrix s1 = adapted_stream(rng);
  Matrix s2 = adapted_stream(rng);
  if (zero_audio) {
    s1 = Matrix(s1.rows(), s1.cols());
    s2 = Matrix(s2.rows(), s2.cols());
  }

  Matrix target = matmul(latent_, frozen_base);
  const Matrix drive1 = matmul(s1, target_map_);
  const Matrix drive2 = matmul(s2, target_map_);
  for (std::size_t i = 0; i < truth_.size(); ++i) {
    if (truth_[i] == Subject::background) continue;
    const Matrix& drive = own_stream(truth_[i]) == 0 ? drive1 : drive2;
    auto dst = target.row(i);
    auto src = drive.row(token_frame_[i]);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  return ToyBatch{latent_,       AudioStreamPair(std::move(s1), std::move(s2)),
                  token_frame_,  token_column_,
                  token_labels,  std::move(target)};
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning rate must be positive");
  }
  if (i2v_fraction < 0.0 || i2v_fraction > 1.0) throw ConfigError("train: i2v_fraction outside [0,1]");
  if (!std::isfinite(theta_base)) throw ConfigError("train: theta_base must be finite");
  if (!(init_scale > 0.0)) throw ConfigError("train: init_scale must be positive");
  if (eval_draws == 0) throw ConfigError("train: eval_draws must be positive");
  labels.validate();
}

BlockSetup make_setup(const SyntheticScenario& scenario, Scheme scheme, double theta_base,
                      const LabelRangeConfig& labels) {
  BlockSetup s;
  s.scheme = scheme;
  s.rotary = lrope::RotaryConfig::make(scenario.config().dim, theta_base);
  s.labels = labels;
  s.grid_width = scenario.config().width;
  s.split_column = scenario.split_column();
  s.frame_local = true;
  return s;
}

BindingReport evaluate_binding(const ToyBlockParams& params, const SyntheticScenario& scenario,
                               const BlockSetup& setup, std::size_t draws, std::uint64_t seed) {
  Rng rng(seed ^ kEvalStream);
  const auto labels = scenario.label_map(setup.labels).labels;
  BindingReport total{setup.scheme, 0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < draws; ++k) {
    const ToyBatch batch = scenario.draw(rng, params.frozen_base, labels);
    const auto fr = forward(params, batch, setup);
    const auto r = injection::binding_score(binding_weights(fr.cache), scenario.truth(),
                                            batch.audio.frames(), setup.scheme);
    total.person1 += r.person1;
    total.person2 += r.person2;
  }
  total.person1 /= static_cast<double>(draws);
  total.person2 /= static_cast<double>(draws);
  total.mean = 0.5 * (total.person1 + total.person2);
  return total;
}

TrainResult train(const TrainConfig& config, const SyntheticScenario& scenario) {
  config.validate();
  const std::size_t d = scenario.config().dim;
  Rng init_rng(config.seed);
  TrainResult result;
  result.params = config.symmetric_init ? ToyBlockParams::symmetric(d, init_rng, config.init_scale)
                                        : ToyBlockParams::random(d, init_rng, config.init_scale);
  const BlockSetup setup = make_setup(scenario, config.scheme, config.theta_base, config.labels);
  const auto labels = scenario.label_map(config.labels).labels;

  Rng data_rng(config.seed ^ kDataStream);
  result.loss_curve.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    // Drawn every step so the clip stream does not depend on the fraction.
    const bool zero_audio = data_rng.uniform() < config.i2v_fraction;
    const ToyBatch batch = scenario.draw(data_rng, result.params.frozen_base, labels, zero_audio);
    const auto fr = forward(result.params, batch, setup);
    const double loss = mse_loss(fr.prediction, batch.target);
    if (!std::isfinite(loss) || loss > kDivergenceLimit) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + " (loss " +
                             std::to_string(loss) + ")");
    }
    result.loss_curve.push_back(loss);
    const ToyGradients g = backward(fr.cache, mse_loss_gradient(fr.prediction, batch.target));
    sgd_update(result.params.w_q, g.w_q, config.learning_rate);
    sgd_update(result.params.w_k, g.w_k, config.learning_rate);
    sgd_update(result.params.w_v, g.w_v, config.learning_rate);
    sgd_update(result.params.w_o, g.w_o, config.learning_rate);
  }
  result.binding = evaluate_binding(result.params, scenario, setup, config.eval_draws, config.seed);
  return result;
}

void save_params(const std::filesystem::path& path, const ToyBlockParams& params) {
  write_matrix_list_file(path, params.to_list());
}

ToyBlockParams load_params(const std::filesystem::path& path) {
  return ToyBlockParams::from_list(read_matrix_list_file(path));
}

GradCheckResult gradient_check(const ToyBlockParams& params, const ToyBatch& batch,
                               const BlockSetup& setup, double eps, double sabotage) {
  const auto fr = forward(params, batch, setup);
  ToyGradients analytic = backward(fr.cache, mse_loss_gradient(fr.prediction, batch.target));
  analytic.w_q.data()[0] += sabotage;

  ToyBlockParams probe = params;
  auto check = [&](Matrix ToyBlockParams::*member, const Matrix& grad) {
    double worst = 0.0;
    Matrix& w = probe.*member;
    for (std::size_t idx = 0; idx < w.size(); ++idx) {
      const double saved = w.data()[idx];
      w.data()[idx] = saved + eps;
      const double up = mse_loss(forward(probe, batch, setup).prediction, batch.target);
      w.data()[idx] = saved - eps;
      const double down = mse_loss(forward(probe, batch, setup).prediction, batch.target);
      w.data()[idx] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grad.data()[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
  };
  GradCheckResult r;
  r.w_q = check(&ToyBlockParams::w_q, analytic.w_q);
  r.w_k = check(&ToyBlockParams::w_k, analytic.w_k);
  r.w_v = check(&ToyBlockParams::w_v, analytic.w_v);
  r.w_o = check(&ToyBlockParams::w_o, analytic.w_o);
  r.max_rel_error = std::max({r.w_q, r.w_k, r.w_v, r.w_o});
  return r;
}

GradCheckProblem random_gradcheck_problem(Scheme scheme, std::size_t dim, std::uint64_t seed) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("gradcheck: d must be even and positive");
  Rng rng(seed);
  constexpr std::size_t kFrames = 2, kHeight = 1, kWidth = 3;
  const std::size_t n = kFrames * kHeight * kWidth;

  GradCheckProblem p{ToyBlockParams::random(dim, rng, 1.5),
                     ToyBatch{rng.normal_matrix(n, dim),
                              AudioStreamPair(rng.normal_matrix(kFrames, dim),
                                              rng.normal_matrix(kFrames, dim)),
                              {}, {}, {}, rng.normal_matrix(n, dim)},
                     BlockSetup{}};
  for (std::size_t i = 0; i < n; ++i) {
    p.batch.token_frame.push_back(i / (kHeight * kWidth));
    p.batch.token_column.push_back(i % kWidth);
    p.batch.token_labels.push_back(rng.uniform(-2.0, 26.0));
  }
  p.setup.scheme = scheme;
  p.setup.rotary = lrope::RotaryConfig::make(dim, rng.uniform(0.2, 1.5));
  p.setup.grid_width = kWidth;
  p.setup.split_column = 1 + rng.below(kWidth - 1);
  // Frame-local attention leaves one key per add/split group, whose
  // softmax has no gradient; alternate so both paths get exercised.
  p.setup.frame_local = (seed % 2) == 1;
  return p;
}

}  // namespace lrope_lab::toy
