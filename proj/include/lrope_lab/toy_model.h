#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "lrope_lab/audio_pipeline.h"
#include "lrope_lab/injection.h"
#include "lrope_lab/localization.h"
#include "lrope_lab/lrope.h"
#include "lrope_lab/numerics.h"

namespace lrope_lab::toy {

using injection::AudioStreamPair;
using injection::BindingReport;
using injection::Scheme;
using localization::LabelRangeConfig;
using localization::Subject;

/// Single-head audio cross-attention block on top of a frozen stand-in for
/// the backbone: prediction = z B + attention(z W_q, s W_k, s W_v) W_o.
/// Only the four projections are trainable.
struct ToyBlockParams {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
  Matrix w_o;
  Matrix frozen_base;

  std::size_t dim() const { return w_q.rows(); }

  /// Projections N(0, init_scale^2 / d), frozen base N(0, 1/d).
  static ToyBlockParams random(std::size_t d, Rng& rng, double init_scale = 1.0);
  /// Like random() but with W_q = W_k = 0, so every admissible key starts
  /// with the same logit.
  static ToyBlockParams symmetric(std::size_t d, Rng& rng, double init_scale = 1.0);

  void validate() const;

  /// Order: w_q, w_k, w_v, w_o, frozen_base.
  std::vector<Matrix> to_list() const;
  static ToyBlockParams from_list(std::vector<Matrix> mats);
};

struct ToyGradients {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
  Matrix w_o;
};

/// Everything about the block that is not a trainable parameter.
struct BlockSetup {
  Scheme scheme = Scheme::concat;
  lrope::RotaryConfig rotary;
  LabelRangeConfig labels;
  std::size_t grid_width = 0;    // w, for the split scheme
  std::size_t split_column = 0;  // columns < split_column are "left"
  bool frame_local = true;       // token at latent frame t sees audio frame t only
};

/// One clip: video tokens, both audio streams and the regression target.
struct ToyBatch {
  Matrix tokens;  // N x d
  AudioStreamPair audio;
  std::vector<std::size_t> token_frame;
  std::vector<std::size_t> token_column;
  std::vector<double> token_labels;  // required for the lrope scheme
  Matrix target;                     // N x d
};

/// Intermediates of forward() needed by backward().
struct ForwardCache {
  Scheme scheme = Scheme::concat;
  Matrix tokens;       // Z
  Matrix audio;        // S = [s1; s2]
  Matrix queries;      // Q (rotated for lrope)
  Matrix keys;         // K (rotated for lrope)
  Matrix values;       // V
  Matrix probs;        // per-group softmax, N x 2F
  std::vector<int> group;  // N x 2F, -1 = key not visible
  Matrix attended;     // O = probs V
  Matrix w_o;
  std::vector<double> query_labels;
  std::vector<double> key_labels;
  lrope::RotaryConfig rotary;
};

struct ForwardResult {
  Matrix prediction;
  ForwardCache cache;
};

/// Throws ConfigError if the lrope scheme is requested without token labels.
ForwardResult forward(const ToyBlockParams& params, const ToyBatch& batch, const BlockSetup& setup);

/// Combined [stream1 | stream2] weights of a forward pass with rows summing
/// to 1 (the add scheme's two groups are halved).
Matrix binding_weights(const ForwardCache& cache);

/// Squared error summed over features, averaged over tokens.
double mse_loss(const Matrix& prediction, const Matrix& target);
Matrix mse_loss_gradient(const Matrix& prediction, const Matrix& target);

/// Exact gradients of sum(upstream .* prediction) with respect to the four
/// trainable projections.
ToyGradients backward(const ForwardCache& cache, const Matrix& upstream);

enum class ScenarioKind { static_layout, swap };

const char* to_string(ScenarioKind k);
ScenarioKind parse_scenario_kind(std::string_view name);

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::swap;
  std::size_t frames = 4;  // f, latent frames
  std::size_t height = 3;  // h
  std::size_t width = 4;   // w
  std::size_t dim = 16;    // d
  std::size_t audio_dim = 8;
  std::size_t context = 5;
  std::size_t adapter_hidden = 32;
  double appearance_scale = 1.0;
  double token_noise = 0.3;
  double target_scale = 1.0;
  /// Off-region attention mass in the synthetic reference attention map.
  double attention_leak = 0.05;

  void validate() const;
};

/// Two people side by side under a background strip (the top row). In the
/// swap scenario they trade sides from latent frame f/2 on. Each person's
/// target is a fixed linear map of that person's own audio frame; the
/// background target carries no audio.
class SyntheticScenario {
 public:
  static SyntheticScenario generate(const ScenarioConfig& cfg, std::uint64_t seed);

  const ScenarioConfig& config() const { return cfg_; }
  std::size_t tokens() const { return truth_.size(); }
  const std::vector<Subject>& truth() const { return truth_; }
  const std::vector<std::size_t>& token_frame() const { return token_frame_; }
  const std::vector<std::size_t>& token_column() const { return token_column_; }
  const Matrix& latent() const { return latent_; }
  std::size_t split_column() const { return cfg_.width / 2; }

  const localization::SubjectMaskSet& masks() const { return masks_; }
  const localization::RefToVideoAttentionMap& attention() const { return attention_; }
  /// Labels from adaptive localization on the synthetic attention map.
  localization::TokenLabelMap label_map(const LabelRangeConfig& cfg) const;

  /// Fresh audio for both streams through the shared adapter. With
  /// zero_audio both streams are zeroed and every target falls back to the
  /// frozen base output.
  ToyBatch draw(Rng& rng, const Matrix& frozen_base, const std::vector<double>& token_labels,
                bool zero_audio = false) const;

 private:
  SyntheticScenario(ScenarioConfig cfg, localization::SubjectMaskSet masks,
                    localization::RefToVideoAttentionMap attention);
  Matrix adapted_stream(Rng& rng) const;

  ScenarioConfig cfg_;
  std::vector<Subject> truth_;
  std::vector<std::size_t> token_frame_;
  std::vector<std::size_t> token_column_;
  Matrix latent_;
  Matrix target_map_;
  audio::AdapterParams adapter_;
  double audio_gain_ = 1.0;
  localization::SubjectMaskSet masks_;
  localization::RefToVideoAttentionMap attention_;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::lrope;
  double i2v_fraction = 0.0;
  double theta_base = 1.0;
  double init_scale = 1.0;
  bool symmetric_init = false;
  LabelRangeConfig labels;
  /// Held-out clips averaged for the final binding score.
  std::size_t eval_draws = 16;

  void validate() const;
};

struct TrainResult {
  ToyBlockParams params;
  std::vector<double> loss_curve;  // loss before each update
  BindingReport binding;
};

BlockSetup make_setup(const SyntheticScenario& scenario, Scheme scheme, double theta_base,
                      const LabelRangeConfig& labels);

/// Mean binding over `draws` held-out clips. The clip stream depends only
/// on `seed`, so schemes are compared on identical audio.
BindingReport evaluate_binding(const ToyBlockParams& params, const SyntheticScenario& scenario,
                               const BlockSetup& setup, std::size_t draws, std::uint64_t seed);

/// Plain SGD on the MSE. Throws TrainingDiverged when the loss exceeds 1e6
/// or stops being finite.
TrainResult train(const TrainConfig& config, const SyntheticScenario& scenario);

void save_params(const std::filesystem::path& path, const ToyBlockParams& params);
ToyBlockParams load_params(const std::filesystem::path& path);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double w_q = 0.0;
  double w_k = 0.0;
  double w_v = 0.0;
  double w_o = 0.0;
};

/// Compares backward() against central differences of mse_loss. The
/// relative error of an entry is |a - n| / max(|a|, |n|, 1e-6). `sabotage`
/// is added to the first analytic W_q entry to prove failures are caught.
GradCheckResult gradient_check(const ToyBlockParams& params, const ToyBatch& batch,
                               const BlockSetup& setup, double eps = 1e-5, double sabotage = 0.0);

/// Small random problem for gradient checking: f*h*w tokens with random
/// categories, columns, labels and audio.
struct GradCheckProblem {
  ToyBlockParams params;
  ToyBatch batch;
  BlockSetup setup;
};
GradCheckProblem random_gradcheck_problem(Scheme scheme, std::size_t dim, std::uint64_t seed);

}  // namespace lrope_lab::toy
