#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lrope_lab/injection.h"
#include "lrope_lab/localization.h"
#include "lrope_lab/toy_model.h"

namespace lrope_lab::harness {

using injection::Scheme;
using Json = nlohmann::ordered_json;

inline constexpr int kMetricsSchemaVersion = 1;

struct GradcheckSettings {
  std::size_t configs = 20;
  std::size_t dim = 8;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

/// Everything one run needs. Loaded from a JSON document; every field is
/// optional and falls back to the defaults below.
///
///   {
///     "seed": 1,
///     "scenario": {"kind": "swap", "frames": 4, "height": 3, "width": 4,
///                  "dim": 16, "audio_dim": 8, "context": 5, ...},
///     "theta_base": 1.0,
///     "labels": "standard" | "narrow" |
///               {"person1": [0, 4], "person2": [20, 24], "background": 12,
///                "audio1": 2, "audio2": 22},
///     "schemes": ["concat", "add", "split", "lrope"],
///     "train": {"steps": 2000, "learning_rate": 0.01, "i2v_fraction": 0,
///               "init_scale": 1, "symmetric_init": false, "eval_draws": 16},
///     "gradcheck": {"configs": 20, "dim": 8, "eps": 1e-5, "tolerance": 1e-4}
///   }
struct ExperimentConfig {
  std::uint64_t seed = 1;
  toy::ScenarioConfig scenario;
  double theta_base = 1.0;
  localization::LabelRangeConfig labels;
  std::vector<Scheme> schemes{std::begin(injection::kAllSchemes), std::end(injection::kAllSchemes)};
  std::size_t steps = 2000;
  double learning_rate = 1e-2;
  double i2v_fraction = 0.0;
  double init_scale = 1.0;
  bool symmetric_init = false;
  std::size_t eval_draws = 16;
  GradcheckSettings gradcheck;

  /// Throws ConfigError on unknown keys, wrong types or invalid values.
  static ExperimentConfig from_json(const Json& j);
  Json to_json() const;
  void validate() const;
  toy::TrainConfig train_config(Scheme scheme) const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Named pass/fail checks of the core invariants (rotary, softmax, chunk
/// coverage, adapter shape law), seeded for reproducibility.
Json run_invariant_suite(std::uint64_t seed);

struct SchemeOutcome {
  Scheme scheme;
  injection::BindingReport binding;
  std::vector<double> loss_curve;
  toy::ToyBlockParams params;
  Matrix stream1_mass;  // h x (f*w), frames side by side
};

/// Trains (or, with zero steps, just evaluates) every configured scheme on
/// one scenario. Schemes run on worker threads with isolated state; the
/// outcome order follows config.schemes.
std::vector<SchemeOutcome> run_schemes(const ExperimentConfig& config);

/// Runs the comparison and writes metrics.json, timing.json, one
/// heatmap_<scheme>.pgm and params_<scheme>.bin per scheme into out_dir.
/// metrics.json depends only on the config.
Json cmd_schemes_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Localizes people from an attention file and a mask grid file; writes
/// labels.json and labels.pgm.
Json cmd_localize(const std::filesystem::path& attention_file,
                  const std::filesystem::path& mask_file, const ExperimentConfig& config,
                  const std::filesystem::path& out_dir);

/// Finite-difference check of every configured scheme on random problems.
/// The report's "passed" is false when any relative error reaches the
/// tolerance. `sabotage` perturbs the analytic gradient (test mode).
Json cmd_gradcheck(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                   double sabotage = 0.0);

/// Writes chunk_plan.txt.
Json cmd_plan_chunks(std::size_t total_frames, std::size_t chunk_len,
                     const std::filesystem::path& out_dir);

/// Compresses an audio embedding file (or a seeded synthetic clip when no
/// file is given) with a seeded random adapter; writes condition.bin.
Json cmd_compress_audio(const std::optional<std::filesystem::path>& audio_file,
                        const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Plain PGM (P2). Values are mapped linearly from [lo, hi] to [0, 255]
/// and clamped; the mapping is recorded in a comment line.
void write_pgm(const std::filesystem::path& path, const Matrix& image, double lo, double hi,
               std::string_view comment);

/// LROPE_LAB_OUT, when set, takes precedence over the --out flag.
std::filesystem::path resolve_out_dir(const std::string& flag_value);

void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace lrope_lab::harness
