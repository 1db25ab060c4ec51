// lrope_lab: experiment driver for multi-stream audio injection.
//
//   lrope_lab schemes-compare [--config PATH] [--seed N] [--scheme S] [--scenario K]
//                             [--steps N] [--theta-base X] [--out DIR]
//   lrope_lab localize --attention FILE --masks FILE [--config PATH] [--out DIR]
//   lrope_lab gradcheck [--config PATH] [--dim D] [--sabotage X] [--out DIR]
//   lrope_lab plan-chunks --total N --chunk-len N [--out DIR]
//   lrope_lab compress-audio [--audio FILE] [--config PATH] [--seed N] [--out DIR]
//
// LROPE_LAB_OUT overrides --out. Exit status is 0 on success, 1 on a failed
// check (gradcheck) and 2 on invalid input.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lrope_lab/errors.h"
#include "lrope_lab/harness.h"

namespace {

using lrope_lab::harness::ExperimentConfig;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheme;
  std::optional<std::string> scenario;
  std::optional<std::size_t> steps;
  std::optional<double> theta_base;
  std::string out = "lrope_out";
};

void add_common(CLI::App* cmd, CommonFlags& f, bool experiment_flags) {
  cmd->add_option("--config", f.config_path, "JSON experiment config");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--out", f.out, "output directory (LROPE_LAB_OUT overrides)");
  if (!experiment_flags) return;
  cmd->add_option("--scheme", f.scheme, "concat|add|split|lrope|all");
  cmd->add_option("--scenario", f.scenario, "static|swap");
  cmd->add_option("--steps", f.steps, "SGD steps");
  cmd->add_option("--theta-base", f.theta_base, "L-RoPE base angle");
}

// Config file first, then flags; validated before any computation.
ExperimentConfig resolve_config(const CommonFlags& f) {
  auto j = f.config_path.empty() ? lrope_lab::harness::Json::object()
                                 : lrope_lab::harness::load_config(f.config_path).to_json();
  if (f.seed) j["seed"] = *f.seed;
  if (f.scheme) {
    if (*f.scheme == "all") {
      j["schemes"] = {"concat", "add", "split", "lrope"};
    } else {
      j["schemes"] = {*f.scheme};
    }
  }
  if (f.scenario) j["scenario"]["kind"] = *f.scenario;
  if (f.steps) j["train"]["steps"] = *f.steps;
  if (f.theta_base) j["theta_base"] = *f.theta_base;
  return ExperimentConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-rotary audio binding lab"};
  app.require_subcommand(1);

  CommonFlags compare_flags;
  auto* compare = app.add_subcommand("schemes-compare", "train and compare injection schemes");
  add_common(compare, compare_flags, true);

  CommonFlags loc_flags;
  std::string attention_file, mask_file;
  auto* localize = app.add_subcommand("localize", "label video tokens from an attention map");
  add_common(localize, loc_flags, false);
  localize->add_option("--attention", attention_file, "binary float64 (fhw x hw) map")->required();
  localize->add_option("--masks", mask_file, "text mask grid")->required();

  CommonFlags grad_flags;
  std::optional<std::size_t> grad_dim;
  double sabotage = 0.0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck, grad_flags, true);
  gradcheck->add_option("--dim", grad_dim, "model width for the check");
  gradcheck->add_option("--sabotage", sabotage, "perturb the analytic gradient (test mode)");

  CommonFlags plan_flags;
  std::size_t total = 0, chunk_len = 0;
  auto* plan = app.add_subcommand("plan-chunks", "autoregressive long-video chunk plan");
  plan->add_option("--total", total, "total frames")->required();
  plan->add_option("--chunk-len", chunk_len, "frames per chunk")->required();
  plan->add_option("--out", plan_flags.out, "output directory (LROPE_LAB_OUT overrides)");

  CommonFlags audio_flags;
  std::optional<std::string> audio_file;
  auto* compress = app.add_subcommand("compress-audio", "run the audio adapter");
  add_common(compress, audio_flags, false);
  compress->add_option("--audio", audio_file, "binary float64 (l x d_a) embeddings");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*compare) {
      const auto cfg = resolve_config(compare_flags);
      const auto out = lrope_lab::harness::resolve_out_dir(compare_flags.out);
      const auto m = lrope_lab::harness::cmd_schemes_compare(cfg, out);
      for (const auto& [name, s] : m["schemes"].items()) {
        std::cout << name << ": binding " << s["binding"]["mean"].get<double>() << '\n';
      }
      std::cout << "wrote " << (out / "metrics.json").string() << '\n';
    } else if (*localize) {
      const auto cfg = resolve_config(loc_flags);
      const auto out = lrope_lab::harness::resolve_out_dir(loc_flags.out);
      lrope_lab::harness::cmd_localize(attention_file, mask_file, cfg, out);
      std::cout << "wrote " << (out / "labels.json").string() << '\n';
    } else if (*gradcheck) {
      auto cfg = resolve_config(grad_flags);
      if (grad_dim) {
        cfg.gradcheck.dim = *grad_dim;
        cfg.validate();
      }
      const auto out = lrope_lab::harness::resolve_out_dir(grad_flags.out);
      const auto r = lrope_lab::harness::cmd_gradcheck(cfg, out, sabotage);
      for (const auto& [name, s] : r["schemes"].items()) {
        std::cout << name << ": max rel error " << s["max_rel_error"].get<double>()
                  << (s["passed"].get<bool>() ? "  ok" : "  FAIL") << '\n';
      }
      return r["passed"].get<bool>() ? 0 : 1;
    } else if (*plan) {
      const auto out = lrope_lab::harness::resolve_out_dir(plan_flags.out);
      const auto r = lrope_lab::harness::cmd_plan_chunks(total, chunk_len, out);
      std::cout << r["chunks"].size() << " chunks, wrote " << (out / "chunk_plan.txt").string()
                << '\n';
    } else if (*compress) {
      const auto cfg = resolve_config(audio_flags);
      const auto out = lrope_lab::harness::resolve_out_dir(audio_flags.out);
      std::optional<std::filesystem::path> path;
      if (audio_file) path = *audio_file;
      const auto r = lrope_lab::harness::cmd_compress_audio(path, cfg, out);
      std::cout << r["audio_frames"] << " frames -> " << r["latent_frames"] << " latent frames\n";
    }
  } catch (const lrope_lab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
