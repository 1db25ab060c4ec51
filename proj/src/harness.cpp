#include "lrope_lab/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <initializer_list>
#include <set>
#include <sstream>

#include "lrope_lab/audio_pipeline.h"
#include "lrope_lab/errors.h"
#include "lrope_lab/longvideo.h"
#include "lrope_lab/lrope.h"
#include "lrope_lab/tensor_io.h"

namespace lrope_lab::harness {

namespace {

void check_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read_field(const Json& j, const char* key, T& dst, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type");
  }
}

std::size_t read_count(const Json& j, const char* key, std::size_t fallback,
                       std::string_view where) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string(where) + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

localization::LabelRange read_range(const Json& j, std::string_view where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(std::string(where) + ": expected [lo, hi]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

localization::LabelRangeConfig read_labels(const Json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "standard") return localization::LabelRangeConfig::standard();
    if (name == "narrow") return localization::LabelRangeConfig::narrow();
    throw ConfigError("labels: unknown preset '" + name + "' (standard|narrow)");
  }
  check_keys(j, {"person1", "person2", "background", "audio1", "audio2"}, "labels");
  localization::LabelRangeConfig cfg;
  if (j.contains("person1")) cfg.person1 = read_range(j["person1"], "labels.person1");
  if (j.contains("person2")) cfg.person2 = read_range(j["person2"], "labels.person2");
  read_field(j, "background", cfg.background, "labels");
  read_field(j, "audio1", cfg.audio1, "labels");
  read_field(j, "audio2", cfg.audio2, "labels");
  return cfg;
}

Json labels_json(const localization::LabelRangeConfig& l) {
  return Json{{"person1", {l.person1.lo, l.person1.hi}},
              {"person2", {l.person2.lo, l.person2.hi}},
              {"background", l.background},
              {"audio1", l.audio1},
              {"audio2", l.audio2}};
}

Json binding_json(const injection::BindingReport& b) {
  return Json{{"person1", b.person1}, {"person2", b.person2}, {"mean", b.mean}};
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

// Spatial map of a per-token value: h rows, frames laid out left to right.
Matrix frame_strip(const std::vector<double>& per_token, std::size_t f, std::size_t h,
                   std::size_t w) {
  Matrix img(h, f * w);
  for (std::size_t t = 0; t < f; ++t)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) img(r, t * w + c) = per_token[(t * h + r) * w + c];
  return img;
}

SchemeOutcome run_one(const ExperimentConfig& config, const toy::SyntheticScenario& scenario,
                      Scheme scheme) {
  const toy::TrainResult tr = toy::train(config.train_config(scheme), scenario);
  const toy::BlockSetup setup =
      toy::make_setup(scenario, scheme, config.theta_base, config.labels);

  // Heatmap from the first held-out clip.
  Rng rng(config.seed);
  const auto labels = scenario.label_map(config.labels).labels;
  const auto batch = scenario.draw(rng, tr.params.frozen_base, labels);
  const auto weights = toy::binding_weights(toy::forward(tr.params, batch, setup).cache);
  std::vector<double> mass(weights.rows(), 0.0);
  for (std::size_t i = 0; i < weights.rows(); ++i)
    for (std::size_t j = 0; j < batch.audio.frames(); ++j) mass[i] += weights(i, j);
  const auto& sc = scenario.config();
  return {scheme, tr.binding, tr.loss_curve, tr.params,
          frame_strip(mass, sc.frames, sc.height, sc.width)};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  check_keys(j, {"seed", "scenario", "theta_base", "labels", "schemes", "train", "gradcheck"},
             "config");
  ExperimentConfig cfg;
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"] >= 0)) {
      throw ConfigError("config.seed: expected a non-negative integer");
    }
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("scenario")) {
    const Json& s = j["scenario"];
    check_keys(s,
               {"kind", "frames", "height", "width", "dim", "audio_dim", "context",
                "adapter_hidden", "appearance_scale", "token_noise", "target_scale",
                "attention_leak"},
               "scenario");
    auto& sc = cfg.scenario;
    if (s.contains("kind")) {
      if (!s["kind"].is_string()) throw ConfigError("scenario.kind: expected a string");
      sc.kind = toy::parse_scenario_kind(s["kind"].get<std::string>());
    }
    sc.frames = read_count(s, "frames", sc.frames, "scenario");
    sc.height = read_count(s, "height", sc.height, "scenario");
    sc.width = read_count(s, "width", sc.width, "scenario");
    sc.dim = read_count(s, "dim", sc.dim, "scenario");
    sc.audio_dim = read_count(s, "audio_dim", sc.audio_dim, "scenario");
    sc.context = read_count(s, "context", sc.context, "scenario");
    sc.adapter_hidden = read_count(s, "adapter_hidden", sc.adapter_hidden, "scenario");
    read_field(s, "appearance_scale", sc.appearance_scale, "scenario");
    read_field(s, "token_noise", sc.token_noise, "scenario");
    read_field(s, "target_scale", sc.target_scale, "scenario");
    read_field(s, "attention_leak", sc.attention_leak, "scenario");
  }
  read_field(j, "theta_base", cfg.theta_base, "config");
  if (j.contains("labels")) cfg.labels = read_labels(j["labels"]);
  if (j.contains("schemes")) {
    if (!j["schemes"].is_array()) throw ConfigError("config.schemes: expected an array");
    cfg.schemes.clear();
    for (const auto& name : j["schemes"]) {
      if (!name.is_string()) throw ConfigError("config.schemes: expected strings");
      cfg.schemes.push_back(injection::parse_scheme(name.get<std::string>()));
    }
  }
  if (j.contains("train")) {
    const Json& t = j["train"];
    check_keys(t,
               {"steps", "learning_rate", "i2v_fraction", "init_scale", "symmetric_init",
                "eval_draws"},
               "train");
    cfg.steps = read_count(t, "steps", cfg.steps, "train");
    read_field(t, "learning_rate", cfg.learning_rate, "train");
    read_field(t, "i2v_fraction", cfg.i2v_fraction, "train");
    read_field(t, "init_scale", cfg.init_scale, "train");
    read_field(t, "symmetric_init", cfg.symmetric_init, "train");
    cfg.eval_draws = read_count(t, "eval_draws", cfg.eval_draws, "train");
  }
  if (j.contains("gradcheck")) {
    const Json& g = j["gradcheck"];
    check_keys(g, {"configs", "dim", "eps", "tolerance"}, "gradcheck");
    cfg.gradcheck.configs = read_count(g, "configs", cfg.gradcheck.configs, "gradcheck");
    cfg.gradcheck.dim = read_count(g, "dim", cfg.gradcheck.dim, "gradcheck");
    read_field(g, "eps", cfg.gradcheck.eps, "gradcheck");
    read_field(g, "tolerance", cfg.gradcheck.tolerance, "gradcheck");
  }
  cfg.validate();
  return cfg;
}

Json ExperimentConfig::to_json() const {
  Json schemes_json = Json::array();
  for (Scheme s : schemes) schemes_json.push_back(std::string(injection::to_string(s)));
  const auto& sc = scenario;
  return Json{
      {"seed", seed},
      {"scenario",
       {{"kind", toy::to_string(sc.kind)},
        {"frames", sc.frames},
        {"height", sc.height},
        {"width", sc.width},
        {"dim", sc.dim},
        {"audio_dim", sc.audio_dim},
        {"context", sc.context},
        {"adapter_hidden", sc.adapter_hidden},
        {"appearance_scale", sc.appearance_scale},
        {"token_noise", sc.token_noise},
        {"target_scale", sc.target_scale},
        {"attention_leak", sc.attention_leak}}},
      {"theta_base", theta_base},
      {"labels", labels_json(labels)},
      {"schemes", schemes_json},
      {"train",
       {{"steps", steps},
        {"learning_rate", learning_rate},
        {"i2v_fraction", i2v_fraction},
        {"init_scale", init_scale},
        {"symmetric_init", symmetric_init},
        {"eval_draws", eval_draws}}},
      {"gradcheck",
       {{"configs", gradcheck.configs},
        {"dim", gradcheck.dim},
        {"eps", gradcheck.eps},
        {"tolerance", gradcheck.tolerance}}}};
}

void ExperimentConfig::validate() const {
  scenario.validate();
  labels.validate();
  if (schemes.empty()) throw ConfigError("config: no schemes selected");
  std::set<Scheme> seen(schemes.begin(), schemes.end());
  if (seen.size() != schemes.size()) throw ConfigError("config: duplicate scheme");
  for (Scheme s : schemes) train_config(s).validate();
  lrope::RotaryConfig::make(scenario.dim, theta_base);
  if (gradcheck.dim == 0 || gradcheck.dim % 2 != 0) {
    throw ConfigError("gradcheck.dim must be even and positive");
  }
  if (!(gradcheck.eps > 0.0) || !(gradcheck.tolerance > 0.0)) {
    throw ConfigError("gradcheck: eps and tolerance must be positive");
  }
}

toy::TrainConfig ExperimentConfig::train_config(Scheme scheme) const {
  toy::TrainConfig t;
  t.learning_rate = learning_rate;
  t.steps = steps;
  t.seed = seed;
  t.scheme = scheme;
  t.i2v_fraction = i2v_fraction;
  t.theta_base = theta_base;
  t.init_scale = init_scale;
  t.symmetric_init = symmetric_init;
  t.labels = labels;
  t.eval_draws = eval_draws;
  return t;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

Json run_invariant_suite(std::uint64_t seed) {
  Rng rng(seed);
  constexpr int kDraws = 100;
  constexpr double kTol = 1e-8;
  const auto cfg = lrope::RotaryConfig::make(16, 1.0);
  bool norm_ok = true, relative_ok = true, compose_ok = true, softmax_ok = true;
  for (int k = 0; k < kDraws; ++k) {
    const Matrix q = rng.normal_matrix(1, 16);
    const Matrix kv = rng.normal_matrix(1, 16);
    const double l1 = rng.uniform(-30, 30), l2 = rng.uniform(-30, 30), c = rng.uniform(-30, 30);
    const double a[] = {l1}, b[] = {l2}, ac[] = {l1 + c}, bc[] = {l2 + c}, ab[] = {l1 + l2};
    const Matrix rq = lrope::rotate(q, a, cfg);
    norm_ok &= std::abs(frobenius_norm(rq) - frobenius_norm(q)) < kTol;
    const double dot1 = matmul(rq, transpose(lrope::rotate(kv, b, cfg)))(0, 0);
    const double dot2 =
        matmul(lrope::rotate(q, ac, cfg), transpose(lrope::rotate(kv, bc, cfg)))(0, 0);
    relative_ok &= std::abs(dot1 - dot2) < kTol;
    compose_ok &= max_abs_diff(lrope::rotate(rq, b, cfg), lrope::rotate(q, ab, cfg)) < kTol;
    const Matrix sm = softmax_rows(rng.normal_matrix(3, 5, 10.0));
    for (std::size_t i = 0; i < sm.rows(); ++i) {
      double total = 0.0;
      for (double v : sm.row(i)) total += v;
      softmax_ok &= std::abs(total - 1.0) < 1e-9;
    }
  }
  bool coverage_ok = true;
  for (std::size_t total = 1; total <= 1000; ++total) {
    const auto plan = longvideo::plan_chunks(total, 81);
    std::size_t next = 1;
    for (const auto& c : plan.chunks) {
      coverage_ok &= c.start + c.overlap == next;
      next = c.end + 1;
    }
    coverage_ok &= next == total + 1;
  }
  bool shape_ok = true;
  for (std::size_t l = 1; l <= 500; ++l) {
    shape_ok &= latent_frame_count(l) == 1 + (l - 1 + 3) / 4;
  }
  const bool all = norm_ok && relative_ok && compose_ok && softmax_ok && coverage_ok && shape_ok;
  return Json{{"rotary_norm", norm_ok},         {"rotary_relative", relative_ok},
              {"rotary_composition", compose_ok}, {"softmax_rows", softmax_ok},
              {"chunk_coverage", coverage_ok},  {"latent_shape_law", shape_ok},
              {"all_passed", all}};
}

std::vector<SchemeOutcome> run_schemes(const ExperimentConfig& config) {
  config.validate();
  const auto scenario = toy::SyntheticScenario::generate(config.scenario, config.seed);
  std::vector<std::future<SchemeOutcome>> jobs;
  jobs.reserve(config.schemes.size());
  for (Scheme s : config.schemes) {
    jobs.push_back(std::async(std::launch::async,
                              [&config, &scenario, s] { return run_one(config, scenario, s); }));
  }
  std::vector<SchemeOutcome> out;
  out.reserve(jobs.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

Json cmd_schemes_compare(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  ensure_dir(out_dir);
  const auto outcomes = run_schemes(config);

  Json schemes = Json::object();
  for (const auto& o : outcomes) {
    const std::string name(injection::to_string(o.scheme));
    Json entry{{"binding", binding_json(o.binding)},
               {"final_loss", o.loss_curve.empty() ? Json(nullptr) : Json(o.loss_curve.back())},
               {"loss_curve", o.loss_curve}};
    schemes[name] = std::move(entry);
    write_pgm(out_dir / ("heatmap_" + name + ".pgm"), o.stream1_mass, 0.0, 1.0,
              "stream-1 attention mass per token, frames left to right; [0,1] -> [0,255]");
    toy::save_params(out_dir / ("params_" + name + ".bin"), o.params);
  }
  Json metrics{{"schema", "lrope_lab.metrics"},
               {"schema_version", kMetricsSchemaVersion},
               {"command", "schemes-compare"},
               {"config", config.to_json()},
               {"schemes", std::move(schemes)},
               {"invariants", run_invariant_suite(config.seed)}};
  write_json(out_dir / "metrics.json", metrics);

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const auto wall = std::chrono::system_clock::now().time_since_epoch();
  write_json(out_dir / "timing.json",
             Json{{"runtime_seconds", seconds},
                  {"finished_unix_ms",
                   std::chrono::duration_cast<std::chrono::milliseconds>(wall).count()}});
  return metrics;
}

Json cmd_localize(const std::filesystem::path& attention_file,
                  const std::filesystem::path& mask_file, const ExperimentConfig& config,
                  const std::filesystem::path& out_dir) {
  config.labels.validate();
  const auto masks = localization::read_mask_file(mask_file);
  const auto attention = localization::read_attention_file(attention_file, masks);
  const auto map = localization::build_label_map(attention, masks, config.labels);
  ensure_dir(out_dir);

  Json categories = Json::array();
  for (auto c : map.categories) categories.push_back(std::string(localization::to_string(c)));
  Json doc{{"schema", "lrope_lab.labels"},
           {"schema_version", kMetricsSchemaVersion},
           {"frames", attention.frames()},
           {"height", attention.height()},
           {"width", attention.width()},
           {"label_config", labels_json(config.labels)},
           {"categories", std::move(categories)},
           {"labels", map.labels}};
  write_json(out_dir / "labels.json", doc);

  const auto [lo, hi] = std::minmax_element(map.labels.begin(), map.labels.end());
  std::ostringstream note;
  note.precision(17);
  note << "token labels, frames left to right; [" << *lo << "," << *hi << "] -> [0,255]";
  write_pgm(out_dir / "labels.pgm",
            frame_strip(map.labels, attention.frames(), attention.height(), attention.width()), *lo,
            *hi, note.str());
  return doc;
}

Json cmd_gradcheck(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                   double sabotage) {
  config.validate();
  ensure_dir(out_dir);
  const auto& g = config.gradcheck;
  Json per_scheme = Json::object();
  bool passed = true;
  for (Scheme s : config.schemes) {
    double worst = 0.0;
    for (std::size_t k = 0; k < g.configs; ++k) {
      const auto p = toy::random_gradcheck_problem(s, g.dim, config.seed * 1000003ULL + k);
      const auto r = toy::gradient_check(p.params, p.batch, p.setup, g.eps, sabotage);
      worst = std::max(worst, r.max_rel_error);
    }
    const bool ok = worst < g.tolerance;
    passed &= ok;
    per_scheme[std::string(injection::to_string(s))] = Json{{"max_rel_error", worst}, {"passed", ok}};
  }
  Json report{{"schema", "lrope_lab.gradcheck"},
              {"schema_version", kMetricsSchemaVersion},
              {"dim", g.dim},
              {"configs", g.configs},
              {"eps", g.eps},
              {"tolerance", g.tolerance},
              {"sabotage", sabotage},
              {"schemes", std::move(per_scheme)},
              {"passed", passed}};
  write_json(out_dir / "gradcheck.json", report);
  return report;
}

Json cmd_plan_chunks(std::size_t total_frames, std::size_t chunk_len,
                     const std::filesystem::path& out_dir) {
  const auto plan = longvideo::plan_chunks(total_frames, chunk_len);
  ensure_dir(out_dir);
  std::ofstream out(out_dir / "chunk_plan.txt");
  if (!out) throw Error("cannot write chunk_plan.txt");
  longvideo::write_chunk_plan(out, plan);
  Json chunks = Json::array();
  for (const auto& c : plan.chunks) chunks.push_back({c.start, c.end, c.overlap});
  return Json{{"total_frames", total_frames}, {"chunk_len", chunk_len}, {"chunks", chunks}};
}

Json cmd_compress_audio(const std::optional<std::filesystem::path>& audio_file,
                        const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  Rng rng(config.seed);
  const auto& sc = config.scenario;
  const auto seq = audio_file ? audio::read_audio_file(*audio_file)
                              : audio::synthetic_audio(1 + 4 * (sc.frames - 1), sc.audio_dim, rng);
  const audio::AdapterConfig acfg{sc.context, seq.dim(), sc.adapter_hidden, sc.dim};
  const auto params = audio::AdapterParams::random(acfg, rng);
  const auto cond = audio::adapter_forward(seq, sc.context, params);
  ensure_dir(out_dir);
  write_tensor_file(out_dir / "condition.bin", cond.values);
  return Json{{"audio_frames", seq.frames()},
              {"audio_dim", seq.dim()},
              {"latent_frames", cond.latent_frames()},
              {"cond_dim", cond.dim()}};
}

void write_pgm(const std::filesystem::path& path, const Matrix& image, double lo, double hi,
               std::string_view comment) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "P2\n# " << comment << '\n' << image.cols() << ' ' << image.rows() << "\n255\n";
  const double span = hi - lo;
  for (std::size_t r = 0; r < image.rows(); ++r) {
    for (std::size_t c = 0; c < image.cols(); ++c) {
      const double t = span > 0.0 ? (image(r, c) - lo) / span : 0.0;
      const long v = std::lround(std::clamp(t, 0.0, 1.0) * 255.0);
      out << (c ? " " : "") << v;
    }
    out << '\n';
  }
}

std::filesystem::path resolve_out_dir(const std::string& flag_value) {
  if (const char* env = std::getenv("LROPE_LAB_OUT"); env != nullptr && *env != '\0') return env;
  return flag_value;
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace lrope_lab::harness
