#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lrope_lab/errors.h"
#include "lrope_lab/toy_model.h"
#include "oracles.h"

using namespace lrope_lab;
using namespace lrope_lab::toy;

namespace {

ScenarioConfig small_scenario(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  c.dim = 8;
  return c;
}

TrainConfig quick_train(Scheme scheme, std::size_t steps) {
  TrainConfig t;
  t.scheme = scheme;
  t.steps = steps;
  t.seed = 5;
  t.eval_draws = 4;
  return t;
}

double held_out_loss(const ToyBlockParams& p, const SyntheticScenario& sc, const BlockSetup& setup) {
  Rng rng(777);
  const auto labels = sc.label_map(setup.labels).labels;
  double total = 0.0;
  for (int k = 0; k < 16; ++k) {
    const auto batch = sc.draw(rng, p.frozen_base, labels);
    total += oracle::reference_loss(p, batch, setup);
  }
  return total / 16.0;
}

}  // namespace

TEST_CASE("zero output projection leaves the frozen base") {
  for (Scheme s : injection::kAllSchemes) {
    auto p = random_gradcheck_problem(s, 8, 3);
    p.params.w_o = Matrix(8, 8);
    const auto fr = forward(p.params, p.batch, p.setup);
    CHECK(fr.prediction.rows() == p.batch.tokens.rows());
    CHECK(fr.prediction.cols() == 8);
    CHECK(max_abs_diff(fr.prediction, oracle::naive_matmul(p.batch.tokens, p.params.frozen_base)) <
          1e-12);
  }
}

TEST_CASE("forward matches the recomputation oracle") {
  for (Scheme s : injection::kAllSchemes) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const auto p = random_gradcheck_problem(s, 8, seed);
      const auto fr = forward(p.params, p.batch, p.setup);
      CHECK(max_abs_diff(fr.prediction, oracle::reference_prediction(p.params, p.batch, p.setup)) <
            1e-12);
      CHECK(max_abs_diff(binding_weights(fr.cache),
                         oracle::reference_attention(p.params, p.batch, p.setup).weights) < 1e-12);
    }
  }
}

TEST_CASE("zero upstream gives zero gradients") {
  for (Scheme s : injection::kAllSchemes) {
    const auto p = random_gradcheck_problem(s, 8, 1);
    const auto fr = forward(p.params, p.batch, p.setup);
    const auto g = backward(fr.cache, Matrix(fr.prediction.rows(), 8));
    CHECK(g.w_q == Matrix(8, 8));
    CHECK(g.w_k == Matrix(8, 8));
    CHECK(g.w_v == Matrix(8, 8));
    CHECK(g.w_o == Matrix(8, 8));
  }
}

TEST_CASE("gradients match finite differences of the oracle loss") {
  for (Scheme s : injection::kAllSchemes) {
    CAPTURE(injection::to_string(s));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      CAPTURE(seed);
      const auto p = random_gradcheck_problem(s, 8, seed);
      const auto fr = forward(p.params, p.batch, p.setup);
      const auto g = backward(fr.cache, mse_loss_gradient(fr.prediction, p.batch.target));
      CHECK(oracle::max_rel_error(g.w_q, oracle::fd_gradient(p.params, &ToyBlockParams::w_q, p.batch, p.setup)) < 1e-4);
      CHECK(oracle::max_rel_error(g.w_k, oracle::fd_gradient(p.params, &ToyBlockParams::w_k, p.batch, p.setup)) < 1e-4);
      CHECK(oracle::max_rel_error(g.w_v, oracle::fd_gradient(p.params, &ToyBlockParams::w_v, p.batch, p.setup)) < 1e-4);
      CHECK(oracle::max_rel_error(g.w_o, oracle::fd_gradient(p.params, &ToyBlockParams::w_o, p.batch, p.setup)) < 1e-4);
    }
  }
}

TEST_CASE("gradient check catches sabotage") {
  for (Scheme s : injection::kAllSchemes) {
    const auto p = random_gradcheck_problem(s, 8, 7);
    CHECK(gradient_check(p.params, p.batch, p.setup).max_rel_error < 1e-4);
    CHECK(gradient_check(p.params, p.batch, p.setup, 1e-5, 1e-2).max_rel_error > 1e-4);
  }
}

TEST_CASE("gradients at d = 32 match finite differences normwise") {
  // Losses here are in the hundreds, so single entries near zero sit at the
  // rounding floor of the difference quotient; compare against the largest entry.
  auto normwise = [](const Matrix& a, const Matrix& n) {
    double scale = 0.0;
    for (double x : n.data()) scale = std::max(scale, std::abs(x));
    return max_abs_diff(a, n) / scale;
  };
  double worst = 0.0;
  for (Scheme s : injection::kAllSchemes) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = random_gradcheck_problem(s, 32, seed);
      const auto fr = forward(p.params, p.batch, p.setup);
      const auto g = backward(fr.cache, mse_loss_gradient(fr.prediction, p.batch.target));
      using P = ToyBlockParams;
      worst = std::max({worst, normwise(g.w_q, oracle::fd_gradient(p.params, &P::w_q, p.batch, p.setup)),
                        normwise(g.w_k, oracle::fd_gradient(p.params, &P::w_k, p.batch, p.setup)),
                        normwise(g.w_v, oracle::fd_gradient(p.params, &P::w_v, p.batch, p.setup)),
                        normwise(g.w_o, oracle::fd_gradient(p.params, &P::w_o, p.batch, p.setup))});
    }
  }
  MESSAGE("d = 32 worst normwise error " << worst);
  CHECK(worst < 1e-7);
}

TEST_CASE("the mse is summed over features and averaged over tokens") {
  const Matrix pred = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix target = Matrix::from_rows({{0, 0}, {3, 2}});
  CHECK(mse_loss(pred, target) == doctest::Approx((1.0 + 4.0 + 0.0 + 4.0) / 2.0));
  CHECK(mse_loss_gradient(pred, target) == Matrix::from_rows({{1, 2}, {0, 2}}));
}

TEST_CASE("lrope without labels is a config error") {
  auto p = random_gradcheck_problem(Scheme::lrope, 8, 2);
  p.batch.token_labels.clear();
  CHECK_THROWS_AS(forward(p.params, p.batch, p.setup), ConfigError);
}

TEST_CASE("silent audio gives no key or value gradient") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::swap), 4);
  Rng rng(8);
  const auto params = ToyBlockParams::random(8, rng);
  for (Scheme s : injection::kAllSchemes) {
    const auto setup = make_setup(sc, s, 1.0, LabelRangeConfig::standard());
    const auto batch = sc.draw(rng, params.frozen_base, sc.label_map(setup.labels).labels, true);
    CHECK(max_abs_diff(batch.target, oracle::naive_matmul(batch.tokens, params.frozen_base)) < 1e-12);
    const auto fr = forward(params, batch, setup);
    const auto g = backward(fr.cache, mse_loss_gradient(fr.prediction, batch.target));
    CHECK(g.w_k == Matrix(8, 8));
    CHECK(g.w_v == Matrix(8, 8));
  }
}

TEST_CASE("person targets follow their own stream only") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::swap), 4);
  Rng rng(9);
  const auto params = ToyBlockParams::random(8, rng);
  const auto labels = sc.label_map(LabelRangeConfig::standard()).labels;
  Rng a(10), b(10);
  const auto x = sc.draw(a, params.frozen_base, labels);
  const auto y = sc.draw(b, params.frozen_base, labels);
  CHECK(x.target == y.target);
  const Matrix base = oracle::naive_matmul(x.tokens, params.frozen_base);
  for (std::size_t i = 0; i < sc.tokens(); ++i) {
    if (sc.truth()[i] != Subject::background) continue;
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(x.target(i, j) - base(i, j)) < 1e-12);
  }
}

TEST_CASE("swap scenario moves people across the split") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::swap), 4);
  const auto& cfg = sc.config();
  for (std::size_t i = 0; i < sc.tokens(); ++i) {
    if (sc.truth()[i] == Subject::background) continue;
    const bool left = sc.token_column()[i] < sc.split_column();
    const bool swapped = sc.token_frame()[i] >= cfg.frames / 2;
    CHECK((sc.truth()[i] == Subject::person1) == (left != swapped));
  }
}

TEST_CASE("zero steps leave the initial parameters") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::static_layout), 1);
  const auto r = train(quick_train(Scheme::concat, 0), sc);
  Rng rng(5);
  const auto init = ToyBlockParams::random(8, rng);
  CHECK(r.params.w_q == init.w_q);
  CHECK(r.params.w_k == init.w_k);
  CHECK(r.params.w_v == init.w_v);
  CHECK(r.params.w_o == init.w_o);
  CHECK(r.params.frozen_base == init.frozen_base);
  CHECK(r.loss_curve.empty());
}

TEST_CASE("training never touches the frozen base and is deterministic") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::swap), 1);
  const auto init = train(quick_train(Scheme::lrope, 0), sc).params;
  const auto a = train(quick_train(Scheme::lrope, 60), sc);
  const auto b = train(quick_train(Scheme::lrope, 60), sc);
  CHECK(a.params.frozen_base == init.frozen_base);
  CHECK(a.params.w_q != init.w_q);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.params.w_o == b.params.w_o);
  CHECK(a.binding.mean == b.binding.mean);
}

TEST_CASE("every scheme fits the static layout") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::static_layout), 2);
  for (Scheme s : injection::kAllSchemes) {
    CAPTURE(injection::to_string(s));
    const auto setup = make_setup(sc, s, 1.0, LabelRangeConfig::standard());
    const auto before = train(quick_train(s, 0), sc).params;
    const auto after = train(quick_train(s, 500), sc).params;
    CHECK(held_out_loss(after, sc, setup) < held_out_loss(before, sc, setup));
  }
}

TEST_CASE("audio-free training keeps the key and value projections") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::swap), 1);
  auto cfg = quick_train(Scheme::lrope, 30);
  cfg.i2v_fraction = 1.0;
  const auto init = train(quick_train(Scheme::lrope, 0), sc).params;
  const auto r = train(cfg, sc);
  CHECK(r.params.w_k == init.w_k);
  CHECK(r.params.w_v == init.w_v);
}

TEST_CASE("a runaway learning rate is reported") {
  const auto sc = SyntheticScenario::generate(small_scenario(ScenarioKind::swap), 1);
  auto cfg = quick_train(Scheme::concat, 200);
  cfg.learning_rate = 50.0;
  CHECK_THROWS_AS(train(cfg, sc), TrainingDiverged);
}

TEST_CASE("train config validation") {
  auto cfg = quick_train(Scheme::concat, 1);
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = quick_train(Scheme::concat, 1);
  cfg.i2v_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("parameters survive a file round trip") {
  Rng rng(3);
  const auto p = ToyBlockParams::random(8, rng);
  const auto path = std::filesystem::temp_directory_path() / "lrope_lab_params_test.bin";
  save_params(path, p);
  const auto q = load_params(path);
  std::filesystem::remove(path);
  CHECK(q.w_q == p.w_q);
  CHECK(q.frozen_base == p.frozen_base);
  CHECK_THROWS_AS(ToyBlockParams::from_list({p.w_q}), Error);
}

TEST_CASE("symmetric init zeroes the query and key projections") {
  Rng rng(4);
  const auto p = ToyBlockParams::symmetric(8, rng);
  CHECK(p.w_q == Matrix(8, 8));
  CHECK(p.w_k == Matrix(8, 8));
}
