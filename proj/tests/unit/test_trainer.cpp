#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "dgl/errors.hpp"
#include "dgl/metrics.hpp"
#include "dgl/simd/kernels.hpp"
#include "dgl/trainer.hpp"
#include "support.hpp"

using namespace dgl;

namespace {

GaussianMixture p2() {
  const Matrix c = 0.15 * Matrix::Identity(2, 2);
  return GaussianMixture({{1.0 / 3, (Vector(2) << -1.5, 0).finished(), c},
                          {1.0 / 3, (Vector(2) << 1.5, 0).finished(), c},
                          {1.0 / 3, (Vector(2) << 0, 1.5).finished(), c}});
}

GaussianMixture p_hat2() {
  const Matrix c = 0.25 * Matrix::Identity(2, 2);
  return GaussianMixture({{0.5, (Vector(2) << -1.2, 0.3).finished(), c},
                          {0.3, (Vector(2) << 1.2, 0.3).finished(), c},
                          {0.2, (Vector(2) << 0, 1.2).finished(), c}});
}

MlpArchitecture arch(std::vector<int> widths = {32, 32}) {
  MlpArchitecture a;
  a.hidden_widths = std::move(widths);
  return a;
}

TrainConfig small_config() {
  TrainConfig c;
  c.n_real = c.n_fake = 2000;
  c.batch_size = 128;
  c.steps = 50;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("Adam matches the reference recurrence for three steps") {
  // Reference values: the textbook recurrence evaluated in 40-digit decimal arithmetic.
  const double expected[3][2] = {{9.00000000999999990e-1, -2.09999999950000000e+0},
                                 {9.05263158842105254e-1, -2.18305975229763895e+0},
                                 {8.87790605624722367e-1, -2.26052364035069111e+0}};
  const double grads[3][2] = {{1.0, 2.0}, {-1.0, 0.5}, {0.5, 0.5}};
  const auto before = simd::active_backend();
  for (simd::Backend backend : {simd::Backend::scalar, simd::Backend::avx2}) {
    if (backend == simd::Backend::avx2 && !simd::avx2_kernels()) continue;
    simd::select_backend(backend);
    Adam adam(2, 0.1);
    std::vector<double> p{1.0, -2.0};
    for (int k = 0; k < 3; ++k) {
      adam.step(p, grads[k]);
      CHECK(p[0] == doctest::Approx(expected[k][0]).epsilon(1e-14));
      CHECK(p[1] == doctest::Approx(expected[k][1]).epsilon(1e-14));
    }
    CHECK(adam.iterations() == 3);
    CHECK(adam.first_moment()[1] == doctest::Approx(0.257));
    CHECK(adam.second_moment()[0] == doctest::Approx(2.247001e-3));
  }
  simd::select_backend(before);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  c.batch_size = 30000;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.fake_source = FakeSource::reverse_sde;
  c.loss.gamma_on = GammaOn::mse;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  CHECK(train_config_to_json(back) == train_config_to_json(c));
  CHECK(ce_only_loss().gamma == 0.0);
  CHECK(ce_only_loss().mse_weight() == 0.0);
  CHECK(ce_only_loss().ce_weight() == 1.0);
  CHECK(combined_loss(0.3).ce_weight() == 0.3);
  CHECK(combined_loss(0.3).mse_weight() == 1.0);
}

TEST_CASE("prepare_datasets") {
  SdeSchedule s;
  TrainConfig c = small_config();
  const Datasets a = prepare_datasets(p2(), p_hat2(), c, s), b = prepare_datasets(p2(), p_hat2(), c, s);
  CHECK(a.real == b.real);
  CHECK(a.fake == b.fake);

  c.n_real = 500;
  c.n_fake = 50000;
  const Datasets sized = prepare_datasets(p2(), p_hat2(), c, s);
  CHECK(sized.real.rows() == 500);
  CHECK(sized.fake.rows() == 50000);

  c.n_real = c.n_fake = 1000;
  const Datasets same = prepare_datasets(p2(), p2(), c, s);
  CHECK(energy_permutation_test(same.real, same.fake, 200, 3).p_value > 0.01);

  c.fake_source = FakeSource::reverse_sde;
  c.sampler_steps = 200;
  c.n_real = c.n_fake = 300;
  const Datasets rev = prepare_datasets(p2(), p_hat2(), c, s);
  CHECK(rev.fake.rows() == 300);
  CHECK(rev.fake.allFinite());
}

TEST_CASE("training loop") {
  SdeSchedule s;
  const ScoreFn s_theta = mixture_score_fn(p_hat2(), s);

  SUBCASE("zero steps leave the parameters alone") {
    TrainConfig c = small_config();
    c.steps = 0;
    const Datasets data = prepare_datasets(p2(), p_hat2(), c, s);
    MlpDiscriminator d = MlpDiscriminator::initialized(arch(), 1);
    const std::vector<double> before(d.parameters().begin(), d.parameters().end());
    const TrainReport r = train(d, s_theta, data, c, s);
    CHECK(r.steps_completed == 0);
    CHECK(std::equal(before.begin(), before.end(), d.parameters().begin()));
  }

  SUBCASE("skipping the unweighted MSE term leaves the CE trajectory unchanged") {
    TrainConfig c = small_config();
    c.loss = ce_only_loss(c.loss);
    const Datasets data = prepare_datasets(p2(), p_hat2(), c, s);
    MlpDiscriminator d1 = MlpDiscriminator::initialized(arch({8, 8}), 4), d2 = d1;
    const TrainReport tracked = train(d1, s_theta, data, c, s);
    c.track_mse = false;
    const TrainReport skipped = train(d2, s_theta, data, c, s);
    CHECK(tracked.ce == skipped.ce);
    CHECK(std::equal(d1.parameters().begin(), d1.parameters().end(), d2.parameters().begin()));
    CHECK(std::all_of(skipped.mse.begin(), skipped.mse.end(), [](double v) { return v == 0.0; }));
  }

  SUBCASE("deterministic given seed, config and data") {
    TrainConfig c = small_config();
    const Datasets data = prepare_datasets(p2(), p_hat2(), c, s);
    MlpDiscriminator d1 = MlpDiscriminator::initialized(arch({8, 8}), 2), d2 = d1;
    const TrainReport r1 = train(d1, s_theta, data, c, s), r2 = train(d2, s_theta, data, c, s);
    CHECK(r1.total == r2.total);
    CHECK(r1.final_parameters == r2.final_parameters);
    CHECK(r1.steps_completed == 50);
    CHECK(r1.ce.size() == 50);
    const auto j = train_report_to_json(r1);
    CHECK(j.at("steps_completed") == 50);
  }

  SUBCASE("CE-only training beats the d = 0 cross-entropy") {
    TrainConfig c = small_config();
    c.steps = 2000;
    c.loss = ce_only_loss();
    c.loss.lambda_kind = LambdaKind::uniform;
    c.early_stop.enabled = false;
    const Datasets data = prepare_datasets(p2(), p_hat2(), c, s);
    MlpDiscriminator d = MlpDiscriminator::initialized(arch(), 3);
    const TrainReport r = train(d, s_theta, data, c, s);
    REQUIRE(r.steps_completed == 2000);
    CHECK(r.ce.front() == doctest::Approx(2 * std::log(2.0)));
    double tail = 0.0;
    for (std::size_t i = 1900; i < 2000; ++i) tail += r.ce[i] / 100;
    CHECK(tail < 2 * std::log(2.0));
  }

  SUBCASE("early stop on a flat CE curve") {
    TrainConfig c = small_config();
    c.steps = 3000;
    c.learning_rate = 1e-300;
    c.loss.lambda_kind = LambdaKind::uniform;
    c.early_stop.window = 100;
    const Datasets data = prepare_datasets(p2(), p_hat2(), c, s);
    MlpDiscriminator d = MlpDiscriminator::initialized(arch({4}), 3);
    const TrainReport r = train(d, s_theta, data, c, s);
    // d stays 0, so every batch CE is 2 log 2 and the second window already matches the first.
    CHECK(r.early_stopped);
    CHECK(r.steps_completed == 200);
    CHECK(r.ce.size() == r.steps_completed);
  }

  SUBCASE("divergence is reported with the step") {
    TrainConfig c = small_config();
    const auto ckpt = std::filesystem::temp_directory_path() / "dgl_diverged.bin";
    std::filesystem::remove(ckpt);
    c.checkpoint_path = ckpt.string();
    const Datasets data = prepare_datasets(p2(), p_hat2(), c, s);
    MlpDiscriminator d = MlpDiscriminator::initialized(arch({4}), 3);
    const ScoreFn bad = [](const Vector& x, double) { return Vector::Constant(x.size(), std::nan("")).eval(); };
    try {
      train(d, bad, data, c, s);
      FAIL("expected DivergedLossError");
    } catch (const DivergedLossError& e) {
      CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
    CHECK(std::filesystem::exists(ckpt));
    std::filesystem::remove(ckpt);
  }
}

TEST_CASE("batch times stay in [t_min, T]") {
  SdeSchedule s;
  Rng rng = make_rng(1, 1);
  const auto t = sample_times(100000, s, rng);
  CHECK(*std::min_element(t.begin(), t.end()) >= s.t_min());
  CHECK(*std::max_element(t.begin(), t.end()) <= s.horizon);
}

TEST_CASE("total variation of 1D Gaussians") {
  for (double mu : {0.1, 0.5, 2.0, 4.65}) {
    const double tv = total_variation_1d(GaussianMixture::standard_normal(1),
                                         GaussianMixture::gaussian(Vector::Constant(1, mu), Matrix::Identity(1, 1)));
    CHECK(tv == doctest::Approx(std::erf(mu / (2 * std::sqrt(2.0)))).epsilon(1e-8));
  }
}

TEST_CASE("overfit harness sizes and flags") {
  OverfitOptions o;
  o.max_steps = 50;
  const OverfitResult r =
      overfit_harness(GaussianMixture::standard_normal(1),
                      GaussianMixture::gaussian(Vector::Constant(1, 0.5), Matrix::Identity(1, 1)), 100, 0.01, o);
  CHECK(r.width == 64);
  CHECK(r.steps <= 50);
  CHECK(r.reached == (r.achieved_eps <= 0.01));
  CHECK(r.optimal_baseline == doctest::Approx(0.25).epsilon(1e-6));  // int p |grad d*|^2 = mu^2
  CHECK(r.mse_estimate > 0.0);
}

TEST_CASE("size sweep emits every row") {
  SdeSchedule s;
  TrainConfig c = small_config();
  c.steps = 5;
  SizeSweepOptions o;
  o.sizes = {200, 400};
  o.gammas = {1.0};
  o.kl.mc = 50;
  o.kl.time_nodes = 5;
  o.arch = arch({4});
  const auto rows = size_sweep(p2(), p_hat2(), c, s, o);
  REQUIRE(rows.size() == 4);
  int largest = 0;
  for (const auto& r : rows) {
    CHECK(r.error.empty());
    if (r.size == 400) ++largest;
  }
  CHECK(largest == 2);
}
