#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "dgl/discriminator.hpp"
#include "dgl/errors.hpp"
#include "dgl/objectives.hpp"
#include "dgl/parallel.hpp"
#include "support.hpp"

using namespace dgl;
using test::rel_err;

namespace {

GaussianMixture gauss1(double mu) { return GaussianMixture::gaussian(Vector::Constant(1, mu), Matrix::Identity(1, 1)); }

GaussianMixture pair_p() {
  const Matrix c = 0.15 * Matrix::Identity(2, 2);
  return GaussianMixture({{1.0 / 3, (Vector(2) << -1.5, 0).finished(), c},
                          {1.0 / 3, (Vector(2) << 1.5, 0).finished(), c},
                          {1.0 / 3, (Vector(2) << 0, 1.5).finished(), c}});
}

GaussianMixture pair_p_hat() {
  const Matrix c = 0.25 * Matrix::Identity(2, 2);
  return GaussianMixture({{0.5, (Vector(2) << -1.2, 0.3).finished(), c},
                          {0.3, (Vector(2) << 1.2, 0.3).finished(), c},
                          {0.2, (Vector(2) << 0, 1.2).finished(), c}});
}

MlpDiscriminator random_mlp(int dim, Activation act, std::uint64_t seed, std::vector<int> widths = {16, 16}) {
  MlpArchitecture a;
  a.data_dim = dim;
  a.hidden_widths = std::move(widths);
  a.activation = act;
  MlpDiscriminator d = MlpDiscriminator::initialized(a, seed);
  Rng rng = make_rng(seed, 1);
  d.randomize_readout(rng, 1.0);
  // Nonzero hidden biases so every code path sees generic values.
  std::normal_distribution<double> z(0.0, 0.3);
  auto p = d.parameters();
  std::vector<double> q(p.begin(), p.end());
  for (auto& v : q) v += 0.05 * z(rng);
  d.set_parameters(q);
  return d;
}

double fd_gradient_check(const Discriminator& d, int n_points, std::uint64_t seed, double h) {
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const Vector x = test::random_vector(d.dim(), rng, 1.5);
    const double t = ut(rng);
    const Vector fd = test::central_gradient([&](const Vector& y) { return d.value(y, t); }, x, h);
    worst = std::max(worst, rel_err(d.input_gradient(x, t), fd, 1e-3));
  }
  return worst;
}

}  // namespace

TEST_CASE("mlp architecture") {
  MlpArchitecture a;
  a.data_dim = 2;
  a.hidden_widths = {5, 7};
  // (3*5 + 5) + (5*7 + 7) + (7 + 1)
  CHECK(a.parameter_count() == 70);
  CHECK(MlpDiscriminator(a).parameters().size() == 70);
  a.hidden_widths = {};
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);
  CHECK(is_twice_differentiable(Activation::tanh));
  CHECK(is_twice_differentiable(Activation::softplus));
  CHECK_FALSE(is_twice_differentiable(Activation::relu));
  CHECK(activation_from_string(to_string(Activation::softplus)) == Activation::softplus);
}

TEST_CASE("value examples") {
  SdeSchedule s;
  const OptimalDiscriminator same(RatioField(pair_p(), pair_p()), s);
  const Vector x = (Vector(2) << 0.3, -0.4).finished();
  for (double t : {0.0, 0.3, 1.0}) {
    CHECK(same.value(x, t) == 0.0);
    CHECK(same.input_gradient(x, t).norm() == 0.0);
  }

  const RatioField field(pair_p(), pair_p_hat());
  const OptimalDiscriminator opt(field, s);
  const OscillatoryDiscriminator flat(field, s, 0.01, 0.0, Vector());
  for (double t : {0.0, 0.2, 0.7}) {
    CHECK(flat.value(x, t) == opt.value(x, t));
    CHECK(flat.input_gradient(x, t) == opt.input_gradient(x, t));
    const RatioField ft = opt.field_at(t);
    CHECK(opt.value(x, t) == doctest::Approx(ft.log_ratio(x)).epsilon(1e-14));
    CHECK((opt.input_gradient(x, t) - ft.ratio_gradient(x)).norm() <= 1e-12);
  }

  MlpArchitecture a;
  MlpDiscriminator m = MlpDiscriminator::initialized(a, 3);
  CHECK(m.value(x, 0.5) == 0.0);
  auto p = m.parameters();
  std::vector<double> q(p.begin(), p.end());
  q.back() = 0.7;  // read-out bias
  m.set_parameters(q);
  Rng rng = make_rng(4, 0);
  for (int i = 0; i < 10; ++i) CHECK(m.value(test::random_vector(2, rng, 3.0), i / 10.0) == 0.7);
}

TEST_CASE("input gradients match finite differences") {
  SdeSchedule s;
  CHECK(fd_gradient_check(random_mlp(2, Activation::tanh, 1), 100, 10, 1e-5) <= 1e-5);
  CHECK(fd_gradient_check(random_mlp(1, Activation::softplus, 2), 100, 11, 1e-5) <= 1e-5);
  CHECK(fd_gradient_check(random_mlp(3, Activation::tanh, 5, {8}), 100, 12, 1e-5) <= 1e-5);
  CHECK(fd_gradient_check(OptimalDiscriminator(RatioField(pair_p(), pair_p_hat()), s), 100, 13, 1e-5) <= 1e-5);
  const RatioField g1(gauss1(0.0), gauss1(0.5));
  CHECK(fd_gradient_check(OscillatoryDiscriminator(g1, s, 0.01, 3.0, Vector()), 100, 14, 1e-6) <= 1e-5);
}

TEST_CASE("oscillatory construction") {
  SdeSchedule s;
  const RatioField g1(gauss1(0.0), gauss1(0.5));
  const OptimalDiscriminator opt(g1, s);

  SUBCASE("sup deviation bound and epsilon -> 0") {
    // inf r* over [-4, 4] at t = 0: d* = -x/2 + 1/8 is smallest at x = 4.
    const double inf_r = std::exp(-2.0 + 0.125);
    double prev_sup = 1e300;
    for (double eps : {1e-2, 1e-4, 1e-6, 1e-8}) {
      const OscillatoryDiscriminator osc(g1, s, eps, 7.0, Vector());
      double sup = 0.0, sup_up = 0.0;
      for (double x = -4.0; x <= 4.0; x += 0.001) {
        const Vector v = Vector::Constant(1, x);
        const double dev = osc.value(v, 0.0) - opt.value(v, 0.0);
        sup = std::max(sup, std::abs(dev));
        sup_up = std::max(sup_up, dev);
      }
      // |log(1 + a sin)| with a <= sqrt(eps / inf r*): the downward swing is the larger one.
      CHECK(sup <= -std::log(1 - std::sqrt(eps / inf_r)) + 1e-12);
      CHECK(sup_up <= std::log(1 + std::sqrt(eps / inf_r)) + 1e-12);
      CHECK(sup < prev_sup);
      prev_sup = sup;
    }
    CHECK(prev_sup <= 1e-3);
  }

  SUBCASE("r* + h <= 0 is reported") {
    // At x = 10, r* ~ 0.0076 < eps and sin(omega x) = -1.
    const double omega = 1.5 * std::numbers::pi / 10.0;
    const OscillatoryDiscriminator osc(g1, s, 0.01, omega, Vector());
    CHECK_THROWS_AS(osc.value(Vector::Constant(1, 10.0), 0.0), ConstructionViolatedError);
  }

  SUBCASE("feasibility check") {
    OscillatoryOptions o;
    o.region.lower = Vector::Constant(1, -6.0);
    o.region.upper = Vector::Constant(1, 6.0);
    CHECK_NOTHROW(build_oscillatory(g1, s, 0.01, 10.0, o));
    o.region.upper = Vector::Constant(1, 12.0);
    try {
      build_oscillatory(g1, s, 0.01, 10.0, o);
      FAIL("expected ConstructionInfeasibleError");
    } catch (const ConstructionInfeasibleError& e) {
      REQUIRE(e.point().size() == 1);
      // d*(x) = -x/2 + 1/8 < log 0.01 beyond x ~ 9.46
      CHECK(e.point()[0] > 9.4);
      CHECK(e.time() == 0.0);
    }
  }

  SUBCASE("near-optimal CE, growing gradient error") {
    QuadratureOptions q;
    q.points_per_axis = 20001;
    const double ce_opt = ce_loss_quadrature(opt, gauss1(0.0), gauss1(0.5), s, 0.0, q);
    const OscillatoryDiscriminator osc5(g1, s, 0.01, 5.0, Vector());
    CHECK(ce_loss_quadrature(osc5, gauss1(0.0), gauss1(0.5), s, 0.0, q) - ce_opt <= 0.01);
    const OscillatoryDiscriminator osc1(g1, s, 0.01, 1.0, Vector()), osc100(g1, s, 0.01, 100.0, Vector());
    const double e1 = gradient_error_quadrature(osc1, gauss1(0.0), gauss1(0.5), s, 0.0, q);
    const double e100 = gradient_error_quadrature(osc100, gauss1(0.0), gauss1(0.5), s, 0.0, q);
    CHECK(e100 >= 10 * e1);
  }
}

TEST_CASE("loss_param_gradient") {
  SUBCASE("dead network: only the read-out bias moves") {
    MlpArchitecture a;
    a.hidden_widths = {6, 5};
    MlpDiscriminator d(a);
    std::vector<double> zeros(d.parameters().size(), 0.0);
    d.set_parameters(zeros);
    Points x(4, 2);
    x << 0.1, 0.2, -1, 3, 2, 2, 0.5, -0.5;
    const std::vector<double> t{0.1, 0.4, 0.6, 0.9};
    const LossGradient lg = loss_param_gradient(d, x, t, [](std::size_t, double v, const Vector&) {
      return PointSensitivity{v / 4, 0.25, {}};
    });
    for (std::size_t i = 0; i + 1 < lg.gradient.size(); ++i) CHECK(lg.gradient[i] == 0.0);
    CHECK(lg.gradient.back() == doctest::Approx(1.0));
  }

  SUBCASE("squared input-gradient norm matches finite differences over parameters") {
    for (Activation act : {Activation::tanh, Activation::softplus}) {
      MlpDiscriminator d = random_mlp(2, act, 21, {7, 6});
      Points x(1, 2);
      x << 0.4, -0.8;
      const std::vector<double> t{0.35};
      const PointLoss loss = [](std::size_t, double, const Vector& g) {
        return PointSensitivity{g.squaredNorm(), 0.0, Vector(2.0 * g)};
      };
      const LossGradient lg = loss_param_gradient(d, x, t, loss);
      std::vector<double> p(d.parameters().begin(), d.parameters().end());
      const double h = 1e-6;
      double worst = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto eval = [&](double delta) {
          std::vector<double> q = p;
          q[i] += delta;
          MlpDiscriminator e = d;
          e.set_parameters(q);
          return e.input_gradient(x.row(0).transpose(), t[0]).squaredNorm();
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        worst = std::max(worst, std::abs(fd - lg.gradient[i]) / std::max({std::abs(fd), std::abs(lg.gradient[i]), 1e-4}));
      }
      CHECK(worst <= 1e-3);
      CHECK(lg.loss == doctest::Approx(d.input_gradient(x.row(0).transpose(), t[0]).squaredNorm()));
    }
  }

  SUBCASE("batched first-order path agrees with the per-point path") {
    for (Activation act : {Activation::tanh, Activation::softplus, Activation::relu}) {
      const MlpDiscriminator d = random_mlp(2, act, 31, {9, 7});
      Rng rng(32);
      Points x(70, 2);
      std::vector<double> t(70);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        x.row(i) = test::random_vector(2, rng).transpose();
        t[static_cast<std::size_t>(i)] = u(rng);
      }
      // Logistic loss with labels alternating by index.
      auto point = [](std::size_t i, double v) {
        const double y = i % 2 ? 1.0 : -1.0;
        return std::pair{std::log1p(std::exp(-y * v)), -y / (1.0 + std::exp(y * v))};
      };
      const LossGradient ref = loss_param_gradient(d, x, t, [&](std::size_t i, double v, const Vector&) {
        const auto [l, dl] = point(i, v);
        return PointSensitivity{l, dl, {}};
      });
      ValueLoss batched;
      batched.fn = [&](const Eigen::VectorXd& v, Eigen::VectorXd& dv) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
          const auto [l, dl] = point(static_cast<std::size_t>(i), v[i]);
          total += l;
          dv[i] = dl;
        }
        return total;
      };
      const LossGradient fast = value_loss_param_gradient(d, x, t, batched);
      CHECK(fast.loss == doctest::Approx(ref.loss).epsilon(1e-12));
      const Eigen::Map<const Vector> a(fast.gradient.data(), static_cast<Eigen::Index>(fast.gradient.size()));
      const Eigen::Map<const Vector> b(ref.gradient.data(), static_cast<Eigen::Index>(ref.gradient.size()));
      CHECK(test::rel_err(Vector(a), Vector(b)) <= 1e-12);
    }
  }

  SUBCASE("relu cannot train through the input gradient") {
    MlpDiscriminator d = random_mlp(2, Activation::relu, 3);
    Points x = Points::Zero(2, 2);
    const std::vector<double> t{0.2, 0.3};
    CHECK_THROWS_AS(loss_param_gradient(d, x, t,
                                        [](std::size_t, double, const Vector& g) {
                                          return PointSensitivity{0.0, 0.0, Vector(g)};
                                        }),
                    UnsupportedArchitectureError);
    CHECK_NOTHROW(loss_param_gradient(d, x, t, [](std::size_t, double v, const Vector&) {
      return PointSensitivity{v, 1.0, {}};
    }));
  }

  SUBCASE("identical across worker counts") {
    MlpDiscriminator d = random_mlp(2, Activation::tanh, 8);
    Rng rng = make_rng(8, 5);
    Points x(200, 2);
    std::vector<double> t(200);
    for (int i = 0; i < 200; ++i) {
      x.row(i) = test::random_vector(2, rng).transpose();
      t[i] = (i + 0.5) / 200;
    }
    const PointLoss loss = [](std::size_t, double v, const Vector& g) {
      return PointSensitivity{v * v + g.squaredNorm(), 2 * v, Vector(2.0 * g)};
    };
    const std::size_t workers = worker_count();
    set_worker_count(1);
    const LossGradient a = loss_param_gradient(d, x, t, loss);
    set_worker_count(4);
    const LossGradient b = loss_param_gradient(d, x, t, loss);
    set_worker_count(workers);
    CHECK(a.loss == b.loss);
    CHECK(a.gradient == b.gradient);
  }
}

TEST_CASE("checkpoint round trip") {
  MlpDiscriminator d = random_mlp(2, Activation::softplus, 31, {9, 4});
  std::stringstream ss;
  save_checkpoint(d, ss);
  const MlpDiscriminator back = load_checkpoint(ss);
  CHECK(back.architecture().hidden_widths == d.architecture().hidden_widths);
  CHECK(back.architecture().activation == Activation::softplus);
  CHECK(std::equal(back.parameters().begin(), back.parameters().end(), d.parameters().begin()));

  std::stringstream truncated(ss.str().substr(0, ss.str().size() - 8));
  CHECK_THROWS(load_checkpoint(truncated));
  std::stringstream garbage("not a header\n");
  CHECK_THROWS(load_checkpoint(garbage));
}
