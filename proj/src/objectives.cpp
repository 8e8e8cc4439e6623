#include "dgl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dgl/errors.hpp"
#include "dgl/parallel.hpp"

namespace dgl {
namespace {

constexpr double kCoverageTolerance = 1e-6;
constexpr std::size_t kGridBlock = 4096;
constexpr std::size_t kDrawBlock = 4096;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_finite(double v, const char* where) {
  if (!std::isfinite(v)) throw DivergedLossError(std::string(where) + ": discriminator output is not finite");
}

void check_batch(const PerturbedBatch& b, int dim, const char* what) {
  if (b.size() == 0) throw std::invalid_argument(std::string(what) + " batch is empty");
  if (static_cast<std::size_t>(b.xt.rows()) != b.size() || static_cast<std::size_t>(b.x0.rows()) != b.size())
    throw std::invalid_argument(std::string(what) + " batch has inconsistent sizes");
  if (b.xt.cols() != dim || b.x0.cols() != dim)
    throw std::invalid_argument(std::string(what) + " batch dimension does not match the discriminator");
}

int default_points_per_axis(int dim) {
  if (dim == 1) return 2001;
  if (dim == 2) return 201;
  return 61;
}

// Tensor grid covering every component of every mixture to `sigmas` standard deviations.
struct QuadGrid {
  Vector lower;
  Vector step;
  int n = 0;
  int dim = 0;
  double cell = 1.0;

  std::size_t size() const {
    std::size_t s = 1;
    for (int k = 0; k < dim; ++k) s *= static_cast<std::size_t>(n);
    return s;
  }
  void node(std::size_t index, Vector& x) const {
    for (int k = 0; k < dim; ++k) {
      x[k] = lower[k] + step[k] * static_cast<double>(index % static_cast<std::size_t>(n));
      index /= static_cast<std::size_t>(n);
    }
  }
};

QuadGrid covering_grid(std::initializer_list<const GaussianMixture*> mixtures, const QuadratureOptions& options) {
  const int dim = (*mixtures.begin())->dim();
  Vector lo = Vector::Constant(dim, std::numeric_limits<double>::infinity());
  Vector hi = -lo;
  for (const GaussianMixture* m : mixtures) {
    for (const auto& c : m->components()) {
      for (int k = 0; k < dim; ++k) {
        const double half = options.coverage_sigmas * std::sqrt(c.covariance(k, k));
        lo[k] = std::min(lo[k], c.mean[k] - half);
        hi[k] = std::max(hi[k], c.mean[k] + half);
      }
    }
  }
  QuadGrid g;
  g.dim = dim;
  g.n = options.points_per_axis > 0 ? options.points_per_axis : default_points_per_axis(dim);
  if (g.n < 2) throw std::invalid_argument("quadrature needs at least 2 points per axis");
  g.lower = lo;
  g.step = (hi - lo) / static_cast<double>(g.n - 1);
  g.cell = g.step.prod();
  return g;
}

// Sum over grid nodes of fn(x) * cell, in fixed blocks reduced in order.
template <class Fn>
double grid_sum(const QuadGrid& g, Fn&& fn) {
  const std::size_t total = g.size();
  const std::size_t n_blocks = (total + kGridBlock - 1) / kGridBlock;
  std::vector<double> partial(n_blocks, 0.0);
  parallel_for(n_blocks, [&](std::size_t b) {
    Vector x(g.dim);
    double acc = 0.0;
    const std::size_t end = std::min(total, (b + 1) * kGridBlock);
    for (std::size_t i = b * kGridBlock; i < end; ++i) {
      g.node(i, x);
      acc += fn(x);
    }
    partial[b] = acc;
  });
  double sum = 0.0;
  for (double v : partial) sum += v;
  return sum * g.cell;
}

void require_coverage(double mass, const char* what) {
  if (mass < 1.0 - kCoverageTolerance)
    throw InsufficientCoverageError(std::string(what) + ": quadrature grid holds only " + std::to_string(mass) +
                                        " of the probability mass",
                                    mass);
}

std::vector<double> trapezoid_nodes(const SdeSchedule& schedule, int n) {
  if (n < 2) throw std::invalid_argument("need at least 2 time nodes");
  std::vector<double> t(static_cast<std::size_t>(n));
  const double lo = schedule.t_min();
  const double h = (schedule.horizon - lo) / (n - 1);
  for (int j = 0; j < n; ++j) t[static_cast<std::size_t>(j)] = j + 1 == n ? schedule.horizon : lo + j * h;
  return t;
}

double trapezoid_weight(int j, int n, double h) { return (j == 0 || j + 1 == n) ? 0.5 * h : h; }

// Fixed-t expectation under P_t of |grad log(p_t/p_hat_t) - grad d|^2, with coverage check.
double gradient_error_at(const Discriminator& disc, const GaussianMixture& pt, const GaussianMixture& pht, double t,
                         const QuadratureOptions& options) {
  const QuadGrid g = covering_grid({&pt}, options);
  const double mass = grid_sum(g, [&](const Vector& x) { return std::exp(pt.log_density(x)); });
  require_coverage(mass, "gradient error");
  return grid_sum(g, [&](const Vector& x) {
    Vector sp, sq, gd;
    const double lp = pt.log_density_and_score(x, sp);
    const double w = std::exp(lp);
    if (w == 0.0) return 0.0;
    pht.log_density_and_score(x, sq);
    disc.value_and_gradient(x, t, gd);
    return w * (sp - sq - gd).squaredNorm();
  });
}

}  // namespace

std::string to_string(LambdaKind k) { return k == LambdaKind::g_squared ? "g_squared" : "uniform"; }

LambdaKind lambda_kind_from_string(const std::string& s) {
  if (s == "g_squared" || s == "g2") return LambdaKind::g_squared;
  if (s == "uniform") return LambdaKind::uniform;
  throw std::invalid_argument("unknown lambda kind '" + s + "'");
}

std::string to_string(GammaOn g) { return g == GammaOn::ce ? "ce" : "mse"; }

GammaOn gamma_on_from_string(const std::string& s) {
  if (s == "ce") return GammaOn::ce;
  if (s == "mse") return GammaOn::mse;
  throw std::invalid_argument("gamma_on must be 'ce' or 'mse', got '" + s + "'");
}

void LossConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be finite and >= 0");
}

double LossConfig::lambda(const SdeSchedule& schedule, double t) const {
  return lambda_kind == LambdaKind::g_squared ? schedule.g2(t) : 1.0;
}

nlohmann::json loss_config_to_json(const LossConfig& c) {
  return {{"lambda", to_string(c.lambda_kind)}, {"gamma", c.gamma}, {"gamma_on", to_string(c.gamma_on)}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  if (j.contains("lambda")) c.lambda_kind = lambda_kind_from_string(j.at("lambda").get<std::string>());
  c.gamma = j.value("gamma", c.gamma);
  if (j.contains("gamma_on")) c.gamma_on = gamma_on_from_string(j.at("gamma_on").get<std::string>());
  c.validate();
  return c;
}

std::vector<double> sample_times(std::size_t n, const SdeSchedule& schedule, Rng& rng) {
  std::uniform_real_distribution<double> u(schedule.t_min(), schedule.horizon);
  std::vector<double> t(n);
  for (auto& v : t) v = u(rng);
  return t;
}

PerturbedBatch perturb(const Points& x0, std::span<const double> t, const SdeSchedule& schedule, Rng& rng) {
  if (static_cast<std::size_t>(x0.rows()) != t.size()) throw std::invalid_argument("perturb: x0 and t sizes differ");
  PerturbedBatch b;
  b.x0 = x0;
  b.t.assign(t.begin(), t.end());
  b.xt.resize(x0.rows(), x0.cols());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const PerturbationKernel k = kernel_at(schedule, t[static_cast<std::size_t>(i)]);
    for (Eigen::Index d = 0; d < x0.cols(); ++d) b.xt(i, d) = k.mean_scale * x0(i, d) + k.std * normal(rng);
  }
  return b;
}

double ce_loss(const Discriminator& disc, const PerturbedBatch& real, const PerturbedBatch& fake,
               const LossConfig& cfg, const SdeSchedule& schedule) {
  check_batch(real, disc.dim(), "real");
  check_batch(fake, disc.dim(), "fake");
  double real_sum = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const double d = disc.value(real.xt.row(static_cast<Eigen::Index>(i)).transpose(), real.t[i]);
    check_finite(d, "ce_loss");
    real_sum += cfg.lambda(schedule, real.t[i]) * softplus(-d);
  }
  double fake_sum = 0.0;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const double d = disc.value(fake.xt.row(static_cast<Eigen::Index>(i)).transpose(), fake.t[i]);
    check_finite(d, "ce_loss");
    fake_sum += cfg.lambda(schedule, fake.t[i]) * softplus(d);
  }
  return real_sum / static_cast<double>(real.size()) + fake_sum / static_cast<double>(fake.size());
}

double mse_d_loss(const Discriminator& disc, const ScoreFn& s_theta, const PerturbedBatch& real,
                  const LossConfig& cfg, const SdeSchedule& schedule) {
  check_batch(real, disc.dim(), "real");
  double sum = 0.0;
  Vector grad;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Vector x0 = real.x0.row(row).transpose();
    const Vector xt = real.xt.row(row).transpose();
    const double t = real.t[i];
    const Vector target = kernel_score(kernel_at(schedule, t), x0, xt) - s_theta(xt, t);
    check_finite(disc.value_and_gradient(xt, t, grad), "mse_d_loss");
    sum += cfg.lambda(schedule, t) * (target - grad).squaredNorm();
  }
  return sum / static_cast<double>(real.size());
}

LossTerms train_loss(const Discriminator& disc, const ScoreFn& s_theta, const PerturbedBatch& real,
                     const PerturbedBatch& fake, const LossConfig& cfg, const SdeSchedule& schedule) {
  LossTerms out;
  out.ce = ce_loss(disc, real, fake, cfg, schedule);
  out.mse = mse_d_loss(disc, s_theta, real, cfg, schedule);
  out.total = cfg.mse_weight() * out.mse + cfg.ce_weight() * out.ce;
  return out;
}

LossTerms train_loss_gradient(const MlpDiscriminator& disc, const ScoreFn& s_theta, const PerturbedBatch& real,
                              const PerturbedBatch& fake, const LossConfig& cfg, const SdeSchedule& schedule,
                              std::vector<double>& gradient, bool terms_only_ce) {
  check_batch(real, disc.dim(), "real");
  check_batch(fake, disc.dim(), "fake");
  const std::size_t nr = real.size();
  const std::size_t nf = fake.size();
  const int dim = disc.dim();

  // Per real point: lambda and the regression target k - s_theta.
  std::vector<double> lambda_real(nr), lambda_fake(nf);
  Points target(static_cast<Eigen::Index>(nr), dim);
  for (std::size_t i = 0; i < nr; ++i) lambda_real[i] = cfg.lambda(schedule, real.t[i]);
  for (std::size_t i = 0; i < nf; ++i) lambda_fake[i] = cfg.lambda(schedule, fake.t[i]);
  if (!terms_only_ce) {
    const std::size_t n_blocks = (nr + 63) / 64;
    parallel_for(n_blocks, [&](std::size_t b) {
      for (std::size_t i = b * 64; i < std::min(nr, (b + 1) * 64); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const Vector x0 = real.x0.row(row).transpose();
        const Vector xt = real.xt.row(row).transpose();
        target.row(row) = (kernel_score(kernel_at(schedule, real.t[i]), x0, xt) - s_theta(xt, real.t[i])).transpose();
      }
    });
  }

  Points x(static_cast<Eigen::Index>(nr + nf), dim);
  x.topRows(static_cast<Eigen::Index>(nr)) = real.xt;
  x.bottomRows(static_cast<Eigen::Index>(nf)) = fake.xt;
  std::vector<double> t(real.t);
  t.insert(t.end(), fake.t.begin(), fake.t.end());

  const double ce_w = cfg.ce_weight();
  const double mse_w = terms_only_ce ? 0.0 : cfg.mse_weight();
  const double inv_r = 1.0 / static_cast<double>(nr);
  const double inv_f = 1.0 / static_cast<double>(nf);
  std::vector<double> ce_part(nr + nf, 0.0), mse_part(nr, 0.0);

  const LossGradient lg = loss_param_gradient(disc, x, t, [&](std::size_t i, double v, const Vector& grad) {
    check_finite(v, "train_loss");
    PointSensitivity s;
    if (i < nr) {
      const double lam = lambda_real[i];
      ce_part[i] = lam * softplus(-v) * inv_r;
      s.dloss_dvalue = -ce_w * lam * sigmoid(-v) * inv_r;
      if (!terms_only_ce) {
        const Vector r = target.row(static_cast<Eigen::Index>(i)).transpose() - grad;
        mse_part[i] = lam * r.squaredNorm() * inv_r;
        if (mse_w != 0.0) s.dloss_dgrad = (-2.0 * mse_w * lam * inv_r) * r;
      }
      s.loss = ce_w * ce_part[i] + mse_w * mse_part[i];
    } else {
      const double lam = lambda_fake[i - nr];
      ce_part[i] = lam * softplus(v) * inv_f;
      s.dloss_dvalue = ce_w * lam * sigmoid(v) * inv_f;
      s.loss = ce_w * ce_part[i];
    }
    return s;
  });

  LossTerms out;
  for (double v : ce_part) out.ce += v;
  for (double v : mse_part) out.mse += v;
  out.total = ce_w * out.ce + mse_w * out.mse;
  gradient = lg.gradient;
  return out;
}

Estimate mse_d_loss_expectation(const Discriminator& disc, const ScoreFn& s_theta, const GaussianMixture& p,
                                const LossConfig& cfg, const SdeSchedule& schedule, std::size_t n_draws,
                                std::uint64_t seed) {
  if (n_draws < 2) throw std::invalid_argument("mse_d_loss_expectation: need at least 2 draws");
  if (p.dim() != disc.dim()) throw std::invalid_argument("mse_d_loss_expectation: dimension mismatch");
  const std::size_t n_blocks = (n_draws + kDrawBlock - 1) / kDrawBlock;
  std::vector<double> sums(n_blocks, 0.0), sq_sums(n_blocks, 0.0);
  const double t_lo = schedule.t_min();
  const double t_span = schedule.horizon - t_lo;
  parallel_for(n_blocks, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    const std::size_t begin = b * kDrawBlock;
    const std::size_t end = std::min(n_draws, begin + kDrawBlock);
    const Points x0s = p.sample(end - begin, rng);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector xt(p.dim()), grad;
    for (std::size_t i = begin; i < end; ++i) {
      const double t = t_lo + (static_cast<double>(i) + unif(rng)) / static_cast<double>(n_draws) * t_span;
      const PerturbationKernel k = kernel_at(schedule, t);
      const Vector x0 = x0s.row(static_cast<Eigen::Index>(i - begin)).transpose();
      for (int d = 0; d < p.dim(); ++d) xt[d] = k.mean_scale * x0[d] + k.std * normal(rng);
      const Vector target = kernel_score(k, x0, xt) - s_theta(xt, t);
      disc.value_and_gradient(xt, t, grad);
      const double v = cfg.lambda(schedule, t) * (target - grad).squaredNorm();
      sums[b] += v;
      sq_sums[b] += v * v;
    }
  });
  double s = 0.0, s2 = 0.0;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    s += sums[b];
    s2 += sq_sums[b];
  }
  const double n = static_cast<double>(n_draws);
  const double mean = s / n;
  const double var = std::max(0.0, (s2 - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

double sm_d_loss_quadrature(const Discriminator& disc, const GaussianMixture& p, const GaussianMixture& p_hat,
                            const LossConfig& cfg, const SdeSchedule& schedule, const QuadratureOptions& options) {
  if (p.dim() != p_hat.dim() || p.dim() != disc.dim())
    throw std::invalid_argument("sm_d_loss_quadrature: dimension mismatch");
  if (options.time_nodes < 50) throw std::invalid_argument("sm_d_loss_quadrature: need at least 50 time nodes");
  const std::vector<double> ts = trapezoid_nodes(schedule, options.time_nodes);
  const double h = (schedule.horizon - schedule.t_min()) / (options.time_nodes - 1);
  double total = 0.0;
  for (int j = 0; j < options.time_nodes; ++j) {
    const double t = ts[static_cast<std::size_t>(j)];
    const GaussianMixture pt = diffuse(p, schedule, t);
    const GaussianMixture pht = diffuse(p_hat, schedule, t);
    total += trapezoid_weight(j, options.time_nodes, h) * cfg.lambda(schedule, t) *
             gradient_error_at(disc, pt, pht, t, options);
  }
  return total / (schedule.horizon - schedule.t_min());
}

double ce_loss_quadrature(const Discriminator& disc, const GaussianMixture& p, const GaussianMixture& p_hat,
                          const SdeSchedule& schedule, double t, const QuadratureOptions& options) {
  if (p.dim() != p_hat.dim() || p.dim() != disc.dim())
    throw std::invalid_argument("ce_loss_quadrature: dimension mismatch");
  const GaussianMixture pt = diffuse(p, schedule, t);
  const GaussianMixture pht = diffuse(p_hat, schedule, t);
  const QuadGrid g = covering_grid({&pt, &pht}, options);
  require_coverage(grid_sum(g, [&](const Vector& x) { return std::exp(pt.log_density(x)); }), "ce quadrature (P)");
  require_coverage(grid_sum(g, [&](const Vector& x) { return std::exp(pht.log_density(x)); }),
                   "ce quadrature (P_hat)");
  return grid_sum(g, [&](const Vector& x) {
    const double d = disc.value(x, t);
    check_finite(d, "ce_loss_quadrature");
    return std::exp(pt.log_density(x)) * softplus(-d) + std::exp(pht.log_density(x)) * softplus(d);
  });
}

double gradient_error_quadrature(const Discriminator& disc, const GaussianMixture& p, const GaussianMixture& p_hat,
                                 const SdeSchedule& schedule, double t, const QuadratureOptions& options) {
  if (p.dim() != p_hat.dim() || p.dim() != disc.dim())
    throw std::invalid_argument("gradient_error_quadrature: dimension mismatch");
  return gradient_error_at(disc, diffuse(p, schedule, t), diffuse(p_hat, schedule, t), t, options);
}

namespace {

Estimate kl_estimate(const GaussianMixture& p, const ScoreFn& s_theta, const Discriminator* disc, double w,
                     const SdeSchedule& schedule, const KlOptions& options) {
  if (options.mc < 2) throw std::invalid_argument("kl: mc must be >= 2");
  if (disc && disc->dim() != p.dim()) throw std::invalid_argument("kl: discriminator dimension mismatch");
  const int n_nodes = options.time_nodes;
  const std::vector<double> ts = trapezoid_nodes(schedule, n_nodes);
  const double h = (schedule.horizon - schedule.t_min()) / (n_nodes - 1);
  const double mc = static_cast<double>(options.mc);

  // Task 0 is the terminal term, task j + 1 the time node j.
  std::vector<double> mean(static_cast<std::size_t>(n_nodes) + 1, 0.0), var(mean.size(), 0.0);
  DiffusedMixture diffused(p, schedule);
  parallel_for(mean.size(), [&](std::size_t task) {
    Rng rng = make_rng(options.seed, task);
    double s = 0.0, s2 = 0.0;
    if (task == 0) {
      const GaussianMixture pT = diffused.at(schedule.horizon);
      const Points xs = pT.sample(options.mc, rng);
      const double log_q_norm = -0.5 * p.dim() * std::log(2.0 * M_PI);
      for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        const Vector x = xs.row(i).transpose();
        const double v = pT.log_density(x) - (log_q_norm - 0.5 * x.squaredNorm());
        s += v;
        s2 += v * v;
      }
    } else {
      const double t = ts[task - 1];
      const GaussianMixture pt = diffused.at(t);
      const Points xs = pt.sample(options.mc, rng);
      Vector grad;
      for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        const Vector x = xs.row(i).transpose();
        Vector diff = pt.score(x) - s_theta(x, t);
        if (disc) {
          disc->value_and_gradient(x, t, grad);
          diff -= w * grad;
        }
        const double v = diff.squaredNorm();
        s += v;
        s2 += v * v;
      }
    }
    mean[task] = s / mc;
    var[task] = std::max(0.0, (s2 - mc * mean[task] * mean[task]) / (mc - 1.0));
  });

  Estimate out;
  out.value = mean[0];
  double se2 = var[0] / mc;
  for (int j = 0; j < n_nodes; ++j) {
    const double coef = 0.5 * trapezoid_weight(j, n_nodes, h) * schedule.g2(ts[static_cast<std::size_t>(j)]);
    out.value += coef * mean[static_cast<std::size_t>(j) + 1];
    se2 += coef * coef * var[static_cast<std::size_t>(j) + 1] / mc;
  }
  out.se = std::sqrt(se2);
  return out;
}

}  // namespace

Estimate kl_learned(const GaussianMixture& p, const ScoreFn& s_theta, const SdeSchedule& schedule,
                    const KlOptions& options) {
  return kl_estimate(p, s_theta, nullptr, 0.0, schedule, options);
}

Estimate kl_refined(const GaussianMixture& p, const ScoreFn& s_theta, const Discriminator& disc, double w,
                    const SdeSchedule& schedule, const KlOptions& options) {
  return kl_estimate(p, s_theta, w == 0.0 ? nullptr : &disc, w, schedule, options);
}

Points grid_points(const GridSpec& grid) {
  const auto dim = grid.box.lower.size();
  if (dim == 0 || grid.box.upper.size() != dim) throw std::invalid_argument("grid: malformed box");
  if (grid.resolution < 2) throw std::invalid_argument("grid: resolution must be >= 2");
  const auto n = static_cast<std::size_t>(grid.resolution);
  std::size_t total = 1;
  for (Eigen::Index k = 0; k < dim; ++k) total *= n;
  Points pts(static_cast<Eigen::Index>(total), dim);
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rem = i;
    for (Eigen::Index k = 0; k < dim; ++k) {
      const double frac = static_cast<double>(rem % n) / static_cast<double>(n - 1);
      pts(static_cast<Eigen::Index>(i), k) = grid.box.lower[k] + frac * (grid.box.upper[k] - grid.box.lower[k]);
      rem /= n;
    }
  }
  return pts;
}

std::vector<GradientFieldSlice> gradient_field_mse(const Discriminator& disc, const GaussianMixture& p,
                                                   const GaussianMixture& p_hat, const SdeSchedule& schedule,
                                                   const GridSpec& grid, std::span<const double> t_set) {
  if (p.dim() != p_hat.dim() || p.dim() != disc.dim() || grid.box.lower.size() != p.dim())
    throw std::invalid_argument("gradient_field_mse: dimension mismatch");
  const Points pts = grid_points(grid);
  const auto total = static_cast<std::size_t>(pts.rows());
  std::vector<GradientFieldSlice> out;
  for (double t : t_set) {
    const GaussianMixture pt = diffuse(p, schedule, t);
    const GaussianMixture pht = diffuse(p_hat, schedule, t);
    GradientFieldSlice slice;
    slice.t = t;
    slice.error.assign(total, 0.0);
    std::vector<double> weight(total, 0.0);
    const std::size_t n_blocks = (total + kGridBlock - 1) / kGridBlock;
    parallel_for(n_blocks, [&](std::size_t b) {
      Vector sp, sq, gd;
      for (std::size_t i = b * kGridBlock; i < std::min(total, (b + 1) * kGridBlock); ++i) {
        const Vector x = pts.row(static_cast<Eigen::Index>(i)).transpose();
        weight[i] = std::exp(pt.log_density_and_score(x, sp));
        pht.log_density_and_score(x, sq);
        disc.value_and_gradient(x, t, gd);
        slice.error[i] = (sp - sq - gd).squaredNorm();
      }
    });
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
      num += weight[i] * slice.error[i];
      den += weight[i];
    }
    slice.weighted_mean = den > 0.0 ? num / den : 0.0;
    out.push_back(std::move(slice));
  }
  return out;
}

double weighted_gradient_field_mse(const std::vector<GradientFieldSlice>& slices) {
  if (slices.empty()) return 0.0;
  double s = 0.0;
  for (const auto& sl : slices) s += sl.weighted_mean;
  return s / static_cast<double>(slices.size());
}

}  // namespace dgl
