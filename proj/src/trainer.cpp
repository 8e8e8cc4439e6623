#include "dgl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "dgl/errors.hpp"
#include "dgl/parallel.hpp"
#include "dgl/simd/kernels.hpp"

namespace dgl {

std::string to_string(FakeSource s) { return s == FakeSource::direct_gmm ? "direct_gmm" : "reverse_sde"; }

FakeSource fake_source_from_string(const std::string& s) {
  if (s == "direct_gmm") return FakeSource::direct_gmm;
  if (s == "reverse_sde") return FakeSource::reverse_sde;
  throw std::invalid_argument("fake_source must be 'direct_gmm' or 'reverse_sde', got '" + s + "'");
}

void TrainConfig::validate() const {
  if (n_real == 0 || n_fake == 0) throw std::invalid_argument("n_real and n_fake must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (batch_size > std::min(n_real, n_fake))
    throw std::invalid_argument("batch_size " + std::to_string(batch_size) + " exceeds min(n_real, n_fake) = " +
                                std::to_string(std::min(n_real, n_fake)));
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be > 0");
  if (early_stop.enabled && early_stop.window == 0) throw std::invalid_argument("early_stop.window must be > 0");
  if (fake_source == FakeSource::reverse_sde && sampler_steps == 0)
    throw std::invalid_argument("sampler_steps must be >= 1");
  loss.validate();
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"n_real", c.n_real},
          {"n_fake", c.n_fake},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"adam_betas", {c.beta1, c.beta2}},
          {"adam_epsilon", c.adam_epsilon},
          {"seed", c.seed},
          {"fake_source", to_string(c.fake_source)},
          {"sampler_steps", c.sampler_steps},
          {"early_stop", {{"enabled", c.early_stop.enabled}, {"window", c.early_stop.window},
                          {"rel_tol", c.early_stop.rel_tol}}},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_path", c.checkpoint_path},
          {"track_mse", c.track_mse}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.n_real = j.value("n_real", c.n_real);
  c.n_fake = j.value("n_fake", c.n_fake);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("adam_betas")) {
    const auto betas = j.at("adam_betas").get<std::vector<double>>();
    if (betas.size() != 2) throw std::invalid_argument("adam_betas must have two entries");
    c.beta1 = betas[0];
    c.beta2 = betas[1];
  }
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.seed = j.value("seed", c.seed);
  if (j.contains("fake_source")) c.fake_source = fake_source_from_string(j.at("fake_source").get<std::string>());
  c.sampler_steps = j.value("sampler_steps", c.sampler_steps);
  if (j.contains("early_stop")) {
    const auto& e = j.at("early_stop");
    c.early_stop.enabled = e.value("enabled", c.early_stop.enabled);
    c.early_stop.window = e.value("window", c.early_stop.window);
    c.early_stop.rel_tol = e.value("rel_tol", c.early_stop.rel_tol);
  }
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
  c.track_mse = j.value("track_mse", c.track_mse);
  return c;
}

LossConfig ce_only_loss(LossConfig base) {
  base.gamma_on = GammaOn::mse;
  base.gamma = 0.0;
  return base;
}

LossConfig combined_loss(double gamma, LossConfig base) {
  base.gamma_on = GammaOn::ce;
  base.gamma = gamma;
  return base;
}

Adam::Adam(std::size_t n, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("Adam::step: size mismatch");
  ++t_;
  b1_pow_ *= b1_;
  b2_pow_ *= b2_;
  const simd::AdamCoefficients c{lr_, b1_, b2_, eps_, 1.0 - b1_pow_, 1.0 - b2_pow_};
  simd::kernels().adam_update(params.data(), grad.data(), m_.data(), v_.data(), m_.size(), c);
}

Datasets prepare_datasets(const GaussianMixture& p, const GaussianMixture& p_hat, const TrainConfig& cfg,
                          const SdeSchedule& schedule) {
  if (p.dim() != p_hat.dim()) throw std::invalid_argument("prepare_datasets: P and P_hat dimensions differ");
  Datasets d;
  Rng real_rng = make_rng(cfg.seed, 1);
  d.real = p.sample(cfg.n_real, real_rng);
  if (cfg.fake_source == FakeSource::direct_gmm) {
    Rng fake_rng = make_rng(cfg.seed, 2);
    d.fake = p_hat.sample(cfg.n_fake, fake_rng);
  } else {
    ReverseSamplerOptions opts;
    opts.n_steps = cfg.sampler_steps;
    opts.n_samples = cfg.n_fake;
    d.fake = reverse_sample(mixture_score_fn(p_hat, schedule), schedule, opts, p.dim(), derive_seed(cfg.seed, 2));
  }
  return d;
}

nlohmann::json train_report_to_json(const TrainReport& r) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals) evals.push_back({{"step", e.step}, {"metrics", e.metrics}});
  return {{"steps_completed", r.steps_completed},
          {"early_stopped", r.early_stopped},
          {"wall_seconds", r.wall_seconds},
          {"final", {{"ce", r.ce.empty() ? 0.0 : r.ce.back()},
                     {"mse", r.mse.empty() ? 0.0 : r.mse.back()},
                     {"total", r.total.empty() ? 0.0 : r.total.back()}}},
          {"parameter_count", r.final_parameters.size()},
          {"evals", evals}};
}

namespace {

Points gather_rows(const Points& src, const std::vector<std::size_t>& idx) {
  Points out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

std::vector<std::size_t> draw_indices(std::size_t n, std::size_t range, Rng& rng) {
  std::uniform_int_distribution<std::size_t> u(0, range - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = u(rng);
  return idx;
}

double window_mean(const std::vector<double>& v, std::size_t end, std::size_t window) {
  double s = 0.0;
  for (std::size_t i = end - window; i < end; ++i) s += v[i];
  return s / static_cast<double>(window);
}

}  // namespace

TrainReport train(MlpDiscriminator& disc, const ScoreFn& s_theta, const Datasets& data, const TrainConfig& cfg,
                  const SdeSchedule& schedule, const Evaluator& evaluator, std::size_t eval_every) {
  cfg.validate();
  if (data.real.cols() != disc.dim() || data.fake.cols() != disc.dim())
    throw std::invalid_argument("train: dataset dimension does not match the discriminator");
  if (static_cast<std::size_t>(data.real.rows()) < cfg.batch_size ||
      static_cast<std::size_t>(data.fake.rows()) < cfg.batch_size)
    throw std::invalid_argument("train: datasets are smaller than the batch size");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  Adam adam(disc.parameters().size(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  Rng rng = make_rng(cfg.seed, 3);
  std::vector<double> grad;
  const bool ce_terms_only = !cfg.track_mse && cfg.loss.mse_weight() == 0.0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto real_idx = draw_indices(cfg.batch_size, static_cast<std::size_t>(data.real.rows()), rng);
    const auto fake_idx = draw_indices(cfg.batch_size, static_cast<std::size_t>(data.fake.rows()), rng);
    const auto t_real = sample_times(cfg.batch_size, schedule, rng);
    const auto t_fake = sample_times(cfg.batch_size, schedule, rng);
    const PerturbedBatch real = perturb(gather_rows(data.real, real_idx), t_real, schedule, rng);
    const PerturbedBatch fake = perturb(gather_rows(data.fake, fake_idx), t_fake, schedule, rng);

    LossTerms terms;
    try {
      terms = train_loss_gradient(disc, s_theta, real, fake, cfg.loss, schedule, grad, ce_terms_only);
    } catch (const DivergedLossError&) {
      terms.total = std::numeric_limits<double>::quiet_NaN();
    }
    const bool finite = std::isfinite(terms.total) &&
                        std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
    if (!finite) {
      if (!cfg.checkpoint_path.empty()) save_checkpoint(disc, cfg.checkpoint_path);
      throw DivergedLossError("training diverged at step " + std::to_string(step) +
                              "; discriminator holds the last good parameters");
    }
    adam.step(disc.parameters(), grad);
    report.ce.push_back(terms.ce);
    report.mse.push_back(terms.mse);
    report.total.push_back(terms.total);
    report.steps_completed = step + 1;

    if (cfg.checkpoint_every && !cfg.checkpoint_path.empty() && report.steps_completed % cfg.checkpoint_every == 0)
      save_checkpoint(disc, cfg.checkpoint_path);
    if (evaluator && eval_every && report.steps_completed % eval_every == 0)
      report.evals.push_back({report.steps_completed, evaluator(disc, report.steps_completed)});

    const std::size_t w = cfg.early_stop.window;
    if (cfg.early_stop.enabled && report.steps_completed >= 2 * w && report.steps_completed % w == 0) {
      const double cur = window_mean(report.ce, report.steps_completed, w);
      const double prev = window_mean(report.ce, report.steps_completed - w, w);
      if (std::abs(cur - prev) < cfg.early_stop.rel_tol * std::abs(prev)) {
        report.early_stopped = true;
        break;
      }
    }
  }
  report.final_parameters.assign(disc.parameters().begin(), disc.parameters().end());
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

double total_variation_1d(const GaussianMixture& p, const GaussianMixture& p_hat) {
  if (p.dim() != 1 || p_hat.dim() != 1) throw std::invalid_argument("total_variation_1d: mixtures must be 1D");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* m : {&p, &p_hat}) {
    for (const auto& c : m->components()) {
      const double s = std::sqrt(c.covariance(0, 0));
      lo = std::min(lo, c.mean[0] - 10.0 * s);
      hi = std::max(hi, c.mean[0] + 10.0 * s);
    }
  }
  const int n = 200001;
  const double h = (hi - lo) / (n - 1);
  double acc = 0.0;
  Vector x(1);
  for (int i = 0; i < n; ++i) {
    x[0] = lo + i * h;
    const double w = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
    acc += w * std::abs(std::exp(p.log_density(x)) - std::exp(p_hat.log_density(x)));
  }
  return 0.5 * acc * h;
}

OverfitResult overfit_harness(const GaussianMixture& p, const GaussianMixture& p_hat, std::size_t n,
                              double target_eps, const OverfitOptions& options) {
  if (p.dim() != 1 || p_hat.dim() != 1) throw std::invalid_argument("overfit_harness: P and P_hat must be 1D");
  if (n == 0) throw std::invalid_argument("overfit_harness: N must be positive");
  if (!(target_eps > 0.0)) throw std::invalid_argument("overfit_harness: target_eps must be > 0");
  OverfitResult res;
  res.n = n;
  res.tv = total_variation_1d(p, p_hat);
  if (!(res.tv < 1.0)) throw std::invalid_argument("overfit_harness: TV(P, P_hat) must be < 1");
  res.width = std::max(64, static_cast<int>(std::ceil(4.0 * std::sqrt(static_cast<double>(n)))));

  MlpArchitecture arch;
  arch.data_dim = 1;
  arch.hidden_widths.assign(options.depth, res.width);
  MlpDiscriminator disc = MlpDiscriminator::initialized(arch, derive_seed(options.seed, 10));

  Rng rng_real = make_rng(options.seed, 11);
  Rng rng_fake = make_rng(options.seed, 12);
  Points x(static_cast<Eigen::Index>(2 * n), 1);
  x.topRows(static_cast<Eigen::Index>(n)) = p.sample(n, rng_real);
  x.bottomRows(static_cast<Eigen::Index>(n)) = p_hat.sample(n, rng_fake);
  const std::vector<double> t(2 * n, 0.0);
  std::vector<double> per_sample(2 * n, 0.0);
  const double inv = 1.0 / static_cast<double>(2 * n);

  ValueLoss ce;
  ce.fn = [&](const Eigen::VectorXd& v, Eigen::VectorXd& dv) {
    double total = 0.0;
    for (std::size_t i = 0; i < 2 * n; ++i) {
      const double vi = v[static_cast<Eigen::Index>(i)];
      if (!std::isfinite(vi)) throw DivergedLossError("overfit_harness: non-finite discriminator output");
      const double z = i < n ? -vi : vi;  // loss = softplus(z)
      per_sample[i] = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      total += per_sample[i] * inv;
      dv[static_cast<Eigen::Index>(i)] = (i < n ? -sig : sig) * inv;
    }
    return total;
  };

  Adam adam(disc.parameters().size(), options.learning_rate);
  res.achieved_eps = std::numeric_limits<double>::infinity();
  for (std::size_t step = 0; step <= options.max_steps; ++step) {
    const LossGradient lg = value_loss_param_gradient(disc, x, t, ce);
    res.achieved_eps = *std::max_element(per_sample.begin(), per_sample.end());
    res.steps = step;
    if (res.achieved_eps <= target_eps || step == options.max_steps) break;
    adam.step(disc.parameters(), lg.gradient);
  }
  res.reached = res.achieved_eps <= target_eps;

  SdeSchedule schedule;
  QuadratureOptions q;
  q.points_per_axis = options.quadrature_points;
  res.mse_estimate = gradient_error_quadrature(disc, p, p_hat, schedule, 0.0, q);
  res.optimal_baseline = gradient_error_quadrature(ZeroDiscriminator(1), p, p_hat, schedule, 0.0, q);
  return res;
}

std::vector<SizeSweepRow> size_sweep(const GaussianMixture& p, const GaussianMixture& p_hat, const TrainConfig& base,
                                     const SdeSchedule& schedule, const SizeSweepOptions& options) {
  if (options.sizes.empty()) throw std::invalid_argument("size_sweep: sizes must be nonempty");
  struct Job {
    std::size_t size;
    std::string objective;
    double gamma;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t size : options.sizes)
    for (std::uint64_t seed : options.seeds) {
      jobs.push_back({size, "ce", 0.0, seed});
      for (double g : options.gammas) jobs.push_back({size, "combined", g, seed});
    }

  const ScoreFn s_theta = mixture_score_fn(p_hat, schedule);
  std::vector<SizeSweepRow> rows(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t r) {
    const Job& job = jobs[r];
    SizeSweepRow& row = rows[r];
    row.size = job.size;
    row.objective = job.objective;
    row.gamma = job.gamma;
    row.seed = job.seed;
    try {
      TrainConfig cfg = base;
      cfg.n_real = cfg.n_fake = job.size;
      cfg.batch_size = std::min(cfg.batch_size, job.size);
      cfg.seed = job.seed;
      cfg.loss = job.objective == "ce" ? ce_only_loss(base.loss) : combined_loss(job.gamma, base.loss);
      cfg.track_mse = false;  // only kl_refined and the gradient field are reported
      const Datasets data = prepare_datasets(p, p_hat, cfg, schedule);
      MlpArchitecture arch = options.arch;
      arch.data_dim = p.dim();
      arch.horizon = schedule.horizon;
      MlpDiscriminator disc = MlpDiscriminator::initialized(arch, derive_seed(job.seed, 20));
      train(disc, s_theta, data, cfg, schedule);
      KlOptions kl = options.kl;
      kl.seed = derive_seed(job.seed, 21);
      const Estimate e = kl_refined(p, s_theta, disc, options.w, schedule, kl);
      row.kl_refined = e.value;
      row.kl_se = e.se;
      if (!options.t_set.empty())
        row.grad_field_mse =
            weighted_gradient_field_mse(gradient_field_mse(disc, p, p_hat, schedule, options.grid, options.t_set));
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
  });
  return rows;
}

}  // namespace dgl
