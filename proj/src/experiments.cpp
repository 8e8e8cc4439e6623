#include "dgl/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dgl/errors.hpp"
#include "dgl/parallel.hpp"

namespace dgl {

ScoreFn guided_score_fn(const ScoreFn& s_theta, const Discriminator& disc, double w) {
  if (w == 0.0) return s_theta;
  return [s_theta, &disc, w](const Vector& x, double t) {
    Vector grad;
    disc.value_and_gradient(x, t, grad);
    return Vector(s_theta(x, t) + w * grad);
  };
}

Points guided_generate(const ScoreFn& s_theta, const Discriminator& disc, double w, const SdeSchedule& schedule,
                       const ReverseSamplerOptions& options, int dim, std::uint64_t seed) {
  if (disc.dim() != dim) throw std::invalid_argument("guided_generate: discriminator dimension mismatch");
  return reverse_sample(guided_score_fn(s_theta, disc, w), schedule, options, dim, seed);
}

std::vector<Theorem1Row> theorem1_demo(const GaussianMixture& p, const GaussianMixture& p_hat,
                                       const SdeSchedule& schedule, const std::vector<double>& eps_list,
                                       const std::vector<double>& omega_list, const Theorem1Options& options) {
  if (eps_list.empty() || omega_list.empty()) throw std::invalid_argument("theorem1_demo: empty eps or omega list");
  const RatioField field(p, p_hat);
  const OptimalDiscriminator optimal(field, schedule);
  const ScoreFn s_theta = mixture_score_fn(p_hat, schedule);

  QuadratureOptions quad;
  quad.points_per_axis = options.quadrature_points;
  if (quad.points_per_axis == 0 && p.dim() == 1) {
    const double omega_max = *std::max_element(omega_list.begin(), omega_list.end());
    const double width = (options.region.upper - options.region.lower).maxCoeff() + 2.0;
    quad.points_per_axis =
        std::max(2001, static_cast<int>(std::ceil(30.0 * omega_max * width / (2.0 * std::numbers::pi))) + 1);
  }
  const double ce_opt = ce_loss_quadrature(optimal, p, p_hat, schedule, options.t, quad);
  const Estimate kl_base = kl_learned(p, s_theta, schedule, options.kl);

  std::vector<Theorem1Row> rows;
  for (double eps : eps_list)
    for (double omega : omega_list) {
      Theorem1Row row;
      row.epsilon = eps;
      row.omega = omega;
      row.kl_learned = kl_base.value;
      row.kl_learned_se = kl_base.se;
      rows.push_back(row);
    }

  parallel_for(rows.size(), [&](std::size_t r) {
    Theorem1Row& row = rows[r];
    try {
      OscillatoryOptions osc_opts;
      osc_opts.region = options.region;
      osc_opts.check_times = {options.t};
      osc_opts.grid_per_axis = options.feasibility_grid;
      osc_opts.direction = options.direction;
      const OscillatoryDiscriminator osc = build_oscillatory(field, schedule, row.epsilon, row.omega, osc_opts);
      row.feasible = true;
      row.ce_gap = ce_loss_quadrature(osc, p, p_hat, schedule, options.t, quad) - ce_opt;
      row.gradient_error = gradient_error_quadrature(osc, p, p_hat, schedule, options.t, quad);
      const Estimate kl = kl_refined(p, s_theta, osc, 1.0, schedule, options.kl);
      row.kl_refined = kl.value;
      row.kl_refined_se = kl.se;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  return rows;
}

namespace {

struct SampleMetrics {
  double energy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

SampleMetrics sample_metrics(const Points& reference, const Points& samples, int k) {
  SampleMetrics m;
  m.energy = energy_distance(samples, reference);
  const PrecisionRecall pr = knn_precision_recall(reference, samples, k);
  m.precision = pr.precision;
  m.recall = pr.recall;
  return m;
}

Points reference_draw(const GaussianMixture& p, const SampleMetricsOptions& o) {
  Rng rng = make_rng(o.seed, 1000);
  return p.sample(o.n_samples, rng);
}

}  // namespace

std::vector<WSweepRow> w_sweep(const GaussianMixture& p, const ScoreFn& s_theta, const Discriminator& disc,
                               const std::vector<double>& w_list, const SdeSchedule& schedule,
                               const SampleMetricsOptions& options) {
  if (w_list.empty()) throw std::invalid_argument("w_sweep: w_list must be nonempty");
  const Points reference = reference_draw(p, options);
  std::vector<WSweepRow> rows(w_list.size());
  parallel_for(rows.size(), [&](std::size_t r) {
    WSweepRow& row = rows[r];
    row.w = w_list[r];
    try {
      ReverseSamplerOptions ro;
      ro.n_samples = options.n_samples;
      ro.n_steps = options.sampler_steps;
      const Points samples = guided_generate(s_theta, disc, row.w, schedule, ro, p.dim(), derive_seed(options.seed, r));
      const SampleMetrics m = sample_metrics(reference, samples, options.k);
      row.energy = m.energy;
      row.precision = m.precision;
      row.recall = m.recall;
      KlOptions kl = options.kl;
      kl.seed = derive_seed(options.kl.seed, r);
      const Estimate e = kl_refined(p, s_theta, disc, row.w, schedule, kl);
      row.kl = e.value;
      row.kl_se = e.se;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  return rows;
}

std::vector<GammaSweepRow> gamma_sweep(const GaussianMixture& p, const GaussianMixture& p_hat, const TrainConfig& base,
                                       const SdeSchedule& schedule, const GammaSweepOptions& options) {
  if (options.gammas.empty() && !options.include_ce_only)
    throw std::invalid_argument("gamma_sweep: gammas must be nonempty");
  std::vector<GammaSweepRow> rows;
  for (std::uint64_t seed : options.seeds) {
    if (options.include_ce_only) {
      GammaSweepRow r;
      r.objective = "ce";
      r.seed = seed;
      rows.push_back(r);
    }
    for (double g : options.gammas) {
      GammaSweepRow r;
      r.objective = "combined";
      r.gamma = g;
      r.seed = seed;
      rows.push_back(r);
    }
  }
  const ScoreFn s_theta = mixture_score_fn(p_hat, schedule);
  const Points reference = options.with_samples ? reference_draw(p, options.metrics) : Points();

  parallel_for(rows.size(), [&](std::size_t r) {
    GammaSweepRow& row = rows[r];
    try {
      TrainConfig cfg = base;
      cfg.seed = row.seed;
      cfg.loss = row.objective == "ce" ? ce_only_loss(base.loss) : combined_loss(row.gamma, base.loss);
      const Datasets data = prepare_datasets(p, p_hat, cfg, schedule);
      MlpArchitecture arch = options.arch;
      arch.data_dim = p.dim();
      arch.horizon = schedule.horizon;
      MlpDiscriminator disc = MlpDiscriminator::initialized(arch, derive_seed(row.seed, 20));
      const TrainReport rep = train(disc, s_theta, data, cfg, schedule);
      row.final_ce = rep.ce.empty() ? 0.0 : rep.ce.back();
      row.final_mse = rep.mse.empty() ? 0.0 : rep.mse.back();
      if (!options.t_set.empty())
        row.grad_field_mse =
            weighted_gradient_field_mse(gradient_field_mse(disc, p, p_hat, schedule, options.grid, options.t_set));
      KlOptions kl = options.metrics.kl;
      kl.seed = derive_seed(options.metrics.kl.seed, r);
      const Estimate e = kl_refined(p, s_theta, disc, options.w, schedule, kl);
      row.kl = e.value;
      row.kl_se = e.se;
      if (options.with_samples) {
        ReverseSamplerOptions ro;
        ro.n_samples = options.metrics.n_samples;
        ro.n_steps = options.metrics.sampler_steps;
        const Points samples =
            guided_generate(s_theta, disc, options.w, schedule, ro, p.dim(), derive_seed(options.metrics.seed, r));
        const SampleMetrics m = sample_metrics(reference, samples, options.metrics.k);
        row.energy = m.energy;
        row.precision = m.precision;
        row.recall = m.recall;
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  return rows;
}

}  // namespace dgl
