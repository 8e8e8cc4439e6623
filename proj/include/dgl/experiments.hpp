#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgl/discriminator.hpp"
#include "dgl/metrics.hpp"
#include "dgl/objectives.hpp"
#include "dgl/sde.hpp"
#include "dgl/trainer.hpp"

namespace dgl {

// s_theta + w grad d; w == 0 returns s_theta itself.
ScoreFn guided_score_fn(const ScoreFn& s_theta, const Discriminator& disc, double w);

/// Reverse sampling with the guided score. With w == 0 the output is bitwise
/// equal to reverse_sample(s_theta, ...) at the same seed.
Points guided_generate(const ScoreFn& s_theta, const Discriminator& disc, double w, const SdeSchedule& schedule,
                       const ReverseSamplerOptions& options, int dim, std::uint64_t seed);

struct Theorem1Options {
  Box region;
  double t = 0.0;               // time at which CE gap and gradient error are measured
  int quadrature_points = 0;    // per axis; 0 resolves the largest omega with 30 nodes per period
  int feasibility_grid = 401;
  Vector direction;
  KlOptions kl;
};

struct Theorem1Row {
  double epsilon = 0.0;
  double omega = 0.0;
  bool feasible = false;
  double ce_gap = 0.0;
  double gradient_error = 0.0;
  double kl_refined = 0.0;
  double kl_refined_se = 0.0;
  double kl_learned = 0.0;
  double kl_learned_se = 0.0;
  std::string error;
};

/// For each (epsilon, omega): builds the oscillatory discriminator, then the
/// fixed-t CE gap to d*, the fixed-t gradient error and kl_refined at w = 1
/// with s_theta = diffused P_hat score. Infeasible epsilon rows are flagged.
std::vector<Theorem1Row> theorem1_demo(const GaussianMixture& p, const GaussianMixture& p_hat,
                                       const SdeSchedule& schedule, const std::vector<double>& eps_list,
                                       const std::vector<double>& omega_list, const Theorem1Options& options);

struct SampleMetricsOptions {
  std::size_t n_samples = 1000;
  std::size_t sampler_steps = 500;
  int k = 3;
  KlOptions kl;
  std::uint64_t seed = 0;
};

struct WSweepRow {
  double w = 0.0;
  double kl = 0.0;
  double kl_se = 0.0;
  double energy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::string error;
};

/// Per w: guided samples against a fixed reference draw from P (energy
/// distance, k-NN precision/recall) and kl_refined at that w.
std::vector<WSweepRow> w_sweep(const GaussianMixture& p, const ScoreFn& s_theta, const Discriminator& disc,
                               const std::vector<double>& w_list, const SdeSchedule& schedule,
                               const SampleMetricsOptions& options);

struct GammaSweepRow {
  std::string objective;  // "ce" or "combined"
  double gamma = 0.0;
  std::uint64_t seed = 0;
  double final_ce = 0.0;
  double final_mse = 0.0;
  double grad_field_mse = 0.0;
  double kl = 0.0;
  double kl_se = 0.0;
  double energy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::string error;
};

struct GammaSweepOptions {
  std::vector<double> gammas;
  bool include_ce_only = true;
  std::vector<std::uint64_t> seeds{0};
  double w = 1.0;
  MlpArchitecture arch;
  GridSpec grid;
  std::vector<double> t_set;
  SampleMetricsOptions metrics;
  bool with_samples = true;  // guided sampling metrics (energy, precision/recall)
};

/// Per (gamma, seed): trains MSE + gamma CE (plus CE-only rows) and evaluates
/// the result. Rows are independent and seeded by derive_seed(seed, row).
std::vector<GammaSweepRow> gamma_sweep(const GaussianMixture& p, const GaussianMixture& p_hat, const TrainConfig& base,
                                       const SdeSchedule& schedule, const GammaSweepOptions& options);

}  // namespace dgl
