#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dgl/discriminator.hpp"
#include "dgl/distributions.hpp"
#include "dgl/sde.hpp"
#include "dgl/types.hpp"
#include "json.hpp"

namespace dgl {

enum class LambdaKind { g_squared, uniform };
// Which term of the combined loss carries gamma: `ce` gives MSE + gamma CE, `mse` gives CE + gamma MSE.
enum class GammaOn { ce, mse };

std::string to_string(LambdaKind k);
LambdaKind lambda_kind_from_string(const std::string& s);
std::string to_string(GammaOn g);
GammaOn gamma_on_from_string(const std::string& s);

struct LossConfig {
  LambdaKind lambda_kind = LambdaKind::g_squared;
  double gamma = 1.0;
  GammaOn gamma_on = GammaOn::ce;

  void validate() const;
  double lambda(const SdeSchedule& schedule, double t) const;
  double ce_weight() const { return gamma_on == GammaOn::ce ? gamma : 1.0; }
  double mse_weight() const { return gamma_on == GammaOn::mse ? gamma : 1.0; }
};

nlohmann::json loss_config_to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

/// (x0, t, xt) triples; row i of x0/xt pairs with t[i].
struct PerturbedBatch {
  Points x0;
  std::vector<double> t;
  Points xt;

  std::size_t size() const { return t.size(); }
};

// Uniform on [t_min, T].
std::vector<double> sample_times(std::size_t n, const SdeSchedule& schedule, Rng& rng);

// xt_i = m(t_i) x0_i + sigma(t_i) xi_i.
PerturbedBatch perturb(const Points& x0, std::span<const double> t, const SdeSchedule& schedule, Rng& rng);

/// (1/b) sum lambda(t_i) [-log sigmoid(d(xt_i)) - log(1 - sigmoid(d(xhat_t_i)))].
/// Throws DivergedLossError when d is not finite.
double ce_loss(const Discriminator& disc, const PerturbedBatch& real, const PerturbedBatch& fake,
               const LossConfig& cfg, const SdeSchedule& schedule);

/// (1/b) sum lambda(t_i) |kernel_score(x0_i, xt_i) - s_theta(xt_i, t_i) - grad d(xt_i, t_i)|^2.
double mse_d_loss(const Discriminator& disc, const ScoreFn& s_theta, const PerturbedBatch& real,
                  const LossConfig& cfg, const SdeSchedule& schedule);

struct LossTerms {
  double ce = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

// total = mse_weight * mse + ce_weight * ce.
LossTerms train_loss(const Discriminator& disc, const ScoreFn& s_theta, const PerturbedBatch& real,
                     const PerturbedBatch& fake, const LossConfig& cfg, const SdeSchedule& schedule);

// Same value as train_loss plus its exact parameter gradient. The MSE term is
// always reported; its second-order path is skipped when its weight is zero.
// With `terms_only_ce` the MSE term is not evaluated at all (reported as 0).
LossTerms train_loss_gradient(const MlpDiscriminator& disc, const ScoreFn& s_theta, const PerturbedBatch& real,
                              const PerturbedBatch& fake, const LossConfig& cfg, const SdeSchedule& schedule,
                              std::vector<double>& gradient, bool terms_only_ce = false);

/// Monte-Carlo expectation of the gradient-matching loss over t ~ U[t_min, T]
/// (stratified), x0 ~ P, xt ~ kernel.
Estimate mse_d_loss_expectation(const Discriminator& disc, const ScoreFn& s_theta, const GaussianMixture& p,
                                const LossConfig& cfg, const SdeSchedule& schedule, std::size_t n_draws,
                                std::uint64_t seed);

struct QuadratureOptions {
  int time_nodes = 64;       // trapezoid nodes on [t_min, T]
  int points_per_axis = 0;   // 0 picks 2001 in 1D, 201 in 2D
  double coverage_sigmas = 7.0;
};

/// E_{t ~ U[t_min, T]} lambda(t) E_{P_t} |grad log(p_t / p_hat_t) - grad d|^2 (trapezoid in t),
/// with the x-expectation on a tensor grid spanning every component of P_t to
/// `coverage_sigmas` standard deviations. Throws InsufficientCoverageError if
/// the grid holds less than 1 - 1e-6 of the P_t mass at any node.
double sm_d_loss_quadrature(const Discriminator& disc, const GaussianMixture& p, const GaussianMixture& p_hat,
                            const LossConfig& cfg, const SdeSchedule& schedule,
                            const QuadratureOptions& options = {});

// Fixed-time, unweighted CE: int p_t(-log sigmoid(d)) + p_hat_t(-log(1 - sigmoid(d))) dx.
double ce_loss_quadrature(const Discriminator& disc, const GaussianMixture& p, const GaussianMixture& p_hat,
                          const SdeSchedule& schedule, double t, const QuadratureOptions& options = {});

// Fixed-time, unweighted: int p_t |grad log(p_t / p_hat_t) - grad d|^2 dx.
double gradient_error_quadrature(const Discriminator& disc, const GaussianMixture& p, const GaussianMixture& p_hat,
                                 const SdeSchedule& schedule, double t, const QuadratureOptions& options = {});

struct KlOptions {
  std::size_t mc = 2000;   // draws per time node and for the terminal term
  int time_nodes = 101;    // trapezoid nodes on [t_min, T]
  std::uint64_t seed = 0;
};

/// KL(P_T || N(0, I)) + 1/2 int g^2 E_{P_t} |grad log p_t - s_theta|^2 dt.
/// Draws are independent per time node, so the SE combines per-node variances.
Estimate kl_learned(const GaussianMixture& p, const ScoreFn& s_theta, const SdeSchedule& schedule,
                    const KlOptions& options);

// kl_learned with s_theta + w grad d; w == 0 reproduces kl_learned bit for bit.
Estimate kl_refined(const GaussianMixture& p, const ScoreFn& s_theta, const Discriminator& disc, double w,
                    const SdeSchedule& schedule, const KlOptions& options);

struct GridSpec {
  Box box;
  int resolution = 64;  // nodes per axis, first axis fastest
};

struct GradientFieldSlice {
  double t = 0.0;
  std::vector<double> error;  // |ratio_gradient - grad d|^2 at each node
  double weighted_mean = 0.0; // P_t-weighted mean over the grid
};

// Grid nodes, one per row, in the same order as GradientFieldSlice::error.
Points grid_points(const GridSpec& grid);

std::vector<GradientFieldSlice> gradient_field_mse(const Discriminator& disc, const GaussianMixture& p,
                                                   const GaussianMixture& p_hat, const SdeSchedule& schedule,
                                                   const GridSpec& grid, std::span<const double> t_set);

// Mean over t_set of the slices' P_t-weighted means.
double weighted_gradient_field_mse(const std::vector<GradientFieldSlice>& slices);

}  // namespace dgl
