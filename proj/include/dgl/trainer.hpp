#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dgl/discriminator.hpp"
#include "dgl/objectives.hpp"
#include "dgl/sde.hpp"
#include "json.hpp"

namespace dgl {

enum class FakeSource { direct_gmm, reverse_sde };

std::string to_string(FakeSource s);
FakeSource fake_source_from_string(const std::string& s);

struct EarlyStop {
  bool enabled = true;
  std::size_t window = 200;  // steps per averaging window
  double rel_tol = 1e-4;     // stop when consecutive CE window means differ by less than this, relatively
};

struct TrainConfig {
  std::size_t n_real = 20000;
  std::size_t n_fake = 20000;
  std::size_t batch_size = 256;
  std::size_t steps = 5000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  LossConfig loss;
  FakeSource fake_source = FakeSource::direct_gmm;
  std::size_t sampler_steps = 500;  // reverse_sde only
  EarlyStop early_stop;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  bool track_mse = true;  // false skips the MSE term entirely when its weight is zero (reported as 0)

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Loss choices used by the comparison experiments.
LossConfig ce_only_loss(LossConfig base = {});   // CE + 0 * MSE
LossConfig combined_loss(double gamma, LossConfig base = {});  // MSE + gamma * CE

/// Bias-corrected Adam over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void step(std::span<double> params, std::span<const double> grad);
  std::size_t iterations() const noexcept { return t_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  double b1_pow_ = 1.0, b2_pow_ = 1.0;
  std::vector<double> m_, v_;
};

struct Datasets {
  Points real;
  Points fake;
};

// Real from P; fake from P_hat directly or by reverse sampling with the P_hat score.
Datasets prepare_datasets(const GaussianMixture& p, const GaussianMixture& p_hat, const TrainConfig& cfg,
                          const SdeSchedule& schedule);

struct EvalRecord {
  std::size_t step = 0;
  nlohmann::json metrics;
};

using Evaluator = std::function<nlohmann::json(const MlpDiscriminator&, std::size_t step)>;

struct TrainReport {
  std::vector<double> ce;     // one entry per completed step
  std::vector<double> mse;
  std::vector<double> total;
  std::size_t steps_completed = 0;
  bool early_stopped = false;
  std::vector<double> final_parameters;
  double wall_seconds = 0.0;
  std::vector<EvalRecord> evals;
};

nlohmann::json train_report_to_json(const TrainReport& r);

/// Mini-batch loop: per step draw batch indices and times for real and fake
/// sets, perturb, evaluate the combined loss and take one Adam step.
///
/// On a non-finite loss or gradient, `disc` is left at the last good
/// parameters (also written to cfg.checkpoint_path if set) and
/// DivergedLossError is thrown naming the step.
TrainReport train(MlpDiscriminator& disc, const ScoreFn& s_theta, const Datasets& data, const TrainConfig& cfg,
                  const SdeSchedule& schedule, const Evaluator& evaluator = {}, std::size_t eval_every = 0);

struct OverfitOptions {
  std::size_t max_steps = 6000;
  double learning_rate = 3e-3;
  std::size_t depth = 2;
  std::uint64_t seed = 0;
  int quadrature_points = 8001;
};

struct OverfitResult {
  std::size_t n = 0;
  int width = 0;
  double tv = 0.0;
  double achieved_eps = 0.0;   // max per-sample logistic loss on the training set
  bool reached = false;        // achieved_eps <= target
  std::size_t steps = 0;
  double mse_estimate = 0.0;   // int p (grad d* - grad d)^2 at t = 0
  double optimal_baseline = 0.0;  // same functional for d = 0, i.e. int p |grad d*|^2
};

// Quadrature TV between two 1D mixtures.
double total_variation_1d(const GaussianMixture& p, const GaussianMixture& p_hat);

/// Fits a width max(64, 4 sqrt(N)) MLP by full-batch CE at t = 0 on N draws
/// from each of P and P_hat (1D) until every training sample's logistic loss is
/// below target_eps or the step cap is hit.
OverfitResult overfit_harness(const GaussianMixture& p, const GaussianMixture& p_hat, std::size_t n,
                              double target_eps, const OverfitOptions& options = {});

struct SizeSweepRow {
  std::size_t size = 0;
  std::string objective;  // "ce" or "combined"
  double gamma = 0.0;
  std::uint64_t seed = 0;
  double kl_refined = 0.0;
  double kl_se = 0.0;
  double grad_field_mse = 0.0;
  std::string error;  // non-empty when the row failed
};

struct SizeSweepOptions {
  std::vector<std::size_t> sizes;
  std::vector<double> gammas{1.0};  // combined-objective rows, one per gamma
  std::vector<std::uint64_t> seeds{0};
  double w = 1.0;
  KlOptions kl;
  GridSpec grid;
  std::vector<double> t_set;
  MlpArchitecture arch;
};

/// Per (size, objective, gamma, seed): train on size real/fake samples and
/// score kl_refined at w and the gradient-field MSE. Failed rows keep their
/// error message and the sweep continues.
std::vector<SizeSweepRow> size_sweep(const GaussianMixture& p, const GaussianMixture& p_hat, const TrainConfig& base,
                                     const SdeSchedule& schedule, const SizeSweepOptions& options);

}  // namespace dgl
