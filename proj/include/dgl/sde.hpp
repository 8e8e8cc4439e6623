#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "dgl/distributions.hpp"
#include "dgl/types.hpp"
#include "json.hpp"

namespace dgl {

enum class SdeKind { vp, subvp };

std::string to_string(SdeKind kind);
SdeKind sde_kind_from_string(const std::string& s);

/// Linear-beta VP / subVP schedule on [0, T].
///
/// beta(t) = beta_min + t (beta_max - beta_min) / T, drift f(x,t) = -beta(t) x / 2,
/// g(t)^2 = beta(t) for VP and beta(t) (1 - exp(-2 B(t))) for subVP, where
/// B(t) is the integral of beta over [0, t].
struct SdeSchedule {
  SdeKind kind = SdeKind::subvp;
  double beta_min = 0.1;
  double beta_max = 20.0;
  double horizon = 1.0;
  double t_min_factor = 1e-3;

  void validate() const;

  double beta(double t) const;
  double integrated_beta(double t) const;
  double g2(double t) const;
  double t_min() const { return t_min_factor * horizon; }
};

struct PerturbationKernel {
  double mean_scale = 1.0;  // m(t)
  double std = 0.0;         // sigma(t)

  double variance() const { return std * std; }
};

PerturbationKernel kernel_at(const SdeSchedule& schedule, double t);

// -(xt - m x0) / sigma^2; throws SingularKernelError when sigma == 0.
Vector kernel_score(const PerturbationKernel& kernel, const Vector& x0, const Vector& xt);

// Closed-form marginal p_t of a Gaussian mixture pushed through the linear SDE.
GaussianMixture diffuse(const GaussianMixture& gmm, const SdeSchedule& schedule, double t);

// One-shot exact draw of x_t given x_0.
Vector forward_sample_path(const Vector& x0, const SdeSchedule& schedule, double t, Rng& rng);

/// diffuse() memoized per thread for the few most recent times; copies share the cache key.
class DiffusedMixture {
 public:
  DiffusedMixture(GaussianMixture base, SdeSchedule schedule);

  const GaussianMixture& base() const noexcept { return *base_; }
  const SdeSchedule& schedule() const noexcept { return schedule_; }
  // Reference stays valid until this thread queries more distinct (mixture, t) pairs than the cache holds.
  const GaussianMixture& at(double t) const;

 private:
  std::shared_ptr<const GaussianMixture> base_;
  SdeSchedule schedule_;
  std::uint64_t id_;
};

using ScoreFn = std::function<Vector(const Vector& x, double t)>;

// Exact diffused score of a mixture, t -> grad log p_t.
ScoreFn mixture_score_fn(const GaussianMixture& gmm, const SdeSchedule& schedule);

struct ReverseSamplerOptions {
  std::size_t n_steps = 500;
  std::size_t n_samples = 1000;
};

/// Euler-Maruyama on the reverse-time SDE from x_T ~ N(0, I) down to t_min on
/// a uniform grid. Paths are grouped in fixed blocks, each with its own RNG
/// substream derived from `seed`, so output does not depend on thread count.
Points reverse_sample(const ScoreFn& score, const SdeSchedule& schedule,
                      const ReverseSamplerOptions& options, int dim, std::uint64_t seed);

nlohmann::json schedule_to_json(const SdeSchedule& s);
SdeSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace dgl
