#pragma once

#include "json.hpp"
#include <span>
#include <vector>

#include "dgl/types.hpp"

namespace dgl {

struct GaussianComponent {
  double weight = 1.0;
  Vector mean;
  Matrix covariance;
};

/// Finite Gaussian mixture with exact log-density, score and sampling.
///
/// Construction validates the mixture (weights positive and summing to one
/// within 1e-12, covariances symmetric with minimum eigenvalue >= 1e-9,
/// consistent dimension) and caches per-component precision matrices,
/// Cholesky factors and log-normalisers. All queries are const and
/// thread-safe.
class GaussianMixture {
 public:
  static constexpr double kMinEigenvalue = 1e-9;
  static constexpr double kWeightTolerance = 1e-12;

  explicit GaussianMixture(std::vector<GaussianComponent> components);

  static GaussianMixture standard_normal(int dim);
  static GaussianMixture gaussian(const Vector& mean, const Matrix& covariance);

  int dim() const noexcept { return dim_; }
  std::span<const GaussianComponent> components() const noexcept { return components_; }

  double log_density(const Vector& x) const;
  Vector score(const Vector& x) const;
  // Both at once; `score` is resized to dim().
  double log_density_and_score(const Vector& x, Vector& score) const;

  Points sample(std::size_t n, Rng& rng) const;

  // Mixture mean and covariance (law of total covariance).
  Vector mean() const;
  Matrix covariance() const;

 private:
  struct Cache {
    Matrix precision;
    Matrix lower;  // Cholesky factor of the covariance
    double log_norm = 0.0;
  };

  // Skips validation; used for mixtures derived from validated ones.
  struct Trusted {};
  GaussianMixture(std::vector<GaussianComponent> components, Trusted);
  void build_cache();
  void check_dim(const Vector& x) const;

  friend GaussianMixture diffuse_components(const GaussianMixture&, double, double);

  int dim_ = 0;
  std::vector<GaussianComponent> components_;
  std::vector<Cache> cache_;
};

// Internal helper for the sde module: (w, scale*mu, scale^2*Sigma + var*I).
GaussianMixture diffuse_components(const GaussianMixture& gmm, double mean_scale, double noise_var);

/// Pair (p, p_hat) whose log ratio is the optimal discriminator output.
struct RatioField {
  GaussianMixture numerator;
  GaussianMixture denominator;

  RatioField(GaussianMixture num, GaussianMixture den);

  int dim() const noexcept { return numerator.dim(); }
  double log_ratio(const Vector& x) const;
  Vector ratio_gradient(const Vector& x) const;
};

// {dim, components:[{weight, mean, cov}]}; cov is row-major (flat or nested).
GaussianMixture mixture_from_json(const nlohmann::json& j);
nlohmann::json mixture_to_json(const GaussianMixture& gmm);

}  // namespace dgl
