#include "dgl/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include "json.hpp"
#include <numbers>
#include <stdexcept>
#include <string>

namespace dgl {
namespace {

std::string dim_message(int expected, Eigen::Index got) {
  return "dimension mismatch: expected " + std::to_string(expected) + ", got " + std::to_string(got);
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
  dim_ = static_cast<int>(components_.front().mean.size());
  if (dim_ <= 0) throw std::invalid_argument("mixture dimension must be positive");

  double total = 0.0;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    const std::string tag = "component " + std::to_string(i) + ": ";
    if (!(c.weight > 0.0)) throw std::invalid_argument(tag + "weight must be > 0");
    if (c.mean.size() != dim_) throw std::invalid_argument(tag + dim_message(dim_, c.mean.size()));
    if (c.covariance.rows() != dim_ || c.covariance.cols() != dim_)
      throw std::invalid_argument(tag + "covariance must be dim x dim");
    if (!c.mean.allFinite() || !c.covariance.allFinite())
      throw std::invalid_argument(tag + "non-finite mean or covariance");
    const double scale = std::max(1.0, c.covariance.cwiseAbs().maxCoeff());
    if ((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw std::invalid_argument(tag + "covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c.covariance, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < kMinEigenvalue)
      throw std::invalid_argument(tag + "covariance minimum eigenvalue below 1e-9");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > kWeightTolerance)
    throw std::invalid_argument("mixture weights must sum to 1 (got " + std::to_string(total) + ")");
  build_cache();
}

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components, Trusted)
    : components_(std::move(components)) {
  dim_ = static_cast<int>(components_.front().mean.size());
  build_cache();
}

GaussianMixture GaussianMixture::standard_normal(int dim) {
  return gaussian(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

GaussianMixture GaussianMixture::gaussian(const Vector& mean, const Matrix& covariance) {
  return GaussianMixture({GaussianComponent{1.0, mean, covariance}});
}

void GaussianMixture::build_cache() {
  cache_.clear();
  cache_.reserve(components_.size());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (const auto& c : components_) {
    Eigen::LLT<Matrix> llt(c.covariance);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance is not positive definite");
    Cache entry;
    entry.lower = llt.matrixL();
    entry.precision = llt.solve(Matrix::Identity(dim_, dim_));
    entry.precision = 0.5 * (entry.precision + entry.precision.transpose()).eval();
    const double log_det = 2.0 * entry.lower.diagonal().array().log().sum();
    entry.log_norm = std::log(c.weight) - 0.5 * log_det - dim_ * half_log_2pi;
    cache_.push_back(std::move(entry));
  }
}

void GaussianMixture::check_dim(const Vector& x) const {
  if (x.size() != dim_) throw std::invalid_argument(dim_message(dim_, x.size()));
}

double GaussianMixture::log_density(const Vector& x) const {
  check_dim(x);
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(components_.size());
  Vector diff(dim_);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    diff = x - components_[i].mean;
    const double quad = diff.dot(cache_[i].precision * diff);
    terms[i] = cache_[i].log_norm - 0.5 * quad;
    max_term = std::max(max_term, terms[i]);
  }
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - max_term);
  return max_term + std::log(sum);
}

double GaussianMixture::log_density_and_score(const Vector& x, Vector& score) const {
  check_dim(x);
  const std::size_t k = components_.size();
  std::vector<double> terms(k);
  std::vector<Vector> pulls(k);
  double max_term = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    // pull_i = Sigma_i^{-1} (mu_i - x)
    pulls[i] = cache_[i].precision * (components_[i].mean - x);
    const double quad = (components_[i].mean - x).dot(pulls[i]);
    terms[i] = cache_[i].log_norm - 0.5 * quad;
    max_term = std::max(max_term, terms[i]);
  }
  double sum = 0.0;
  for (auto& t : terms) {
    t = std::exp(t - max_term);
    sum += t;
  }
  score = Vector::Zero(dim_);
  for (std::size_t i = 0; i < k; ++i) score.noalias() += (terms[i] / sum) * pulls[i];
  return max_term + std::log(sum);
}

Vector GaussianMixture::score(const Vector& x) const {
  Vector s;
  log_density_and_score(x, s);
  return s;
}

Points GaussianMixture::sample(std::size_t n, Rng& rng) const {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  std::vector<double> weights;
  weights.reserve(components_.size());
  for (const auto& c : components_) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  Points out(static_cast<Eigen::Index>(n), dim_);
  Vector z(dim_);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t c = pick(rng);
    for (int d = 0; d < dim_; ++d) z[d] = normal(rng);
    out.row(static_cast<Eigen::Index>(r)) = (components_[c].mean + cache_[c].lower * z).transpose();
  }
  return out;
}

Vector GaussianMixture::mean() const {
  Vector m = Vector::Zero(dim_);
  for (const auto& c : components_) m += c.weight * c.mean;
  return m;
}

Matrix GaussianMixture::covariance() const {
  const Vector m = mean();
  Matrix cov = Matrix::Zero(dim_, dim_);
  for (const auto& c : components_) {
    const Vector d = c.mean - m;
    cov += c.weight * (c.covariance + d * d.transpose());
  }
  return cov;
}

GaussianMixture diffuse_components(const GaussianMixture& gmm, double mean_scale, double noise_var) {
  std::vector<GaussianComponent> out;
  out.reserve(gmm.components_.size());
  for (const auto& c : gmm.components_) {
    Matrix cov = (mean_scale * mean_scale) * c.covariance;
    cov.diagonal().array() += noise_var;
    out.push_back(GaussianComponent{c.weight, mean_scale * c.mean, std::move(cov)});
  }
  return GaussianMixture(std::move(out), GaussianMixture::Trusted{});
}

RatioField::RatioField(GaussianMixture num, GaussianMixture den)
    : numerator(std::move(num)), denominator(std::move(den)) {
  if (numerator.dim() != denominator.dim())
    throw std::invalid_argument("ratio field: numerator and denominator dimensions differ");
}

double RatioField::log_ratio(const Vector& x) const {
  return numerator.log_density(x) - denominator.log_density(x);
}

Vector RatioField::ratio_gradient(const Vector& x) const {
  return numerator.score(x) - denominator.score(x);
}

GaussianMixture mixture_from_json(const nlohmann::json& j) {
  const int dim = j.at("dim").get<int>();
  if (dim <= 0) throw std::invalid_argument("mixture dim must be positive");
  std::vector<GaussianComponent> comps;
  for (const auto& cj : j.at("components")) {
    GaussianComponent c;
    c.weight = cj.at("weight").get<double>();
    const auto mean = cj.at("mean").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != dim) throw std::invalid_argument("component mean has wrong length");
    c.mean = Eigen::Map<const Vector>(mean.data(), dim);
    std::vector<double> cov;
    const auto& cov_j = cj.at("cov");
    if (cov_j.is_number()) {
      // scalar: isotropic
      c.covariance = cov_j.get<double>() * Matrix::Identity(dim, dim);
    } else {
      for (const auto& e : cov_j) {
        if (e.is_array()) {
          for (const auto& v : e) cov.push_back(v.get<double>());
        } else {
          cov.push_back(e.get<double>());
        }
      }
      if (static_cast<int>(cov.size()) != dim * dim)
        throw std::invalid_argument("component cov must have dim*dim entries (row-major)");
      c.covariance = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          cov.data(), dim, dim);
    }
    comps.push_back(std::move(c));
  }
  GaussianMixture gmm(std::move(comps));
  if (gmm.dim() != dim) throw std::invalid_argument("mixture dim does not match components");
  return gmm;
}

nlohmann::json mixture_to_json(const GaussianMixture& gmm) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : gmm.components()) {
    std::vector<double> cov;
    for (int r = 0; r < gmm.dim(); ++r)
      for (int col = 0; col < gmm.dim(); ++col) cov.push_back(c.covariance(r, col));
    comps.push_back({{"weight", c.weight},
                     {"mean", std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size())},
                     {"cov", cov}});
  }
  return {{"dim", gmm.dim()}, {"components", comps}};
}

}  // namespace dgl
