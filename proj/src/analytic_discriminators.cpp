#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dgl/discriminator.hpp"
#include "dgl/errors.hpp"

namespace dgl {

OptimalDiscriminator::OptimalDiscriminator(RatioField field, SdeSchedule schedule)
    : field_(std::move(field)),
      schedule_(schedule),
      numerator_(field_.numerator, schedule),
      denominator_(field_.denominator, schedule) {}

RatioField OptimalDiscriminator::field_at(double t) const {
  GaussianMixture num = numerator_.at(t);
  return RatioField(std::move(num), denominator_.at(t));
}

double OptimalDiscriminator::value(const Vector& x, double t) const {
  // Each cached reference is used before the next cache query.
  const double log_num = numerator_.at(t).log_density(x);
  return log_num - denominator_.at(t).log_density(x);
}

double OptimalDiscriminator::value_and_gradient(const Vector& x, double t, Vector& grad) const {
  Vector s_num, s_den;
  const double log_num = numerator_.at(t).log_density_and_score(x, s_num);
  const double log_den = denominator_.at(t).log_density_and_score(x, s_den);
  grad = s_num - s_den;
  return log_num - log_den;
}

OscillatoryDiscriminator::OscillatoryDiscriminator(RatioField field, SdeSchedule schedule, double epsilon,
                                                   double omega, Vector direction)
    : optimal_(std::move(field), schedule), epsilon_(epsilon), omega_(omega), direction_(std::move(direction)) {
  if (!(epsilon_ > 0.0) || !std::isfinite(epsilon_)) throw std::invalid_argument("oscillatory: epsilon must be > 0");
  if (!(omega_ >= 0.0) || !std::isfinite(omega_)) throw std::invalid_argument("oscillatory: omega must be >= 0");
  if (direction_.size() == 0) {
    direction_ = Vector::Zero(optimal_.dim());
    direction_[0] = 1.0;
  }
  if (direction_.size() != optimal_.dim()) throw std::invalid_argument("oscillatory: direction has wrong dimension");
  const double norm = direction_.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("oscillatory: direction must be nonzero");
  direction_ /= norm;
}

// d = d* + log(1 + a sin(phi)), a = sqrt(eps) exp(-d*/2), phi = omega <u, x>.
double OscillatoryDiscriminator::value(const Vector& x, double t) const {
  const double d_opt = optimal_.value(x, t);
  const double a = std::sqrt(epsilon_) * std::exp(-0.5 * d_opt);
  const double q = 1.0 + a * std::sin(omega_ * direction_.dot(x));
  if (!(q > 0.0)) throw ConstructionViolatedError("oscillatory discriminator: r* + h <= 0 at the query point");
  return d_opt + std::log(q);
}

double OscillatoryDiscriminator::value_and_gradient(const Vector& x, double t, Vector& grad) const {
  Vector grad_opt;
  const double d_opt = optimal_.value_and_gradient(x, t, grad_opt);
  const double a = std::sqrt(epsilon_) * std::exp(-0.5 * d_opt);
  const double phase = omega_ * direction_.dot(x);
  const double sin_p = std::sin(phase);
  const double q = 1.0 + a * sin_p;
  if (!(q > 0.0)) throw ConstructionViolatedError("oscillatory discriminator: r* + h <= 0 at the query point");
  grad = grad_opt + (a * omega_ * std::cos(phase) * direction_ - 0.5 * a * sin_p * grad_opt) / q;
  return d_opt + std::log(q);
}

namespace {

// Calls fn(point) for every node of a tensor grid with `n` nodes per axis, first axis fastest.
template <class Fn>
void for_each_grid_point(const Box& box, int n, Fn&& fn) {
  const auto dim = box.lower.size();
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  Vector p(dim);
  while (true) {
    for (Eigen::Index k = 0; k < dim; ++k) {
      const double frac = n == 1 ? 0.5 : static_cast<double>(idx[static_cast<std::size_t>(k)]) / (n - 1);
      p[k] = box.lower[k] + frac * (box.upper[k] - box.lower[k]);
    }
    fn(p);
    Eigen::Index k = 0;
    while (k < dim && ++idx[static_cast<std::size_t>(k)] == n) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == dim) return;
  }
}

}  // namespace

OscillatoryDiscriminator build_oscillatory(const RatioField& field, const SdeSchedule& schedule, double epsilon,
                                           double omega, const OscillatoryOptions& options) {
  const int dim = field.dim();
  if (options.region.lower.size() != dim || options.region.upper.size() != dim)
    throw std::invalid_argument("build_oscillatory: region dimension mismatch");
  if ((options.region.upper - options.region.lower).minCoeff() < 0.0)
    throw std::invalid_argument("build_oscillatory: region upper bound below lower bound");
  if (options.grid_per_axis < 1) throw std::invalid_argument("build_oscillatory: grid_per_axis must be >= 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("build_oscillatory: epsilon must be > 0");

  OptimalDiscriminator optimal(field, schedule);
  const double log_eps = std::log(epsilon);
  for (double t : options.check_times) {
    for_each_grid_point(options.region, options.grid_per_axis, [&](const Vector& p) {
      const double d = optimal.value(p, t);
      if (!(d > log_eps)) {
        std::ostringstream msg;
        msg.precision(6);
        msg << "oscillatory construction infeasible: r* = " << std::exp(d) << " <= epsilon = " << epsilon
            << " at x = (";
        for (Eigen::Index k = 0; k < p.size(); ++k) msg << (k ? ", " : "") << p[k];
        msg << "), t = " << t;
        throw ConstructionInfeasibleError(msg.str(), std::vector<double>(p.data(), p.data() + p.size()), t);
      }
    });
  }
  return OscillatoryDiscriminator(field, schedule, epsilon, omega, options.direction);
}

}  // namespace dgl
