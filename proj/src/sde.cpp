#include "dgl/sde.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "dgl/errors.hpp"
#include "dgl/parallel.hpp"

namespace dgl {
namespace {

constexpr std::size_t kPathBlock = 64;

}  // namespace

std::string to_string(SdeKind kind) { return kind == SdeKind::vp ? "vp" : "subvp"; }

SdeKind sde_kind_from_string(const std::string& s) {
  if (s == "vp" || s == "VP") return SdeKind::vp;
  if (s == "subvp" || s == "subVP" || s == "sub-vp") return SdeKind::subvp;
  throw std::invalid_argument("unknown SDE kind '" + s + "'");
}

void SdeSchedule::validate() const {
  if (!(beta_min > 0.0)) throw std::invalid_argument("beta_min must be > 0");
  if (!(beta_max >= beta_min)) throw std::invalid_argument("beta_max must be >= beta_min");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon T must be > 0");
  if (!(t_min_factor > 0.0 && t_min_factor < 1.0)) throw std::invalid_argument("t_min_factor must lie in (0, 1)");
}

double SdeSchedule::beta(double t) const { return beta_min + t * (beta_max - beta_min) / horizon; }

double SdeSchedule::integrated_beta(double t) const {
  return beta_min * t + 0.5 * (beta_max - beta_min) * t * t / horizon;
}

double SdeSchedule::g2(double t) const {
  if (kind == SdeKind::vp) return beta(t);
  return beta(t) * (-std::expm1(-2.0 * integrated_beta(t)));
}

PerturbationKernel kernel_at(const SdeSchedule& schedule, double t) {
  if (!(t >= 0.0 && t <= schedule.horizon))
    throw std::invalid_argument("time " + std::to_string(t) + " outside [0, T]");
  const double b = schedule.integrated_beta(t);
  PerturbationKernel k;
  k.mean_scale = std::exp(-0.5 * b);
  const double one_minus_m2 = -std::expm1(-b);  // 1 - m^2 without cancellation
  k.std = schedule.kind == SdeKind::vp ? std::sqrt(one_minus_m2) : one_minus_m2;
  return k;
}

Vector kernel_score(const PerturbationKernel& kernel, const Vector& x0, const Vector& xt) {
  if (x0.size() != xt.size()) throw std::invalid_argument("kernel_score: dimension mismatch");
  if (!(kernel.std > 0.0)) throw SingularKernelError("kernel_score: sigma(t) = 0 (respect t_min)");
  return -(xt - kernel.mean_scale * x0) / kernel.variance();
}

GaussianMixture diffuse(const GaussianMixture& gmm, const SdeSchedule& schedule, double t) {
  const PerturbationKernel k = kernel_at(schedule, t);
  if (t == 0.0) return gmm;
  return diffuse_components(gmm, k.mean_scale, k.variance());
}

Vector forward_sample_path(const Vector& x0, const SdeSchedule& schedule, double t, Rng& rng) {
  const PerturbationKernel k = kernel_at(schedule, t);
  if (k.std == 0.0) return x0;
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector xt(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) xt[i] = k.mean_scale * x0[i] + k.std * normal(rng);
  return xt;
}

namespace {

std::atomic<std::uint64_t> next_mixture_id{1};

struct CacheEntry {
  std::uint64_t id = 0;
  double t = 0.0;
  std::optional<GaussianMixture> mixture;
};

constexpr std::size_t kCacheSlots = 8;

}  // namespace

DiffusedMixture::DiffusedMixture(GaussianMixture base, SdeSchedule schedule)
    : base_(std::make_shared<const GaussianMixture>(std::move(base))),
      schedule_(schedule),
      id_(next_mixture_id.fetch_add(1)) {
  schedule_.validate();
}

const GaussianMixture& DiffusedMixture::at(double t) const {
  thread_local std::array<CacheEntry, kCacheSlots> cache;
  thread_local std::size_t next_slot = 0;
  for (auto& e : cache)
    if (e.id == id_ && e.t == t && e.mixture) return *e.mixture;
  CacheEntry& e = cache[next_slot];
  next_slot = (next_slot + 1) % kCacheSlots;
  e.mixture.reset();
  e.mixture = diffuse(*base_, schedule_, t);
  e.id = id_;
  e.t = t;
  return *e.mixture;
}

ScoreFn mixture_score_fn(const GaussianMixture& gmm, const SdeSchedule& schedule) {
  DiffusedMixture diffused(gmm, schedule);
  return [diffused](const Vector& x, double t) { return diffused.at(t).score(x); };
}

Points reverse_sample(const ScoreFn& score, const SdeSchedule& schedule,
                      const ReverseSamplerOptions& options, int dim, std::uint64_t seed) {
  schedule.validate();
  if (options.n_steps < 1) throw std::invalid_argument("reverse_sample: n_steps must be >= 1");
  if (options.n_samples < 1) throw std::invalid_argument("reverse_sample: n_samples must be >= 1");
  if (dim < 1) throw std::invalid_argument("reverse_sample: dim must be >= 1");

  const double t_end = schedule.t_min();
  const double h = (schedule.horizon - t_end) / static_cast<double>(options.n_steps);
  Points out(static_cast<Eigen::Index>(options.n_samples), dim);
  const std::size_t n_blocks = (options.n_samples + kPathBlock - 1) / kPathBlock;

  parallel_for(n_blocks, [&](std::size_t block) {
    Rng rng = make_rng(seed, block);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t begin = block * kPathBlock;
    const std::size_t end = std::min(begin + kPathBlock, options.n_samples);
    Vector x(dim);
    for (std::size_t p = begin; p < end; ++p) {
      for (int d = 0; d < dim; ++d) x[d] = normal(rng);
      for (std::size_t k = 0; k < options.n_steps; ++k) {
        const double t = schedule.horizon - static_cast<double>(k) * h;
        const Vector s = score(x, t);
        if (!s.allFinite()) throw DivergedSamplerError(k, t);
        const double beta = schedule.beta(t);
        const double g2 = schedule.g2(t);
        const double g = std::sqrt(g2);
        // x_{t-h} = x_t - [f(x_t, t) - g^2 s] h + g sqrt(h) z, f = -beta x / 2
        const double sqrt_h = std::sqrt(h);
        for (int d = 0; d < dim; ++d) {
          const double drift = -0.5 * beta * x[d] - g2 * s[d];
          x[d] = x[d] - drift * h + g * sqrt_h * normal(rng);
        }
      }
      out.row(static_cast<Eigen::Index>(p)) = x.transpose();
    }
  });
  return out;
}

nlohmann::json schedule_to_json(const SdeSchedule& s) {
  return {{"kind", to_string(s.kind)},
          {"beta_min", s.beta_min},
          {"beta_max", s.beta_max},
          {"T", s.horizon},
          {"t_min_factor", s.t_min_factor}};
}

SdeSchedule schedule_from_json(const nlohmann::json& j) {
  SdeSchedule s;
  if (j.contains("kind")) s.kind = sde_kind_from_string(j.at("kind").get<std::string>());
  s.beta_min = j.value("beta_min", s.beta_min);
  s.beta_max = j.value("beta_max", s.beta_max);
  s.horizon = j.value("T", s.horizon);
  s.t_min_factor = j.value("t_min_factor", s.t_min_factor);
  s.validate();
  return s;
}

}  // namespace dgl
