#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dgl/distributions.hpp"
#include "dgl/sde.hpp"
#include "dgl/types.hpp"

namespace dgl {

/// d(x, t): estimate of log p_t(x) / p_hat_t(x).
class Discriminator {
 public:
  virtual ~Discriminator() = default;

  virtual int dim() const = 0;
  virtual double value(const Vector& x, double t) const = 0;
  // Writes grad_x d into `grad` (resized to dim()) and returns d.
  virtual double value_and_gradient(const Vector& x, double t, Vector& grad) const = 0;

  Vector input_gradient(const Vector& x, double t) const {
    Vector g;
    value_and_gradient(x, t, g);
    return g;
  }
};

// d == 0: guidance is a no-op.
class ZeroDiscriminator final : public Discriminator {
 public:
  explicit ZeroDiscriminator(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  double value(const Vector&, double) const override { return 0.0; }
  double value_and_gradient(const Vector&, double, Vector& grad) const override {
    grad = Vector::Zero(dim_);
    return 0.0;
  }

 private:
  int dim_;
};

// ---------------------------------------------------------------------------
// Neural discriminator

enum class Activation { tanh, softplus, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);
// C2 activations support training through the input gradient.
bool is_twice_differentiable(Activation a);

struct MlpArchitecture {
  int data_dim = 2;
  std::vector<int> hidden_widths{64, 64};
  Activation activation = Activation::tanh;
  double horizon = 1.0;  // time enters as the extra channel t / horizon

  void validate() const;
  int input_dim() const { return data_dim + 1; }
  // sum over layers of (fan_in * fan_out + fan_out) plus the linear read-out.
  std::size_t parameter_count() const;
};

class MlpWorkspace;
struct LossGradient;
struct ValueLoss;

/// Fully connected network on (x, t / T) with a scalar read-out.
///
/// Parameters live in one flat vector, layer by layer: W (fan_out x fan_in,
/// row-major) then b; the read-out row vector and bias come last.
class MlpDiscriminator final : public Discriminator {
 public:
  explicit MlpDiscriminator(MlpArchitecture arch);

  // Hidden weights ~ N(0, 1 / fan_in), hidden biases 0, read-out zero so the
  // network starts at d == 0.
  static MlpDiscriminator initialized(MlpArchitecture arch, std::uint64_t seed);

  const MlpArchitecture& architecture() const noexcept { return arch_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }
  void set_parameters(std::span<const double> p);

  // Replaces the read-out with N(0, scale^2 / fan_in) draws (bias included).
  void randomize_readout(Rng& rng, double scale);

  int dim() const override { return arch_.data_dim; }
  double value(const Vector& x, double t) const override;
  double value_and_gradient(const Vector& x, double t, Vector& grad) const override;

  // Raw-pointer entry points used by batched code; `ws` must come from make_workspace().
  double forward(MlpWorkspace& ws, const double* x, double t) const;
  using Discriminator::input_gradient;
  // Requires a preceding forward(); writes grad_x d (data_dim entries).
  void input_gradient(MlpWorkspace& ws, double* grad) const;
  // Requires forward() and input_gradient(); adds the parameter gradient of
  //   dloss_dvalue * d + <dloss_dgrad, grad_x d>
  // to `param_grad` (second-order path through grad_x d included).
  void accumulate_parameter_gradient(MlpWorkspace& ws, double dloss_dvalue, const double* dloss_dgrad,
                                     double* param_grad) const;

  std::unique_ptr<MlpWorkspace> make_workspace() const;

 private:
  struct Layer {
    std::size_t fan_in;
    std::size_t fan_out;
    std::size_t weight_offset;
    std::size_t bias_offset;
  };

  MlpArchitecture arch_;
  std::vector<Layer> layers_;
  std::size_t readout_offset_ = 0;
  std::vector<double> params_;

  friend class MlpWorkspace;
  friend LossGradient value_loss_param_gradient(const MlpDiscriminator&, const Points&, std::span<const double>,
                                                const ValueLoss&);
};

// One (x, t) point's contribution to a batch loss and its partial derivatives
// with respect to d and grad_x d.
struct PointSensitivity {
  double loss = 0.0;
  double dloss_dvalue = 0.0;
  Vector dloss_dgrad;  // empty means zero
};

using PointLoss = std::function<PointSensitivity(std::size_t index, double value, const Vector& grad)>;

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Exact gradient over the parameters of sum_i loss_i(d(x_i, t_i), grad_x d(x_i, t_i)).
///
/// Uses forward-over-reverse: the input-gradient term is handled as the
/// directional derivative of d along dloss_dgrad and differentiated by a
/// reverse pass through the primal/tangent graph. Points are processed in
/// fixed blocks and reduced in block order. Throws UnsupportedArchitectureError
/// when any point needs the input-gradient path and the activation is not C2.
LossGradient loss_param_gradient(const MlpDiscriminator& disc, const Points& x,
                                 std::span<const double> t, const PointLoss& loss);

// Loss that depends on the outputs only: fills dloss_dvalue and returns the loss.
struct ValueLoss {
  std::function<double(const Eigen::VectorXd& values, Eigen::VectorXd& dloss_dvalue)> fn;
};

/// First-order special case of loss_param_gradient evaluated layer-wise with
/// matrix products over the whole batch. Agrees with loss_param_gradient up to
/// summation order.
LossGradient value_loss_param_gradient(const MlpDiscriminator& disc, const Points& x, std::span<const double> t,
                                       const ValueLoss& loss);

// Checkpoint: text header line (JSON, versioned) followed by the parameter
// vector as little-endian float64.
void save_checkpoint(const MlpDiscriminator& disc, std::ostream& out);
MlpDiscriminator load_checkpoint(std::istream& in);
void save_checkpoint(const MlpDiscriminator& disc, const std::string& path);
MlpDiscriminator load_checkpoint(const std::string& path);

nlohmann::json architecture_to_json(const MlpArchitecture& a);
MlpArchitecture architecture_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Analytic families

/// d*(x, t) = log p_t(x) - log p_hat_t(x) for a pair of mixtures diffused by `schedule`.
class OptimalDiscriminator final : public Discriminator {
 public:
  OptimalDiscriminator(RatioField field, SdeSchedule schedule);

  int dim() const override { return field_.dim(); }
  double value(const Vector& x, double t) const override;
  double value_and_gradient(const Vector& x, double t, Vector& grad) const override;

  const RatioField& field() const noexcept { return field_; }
  const SdeSchedule& schedule() const noexcept { return schedule_; }
  RatioField field_at(double t) const;

 private:
  RatioField field_;
  SdeSchedule schedule_;
  DiffusedMixture numerator_;
  DiffusedMixture denominator_;
};

struct Box {
  Vector lower;
  Vector upper;
};

/// r(x, t) = r*(x, t) + sin(omega <u, x>) sqrt(eps r*(x, t)), d = log r.
///
/// Stays within eps of the optimal cross-entropy pointwise while its input
/// gradient picks up an oscillating term of size ~ omega sqrt(eps / r*).
class OscillatoryDiscriminator final : public Discriminator {
 public:
  OscillatoryDiscriminator(RatioField field, SdeSchedule schedule, double epsilon, double omega, Vector direction);

  int dim() const override { return optimal_.dim(); }
  // Throw ConstructionViolatedError when r* + h <= 0 at x.
  double value(const Vector& x, double t) const override;
  double value_and_gradient(const Vector& x, double t, Vector& grad) const override;

  double epsilon() const noexcept { return epsilon_; }
  double omega() const noexcept { return omega_; }
  const Vector& direction() const noexcept { return direction_; }
  const OptimalDiscriminator& optimal() const noexcept { return optimal_; }

 private:
  OptimalDiscriminator optimal_;
  double epsilon_;
  double omega_;
  Vector direction_;
};

struct OscillatoryOptions {
  Box region;
  std::vector<double> check_times{0.0};  // times at which inf r* > eps is verified
  int grid_per_axis = 401;
  Vector direction;  // defaults to the first coordinate axis
};

/// Checks inf over the region grid of r*(., t) > epsilon at every check time and
/// returns the construction; throws ConstructionInfeasibleError naming the
/// offending grid point otherwise.
OscillatoryDiscriminator build_oscillatory(const RatioField& field, const SdeSchedule& schedule,
                                           double epsilon, double omega, const OscillatoryOptions& options);

}  // namespace dgl
