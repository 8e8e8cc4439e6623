#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dgl/discriminator.hpp"
#include "dgl/errors.hpp"
#include "dgl/parallel.hpp"
#include "dgl/simd/kernels.hpp"
#include "json.hpp"

namespace dgl {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::softplus:
      return "softplus";
    case Activation::relu:
      return "relu";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  if (s == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

bool is_twice_differentiable(Activation a) { return a != Activation::relu; }

void MlpArchitecture::validate() const {
  if (data_dim < 1) throw std::invalid_argument("MLP data_dim must be >= 1");
  if (hidden_widths.empty()) throw std::invalid_argument("MLP needs at least one hidden layer");
  for (int w : hidden_widths)
    if (w < 1) throw std::invalid_argument("MLP hidden widths must be positive");
  if (!(horizon > 0.0)) throw std::invalid_argument("MLP horizon must be > 0");
}

std::size_t MlpArchitecture::parameter_count() const {
  std::size_t count = 0;
  std::size_t fan_in = static_cast<std::size_t>(input_dim());
  for (int w : hidden_widths) {
    const auto fan_out = static_cast<std::size_t>(w);
    count += fan_in * fan_out + fan_out;
    fan_in = fan_out;
  }
  return count + fan_in + 1;
}

// Per-thread scratch for one point: primal, tangent and adjoint buffers per layer.
class MlpWorkspace {
 public:
  explicit MlpWorkspace(const MlpDiscriminator& net) {
    const std::size_t n = net.layers_.size();
    input.assign(static_cast<std::size_t>(net.arch_.input_dim()), 0.0);
    tangent_input.assign(input.size(), 0.0);
    input_adjoint.assign(input.size(), 0.0);
    for (auto* v : {&pre, &act, &d1, &d2, &delta, &tan_pre, &tan_act, &adj_act, &adj_tan_act, &adj_pre,
                    &adj_tan_pre}) {
      v->resize(n);
    }
    for (std::size_t l = 0; l < n; ++l) {
      const std::size_t w = net.layers_[l].fan_out;
      for (auto* v : {&pre, &act, &d1, &d2, &delta, &tan_pre, &tan_act, &adj_act, &adj_tan_act, &adj_pre,
                      &adj_tan_pre}) {
        (*v)[l].assign(w, 0.0);
      }
    }
  }

  std::vector<double> input, tangent_input, input_adjoint;
  std::vector<std::vector<double>> pre, act, d1, d2;  // u, a(u), a'(u), a''(u)
  std::vector<std::vector<double>> delta;             // dd/dh_l from the input-gradient pass
  std::vector<std::vector<double>> tan_pre, tan_act;  // forward tangents
  std::vector<std::vector<double>> adj_act, adj_tan_act, adj_pre, adj_tan_pre;
};

namespace {

void apply_activation(Activation a, const std::vector<double>& u, std::vector<double>& h, std::vector<double>& d1,
                      std::vector<double>& d2) {
  const std::size_t n = u.size();
  switch (a) {
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) {
        const double y = std::tanh(u[i]);
        h[i] = y;
        d1[i] = 1.0 - y * y;
        d2[i] = -2.0 * y * d1[i];
      }
      break;
    case Activation::softplus:
      for (std::size_t i = 0; i < n; ++i) {
        const double x = u[i];
        h[i] = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        const double s = 1.0 / (1.0 + std::exp(-x));
        d1[i] = s;
        d2[i] = s * (1.0 - s);
      }
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) {
        h[i] = u[i] > 0.0 ? u[i] : 0.0;
        d1[i] = u[i] > 0.0 ? 1.0 : 0.0;
        d2[i] = 0.0;
      }
      break;
  }
}

constexpr std::size_t kPointBlock = 32;

}  // namespace

MlpDiscriminator::MlpDiscriminator(MlpArchitecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t offset = 0;
  std::size_t fan_in = static_cast<std::size_t>(arch_.input_dim());
  for (int w : arch_.hidden_widths) {
    const auto fan_out = static_cast<std::size_t>(w);
    layers_.push_back(Layer{fan_in, fan_out, offset, offset + fan_in * fan_out});
    offset += fan_in * fan_out + fan_out;
    fan_in = fan_out;
  }
  readout_offset_ = offset;
  params_.assign(arch_.parameter_count(), 0.0);
}

MlpDiscriminator MlpDiscriminator::initialized(MlpArchitecture arch, std::uint64_t seed) {
  MlpDiscriminator net(std::move(arch));
  Rng rng(seed);
  for (const auto& layer : net.layers_) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(layer.fan_in)));
    for (std::size_t i = 0; i < layer.fan_in * layer.fan_out; ++i) net.params_[layer.weight_offset + i] = normal(rng);
  }
  return net;
}

void MlpDiscriminator::set_parameters(std::span<const double> p) {
  if (p.size() != params_.size())
    throw std::invalid_argument("parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                                std::to_string(params_.size()));
  std::copy(p.begin(), p.end(), params_.begin());
}

void MlpDiscriminator::randomize_readout(Rng& rng, double scale) {
  const std::size_t width = layers_.back().fan_out;
  std::normal_distribution<double> normal(0.0, scale / std::sqrt(static_cast<double>(width)));
  for (std::size_t i = 0; i <= width; ++i) params_[readout_offset_ + i] = normal(rng);
}

std::unique_ptr<MlpWorkspace> MlpDiscriminator::make_workspace() const {
  return std::make_unique<MlpWorkspace>(*this);
}

double MlpDiscriminator::forward(MlpWorkspace& ws, const double* x, double t) const {
  const auto& k = simd::kernels();
  const auto d = static_cast<std::size_t>(arch_.data_dim);
  std::copy(x, x + d, ws.input.begin());
  ws.input[d] = t / arch_.horizon;
  const double* prev = ws.input.data();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    k.gemv(params_.data() + layer.weight_offset, prev, params_.data() + layer.bias_offset, ws.pre[l].data(),
           layer.fan_out, layer.fan_in);
    apply_activation(arch_.activation, ws.pre[l], ws.act[l], ws.d1[l], ws.d2[l]);
    prev = ws.act[l].data();
  }
  const std::size_t width = layers_.back().fan_out;
  return k.dot(params_.data() + readout_offset_, prev, width) + params_[readout_offset_ + width];
}

void MlpDiscriminator::input_gradient(MlpWorkspace& ws, double* grad) const {
  const auto& k = simd::kernels();
  const std::size_t n = layers_.size();
  std::copy_n(params_.data() + readout_offset_, layers_.back().fan_out, ws.delta[n - 1].begin());
  for (std::size_t l = n; l-- > 0;) {
    const Layer& layer = layers_[l];
    // delta_l <- dd/du_l in place
    auto& g = ws.delta[l];
    for (std::size_t i = 0; i < layer.fan_out; ++i) g[i] *= ws.d1[l][i];
    double* below = l > 0 ? ws.delta[l - 1].data() : ws.input_adjoint.data();
    k.gemv_t(params_.data() + layer.weight_offset, g.data(), below, layer.fan_out, layer.fan_in);
  }
  std::copy_n(ws.input_adjoint.begin(), arch_.data_dim, grad);
}

void MlpDiscriminator::accumulate_parameter_gradient(MlpWorkspace& ws, double dloss_dvalue, const double* dloss_dgrad,
                                                     double* param_grad) const {
  const auto& k = simd::kernels();
  const std::size_t n = layers_.size();
  const std::size_t width = layers_.back().fan_out;
  const double* readout = params_.data() + readout_offset_;
  double* readout_grad = param_grad + readout_offset_;

  bool second_order = false;
  if (dloss_dgrad) {
    for (int i = 0; i < arch_.data_dim; ++i) second_order = second_order || dloss_dgrad[i] != 0.0;
  }

  if (!second_order) {
    // ws.delta holds dd/du_l from input_gradient(); plain backprop scaled by dloss_dvalue.
    if (dloss_dvalue == 0.0) return;
    k.axpy(dloss_dvalue, ws.act[n - 1].data(), readout_grad, width);
    readout_grad[width] += dloss_dvalue;
    for (std::size_t l = 0; l < n; ++l) {
      const Layer& layer = layers_[l];
      const double* below = l > 0 ? ws.act[l - 1].data() : ws.input.data();
      k.ger(param_grad + layer.weight_offset, dloss_dvalue, ws.delta[l].data(), below, layer.fan_out, layer.fan_in);
      k.axpy(dloss_dvalue, ws.delta[l].data(), param_grad + layer.bias_offset, layer.fan_out);
    }
    return;
  }

  if (!is_twice_differentiable(arch_.activation))
    throw UnsupportedArchitectureError("training through grad_x d needs a C2 activation; got " +
                                       to_string(arch_.activation));

  // Tangent pass along v = (dloss_dgrad, 0): the tangent of d is <dloss_dgrad, grad_x d>.
  std::fill(ws.tangent_input.begin(), ws.tangent_input.end(), 0.0);
  std::copy_n(dloss_dgrad, arch_.data_dim, ws.tangent_input.begin());
  const double* tan_prev = ws.tangent_input.data();
  for (std::size_t l = 0; l < n; ++l) {
    const Layer& layer = layers_[l];
    k.gemv(params_.data() + layer.weight_offset, tan_prev, nullptr, ws.tan_pre[l].data(), layer.fan_out,
           layer.fan_in);
    for (std::size_t i = 0; i < layer.fan_out; ++i) ws.tan_act[l][i] = ws.d1[l][i] * ws.tan_pre[l][i];
    tan_prev = ws.tan_act[l].data();
  }

  // Reverse pass of F = a d + d_dot through primal and tangent graphs.
  const double a = dloss_dvalue;
  k.axpy(a, ws.act[n - 1].data(), readout_grad, width);
  k.axpy(1.0, ws.tan_act[n - 1].data(), readout_grad, width);
  readout_grad[width] += a;
  for (std::size_t i = 0; i < width; ++i) {
    ws.adj_act[n - 1][i] = a * readout[i];
    ws.adj_tan_act[n - 1][i] = readout[i];
  }
  for (std::size_t l = n; l-- > 0;) {
    const Layer& layer = layers_[l];
    auto& up = ws.adj_pre[l];
    auto& utp = ws.adj_tan_pre[l];
    for (std::size_t i = 0; i < layer.fan_out; ++i) {
      utp[i] = ws.adj_tan_act[l][i] * ws.d1[l][i];
      const double adj_d1 = ws.adj_tan_act[l][i] * ws.tan_pre[l][i];
      up[i] = ws.adj_act[l][i] * ws.d1[l][i] + adj_d1 * ws.d2[l][i];
    }
    const double* below = l > 0 ? ws.act[l - 1].data() : ws.input.data();
    const double* tan_below = l > 0 ? ws.tan_act[l - 1].data() : ws.tangent_input.data();
    double* wgrad = param_grad + layer.weight_offset;
    k.ger(wgrad, 1.0, up.data(), below, layer.fan_out, layer.fan_in);
    k.ger(wgrad, 1.0, utp.data(), tan_below, layer.fan_out, layer.fan_in);
    k.axpy(1.0, up.data(), param_grad + layer.bias_offset, layer.fan_out);
    if (l > 0) {
      k.gemv_t(params_.data() + layer.weight_offset, up.data(), ws.adj_act[l - 1].data(), layer.fan_out,
               layer.fan_in);
      k.gemv_t(params_.data() + layer.weight_offset, utp.data(), ws.adj_tan_act[l - 1].data(), layer.fan_out,
               layer.fan_in);
    }
  }
}

double MlpDiscriminator::value(const Vector& x, double t) const {
  if (x.size() != arch_.data_dim) throw std::invalid_argument("MLP value: dimension mismatch");
  MlpWorkspace ws(*this);
  return forward(ws, x.data(), t);
}

double MlpDiscriminator::value_and_gradient(const Vector& x, double t, Vector& grad) const {
  if (x.size() != arch_.data_dim) throw std::invalid_argument("MLP gradient: dimension mismatch");
  MlpWorkspace ws(*this);
  const double v = forward(ws, x.data(), t);
  grad.resize(arch_.data_dim);
  input_gradient(ws, grad.data());
  return v;
}

LossGradient loss_param_gradient(const MlpDiscriminator& disc, const Points& x, std::span<const double> t,
                                 const PointLoss& loss) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (t.size() != n) throw std::invalid_argument("loss_param_gradient: x and t sizes differ");
  if (x.cols() != disc.dim()) throw std::invalid_argument("loss_param_gradient: dimension mismatch");
  const std::size_t p = disc.parameters().size();
  const std::size_t n_blocks = (n + kPointBlock - 1) / kPointBlock;
  std::vector<std::vector<double>> block_grads(n_blocks);
  std::vector<double> block_loss(n_blocks, 0.0);

  parallel_for(n_blocks, [&](std::size_t b) {
    auto ws = disc.make_workspace();
    std::vector<double>& g = block_grads[b];
    g.assign(p, 0.0);
    Vector grad(disc.dim());
    const std::size_t end = std::min(n, (b + 1) * kPointBlock);
    for (std::size_t i = b * kPointBlock; i < end; ++i) {
      const double v = disc.forward(*ws, x.row(static_cast<Eigen::Index>(i)).data(), t[i]);
      disc.input_gradient(*ws, grad.data());
      const PointSensitivity s = loss(i, v, grad);
      block_loss[b] += s.loss;
      if (s.dloss_dgrad.size() != 0 && s.dloss_dgrad.size() != disc.dim())
        throw std::invalid_argument("loss_param_gradient: dloss_dgrad has wrong size");
      disc.accumulate_parameter_gradient(*ws, s.dloss_dvalue, s.dloss_dgrad.size() ? s.dloss_dgrad.data() : nullptr,
                                         g.data());
    }
  });

  LossGradient out;
  out.gradient.assign(p, 0.0);
  const auto& k = simd::kernels();
  for (std::size_t b = 0; b < n_blocks; ++b) {
    out.loss += block_loss[b];
    k.axpy(1.0, block_grads[b].data(), out.gradient.data(), p);
  }
  return out;
}

LossGradient value_loss_param_gradient(const MlpDiscriminator& disc, const Points& x, std::span<const double> t,
                                       const ValueLoss& loss) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = static_cast<Eigen::Index>(x.rows());
  if (t.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("value_loss_param_gradient: x and t sizes differ");
  if (x.cols() != disc.dim()) throw std::invalid_argument("value_loss_param_gradient: dimension mismatch");
  const MlpArchitecture& arch = disc.arch_;
  const std::size_t depth = disc.layers_.size();
  const double* params = disc.params_.data();

  // Columns are points.
  std::vector<Eigen::MatrixXd> act(depth + 1), d1(depth);
  act[0].resize(arch.input_dim(), n);
  act[0].topRows(arch.data_dim) = x.transpose();
  for (Eigen::Index i = 0; i < n; ++i) act[0](arch.data_dim, i) = t[static_cast<std::size_t>(i)] / arch.horizon;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& layer = disc.layers_[l];
    const Eigen::Map<const RowMajor> w(params + layer.weight_offset, static_cast<Eigen::Index>(layer.fan_out),
                                       static_cast<Eigen::Index>(layer.fan_in));
    const Eigen::Map<const Eigen::VectorXd> b(params + layer.bias_offset, static_cast<Eigen::Index>(layer.fan_out));
    Eigen::MatrixXd u = w * act[l];
    u.colwise() += b;
    act[l + 1].resize(u.rows(), n);
    d1[l].resize(u.rows(), n);
    for (Eigen::Index j = 0; j < u.size(); ++j) {
      double h = 0.0, g = 0.0;
      const double z = u.data()[j];
      switch (arch.activation) {
        case Activation::tanh:
          h = std::tanh(z);
          g = 1.0 - h * h;
          break;
        case Activation::softplus:
          h = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
          g = 1.0 / (1.0 + std::exp(-z));
          break;
        case Activation::relu:
          h = z > 0.0 ? z : 0.0;
          g = z > 0.0 ? 1.0 : 0.0;
          break;
      }
      act[l + 1].data()[j] = h;
      d1[l].data()[j] = g;
    }
  }
  const auto width = static_cast<Eigen::Index>(disc.layers_.back().fan_out);
  const Eigen::Map<const Eigen::VectorXd> readout(params + disc.readout_offset_, width);
  Eigen::VectorXd values = act[depth].transpose() * readout;
  values.array() += params[disc.readout_offset_ + static_cast<std::size_t>(width)];

  Eigen::VectorXd dv = Eigen::VectorXd::Zero(n);
  LossGradient out;
  out.loss = loss.fn(values, dv);
  if (dv.size() != n) throw std::invalid_argument("value_loss_param_gradient: dloss_dvalue has wrong size");
  out.gradient.assign(disc.params_.size(), 0.0);
  double* grad = out.gradient.data();
  Eigen::Map<Eigen::VectorXd>(grad + disc.readout_offset_, width) = act[depth] * dv;
  grad[disc.readout_offset_ + static_cast<std::size_t>(width)] = dv.sum();

  Eigen::MatrixXd delta = (readout * dv.transpose()).cwiseProduct(d1[depth - 1]);
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = disc.layers_[l];
    const Eigen::Map<const RowMajor> w(params + layer.weight_offset, static_cast<Eigen::Index>(layer.fan_out),
                                       static_cast<Eigen::Index>(layer.fan_in));
    Eigen::Map<RowMajor>(grad + layer.weight_offset, w.rows(), w.cols()) = delta * act[l].transpose();
    Eigen::Map<Eigen::VectorXd>(grad + layer.bias_offset, w.rows()) = delta.rowwise().sum();
    if (l > 0) delta = (w.transpose() * delta).cwiseProduct(d1[l - 1]);
  }
  return out;
}

nlohmann::json architecture_to_json(const MlpArchitecture& a) {
  return {{"data_dim", a.data_dim},
          {"hidden_widths", a.hidden_widths},
          {"activation", to_string(a.activation)},
          {"horizon", a.horizon}};
}

MlpArchitecture architecture_from_json(const nlohmann::json& j) {
  MlpArchitecture a;
  a.data_dim = j.value("data_dim", a.data_dim);
  if (j.contains("hidden_widths")) a.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
  if (j.contains("activation")) a.activation = activation_from_string(j.at("activation").get<std::string>());
  a.horizon = j.value("horizon", a.horizon);
  a.validate();
  return a;
}

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const MlpDiscriminator& disc, std::ostream& out) {
  const auto params = disc.parameters();
  nlohmann::json header = {{"format", "dgl-mlp-checkpoint"},
                           {"version", kCheckpointVersion},
                           {"architecture", architecture_to_json(disc.architecture())},
                           {"parameter_count", params.size()},
                           {"dtype", "float64-le"}};
  out << header.dump() << '\n';
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

MlpDiscriminator load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (!header.contains("version")) throw std::runtime_error("checkpoint: header has no version field");
  if (header.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + header.at("version").dump());
  MlpDiscriminator disc(architecture_from_json(header.at("architecture")));
  const auto count = header.at("parameter_count").get<std::size_t>();
  if (count != disc.parameters().size()) throw std::runtime_error("checkpoint: parameter count does not match architecture");
  std::vector<double> params(count);
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw std::runtime_error("checkpoint: truncated parameter blob");
  disc.set_parameters(params);
  return disc;
}

void save_checkpoint(const MlpDiscriminator& disc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  save_checkpoint(disc, out);
}

MlpDiscriminator load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace dgl
