#include "distill/denoiser_net.hpp"

#include <cmath>
#include <sstream>

namespace distill {

namespace {

void check_input(const NetArchitecture& arch, const Point& x_t, int t, std::optional<int> cond) {
  if (x_t.size() != arch.data_dim) {
    std::ostringstream os;
    os << "denoiser input has dimension " << x_t.size() << ", expected " << arch.data_dim;
    throw std::invalid_argument(os.str());
  }
  for (Eigen::Index i = 0; i < x_t.size(); ++i) {
    if (!std::isfinite(x_t[i])) {
      std::ostringstream os;
      os << "denoiser input x_t[" << i << "] is not finite (" << x_t[i] << ")";
      throw std::invalid_argument(os.str());
    }
  }
  if (t < 0 || t > arch.num_timesteps) {
    std::ostringstream os;
    os << "timestep " << t << " outside [0, " << arch.num_timesteps << "]";
    throw std::out_of_range(os.str());
  }
  if (cond) {
    if (arch.condition_count == 0) throw std::invalid_argument("network has no condition embeddings");
    if (*cond < 0 || *cond >= arch.condition_count) {
      std::ostringstream os;
      os << "condition id " << *cond << " outside [0, " << arch.condition_count << ")";
      throw std::out_of_range(os.str());
    }
  }
}

}  // namespace

ParamLayout::ParamLayout(const NetArchitecture& arch) {
  if (arch.data_dim < 1) throw std::invalid_argument("data dimension must be positive");
  if (arch.num_timesteps < 1) throw std::invalid_argument("num_timesteps must be positive");
  if (arch.condition_count < 0 || arch.condition_width < 0)
    throw std::invalid_argument("condition sizes must be non-negative");
  if (arch.condition_count > 0 && arch.condition_width == 0)
    throw std::invalid_argument("condition_width must be positive when conditions are enabled");
  int layer_id = 0;
  if (arch.condition_count > 0) {
    blocks_.push_back({ParamBlock::Kind::embedding, layer_id++, size_, arch.condition_width, arch.condition_count + 1});
    size_ += blocks_.back().size();
  }
  int fan_in = arch.input_width();
  auto widths = arch.hidden;
  widths.push_back(arch.data_dim);
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("layer widths must be positive");
    blocks_.push_back({ParamBlock::Kind::affine, layer_id++, size_, w, fan_in});
    size_ += blocks_.back().size();
    fan_in = w;
  }
}

std::vector<ParamBlock> ParamLayout::affine_layers() const {
  std::vector<ParamBlock> out;
  for (const auto& b : blocks_)
    if (b.kind == ParamBlock::Kind::affine) out.push_back(b);
  return out;
}

std::optional<ParamBlock> ParamLayout::embedding() const {
  if (!blocks_.empty() && blocks_.front().kind == ParamBlock::Kind::embedding) return blocks_.front();
  return std::nullopt;
}

ParamTangent operator-(const FlatParams& a, const FlatParams& b) {
  require_same_layout(a, b, "parameter difference");
  return ParamTangent(a.values() - b.values(), a.layout_ptr());
}

FlatParams operator+(const FlatParams& a, const ParamTangent& v) {
  require_same_layout(a, v, "parameter step");
  return FlatParams(a.values() + v.values(), a.layout_ptr());
}

ParamTangent operator*(double s, const ParamTangent& v) { return ParamTangent(s * v.values(), v.layout_ptr()); }

ParamTangent operator+(const ParamTangent& a, const ParamTangent& b) {
  require_same_layout(a, b, "tangent sum");
  return ParamTangent(a.values() + b.values(), a.layout_ptr());
}

ParamTangent hadamard(const ParamTangent& mask, const ParamTangent& v) {
  require_same_layout(mask, v, "tangent mask");
  return ParamTangent(mask.values().cwiseProduct(v.values()), v.layout_ptr());
}

DenoiserNet::DenoiserNet(NetArchitecture arch, FlatParams params) : arch_(std::move(arch)), params_(std::move(params)) {
  if (!(params_.layout() == ParamLayout(arch_)))
    throw std::invalid_argument("parameters do not match the network architecture");
}

DenoiserNet DenoiserNet::zeros(const NetArchitecture& arch) {
  auto layout = std::make_shared<const ParamLayout>(arch);
  return DenoiserNet(arch, FlatParams::zeros(layout));
}

DenoiserNet DenoiserNet::initialize(const NetArchitecture& arch, Rng& rng) {
  auto layout = std::make_shared<const ParamLayout>(arch);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout->size()));
  const auto& blocks = layout->blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const ParamBlock& b = blocks[i];
    const auto off = static_cast<Eigen::Index>(b.offset);
    if (b.kind == ParamBlock::Kind::embedding) {
      for (std::size_t k = 0; k < b.size(); ++k) v[off + static_cast<Eigen::Index>(k)] = rng.normal();
      continue;
    }
    if (i + 1 == blocks.size()) break;  // final layer stays zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.cols));
    for (std::size_t k = 0; k < b.size(); ++k) v[off + static_cast<Eigen::Index>(k)] = rng.uniform(-bound, bound);
  }
  return DenoiserNet(arch, FlatParams(std::move(v), std::move(layout)));
}

DenoiserNet DenoiserNet::with_params(FlatParams params) const {
  DenoiserNet copy = *this;
  copy.set_params(std::move(params));
  return copy;
}

void DenoiserNet::set_params(FlatParams params) {
  require_same_layout(params_, params, "set_params");
  params_ = std::move(params);
}

Point net_forward(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond) {
  check_input(net.architecture(), x_t, t, cond);
  return evaluate<double>(net.architecture(), net.params().layout(), net.params().values(), x_t, t, cond);
}

Point net_jvp(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond, const ParamTangent& tangent) {
  require_same_layout(net.params(), tangent, "net_jvp");
  check_input(net.architecture(), x_t, t, cond);
  const Eigen::VectorXd& p = net.params().values();
  const Eigen::VectorXd& v = tangent.values();
  VectorX<Dual<double>> dual_params(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) dual_params[i] = Dual<double>(p[i], v[i]);
  const auto out = evaluate<Dual<double>>(net.architecture(), net.params().layout(), dual_params, x_t, t, cond);
  return out.unaryExpr([](const Dual<double>& y) { return y.tangent; });
}

FlatParams net_vjp(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond, const Point& cotangent) {
  const NetArchitecture& arch = net.architecture();
  check_input(arch, x_t, t, cond);
  if (cotangent.size() != arch.data_dim) throw std::invalid_argument("cotangent dimension mismatch");
  const ParamLayout& layout = net.params().layout();
  const Eigen::VectorXd& p = net.params().values();

  Eigen::VectorXd embedding(0);
  const auto emb = layout.embedding();
  const int emb_column = cond ? *cond : arch.condition_count;
  if (emb) embedding = p.segment(static_cast<Eigen::Index>(emb->offset) + emb_column * emb->rows, emb->rows);

  const auto layers = layout.affine_layers();
  std::vector<Eigen::VectorXd> inputs;  // input to each affine layer; hidden outputs after activation
  inputs.push_back(input_features<double>(arch, x_t, t, embedding));
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const ParamBlock& b = layers[l];
    const auto off = static_cast<Eigen::Index>(b.offset);
    Eigen::Map<const Eigen::MatrixXd> W(p.data() + off, b.rows, b.cols);
    Eigen::VectorXd z = W * inputs.back() + p.segment(off + static_cast<Eigen::Index>(b.weight_size()), b.rows);
    inputs.push_back(z.unaryExpr([&](double v) { return activate(arch.activation, v); }));
  }

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(p.size());
  Eigen::VectorXd g = cotangent;  // cotangent on the current layer's output
  for (std::size_t l = layers.size(); l-- > 0;) {
    const ParamBlock& b = layers[l];
    const auto off = static_cast<Eigen::Index>(b.offset);
    if (l + 1 < layers.size() && arch.activation == Activation::tanh) {
      const Eigen::VectorXd& h = inputs[l + 1];
      g = g.cwiseProduct((1.0 - h.array().square()).matrix());
    }
    Eigen::Map<Eigen::MatrixXd> dW(grad.data() + off, b.rows, b.cols);
    dW.noalias() = g * inputs[l].transpose();
    grad.segment(off + static_cast<Eigen::Index>(b.weight_size()), b.rows) = g;
    Eigen::Map<const Eigen::MatrixXd> W(p.data() + off, b.rows, b.cols);
    g = W.transpose() * g;
  }
  if (emb) {
    const Eigen::Index start = arch.data_dim + NetArchitecture::kTimeFeatures;
    grad.segment(static_cast<Eigen::Index>(emb->offset) + emb_column * emb->rows, emb->rows) = g.segment(start, emb->rows);
  }
  return FlatParams(std::move(grad), net.params().layout_ptr());
}

namespace {

void check_batch(std::span<const DenoisingSample> batch, std::span<const double> weights) {
  if (batch.empty()) throw std::invalid_argument("net_grad: empty batch");
  if (batch.size() != weights.size()) {
    std::ostringstream os;
    os << "net_grad: batch has " << batch.size() << " samples but " << weights.size() << " weights";
    throw std::invalid_argument(os.str());
  }
  for (double w : weights)
    if (!(w > 0.0)) throw std::invalid_argument("net_grad: weights must be positive");
}

}  // namespace

FlatParams net_grad(const DenoiserNet& net, std::span<const DenoisingSample> batch, std::span<const double> weights) {
  check_batch(batch, weights);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(net.params().size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    const Point residual = net_forward(net, s.x_t, s.t, s.cond) - s.target;
    total += net_vjp(net, s.x_t, s.t, s.cond, 2.0 * weights[i] * residual).values();
  }
  total /= static_cast<double>(batch.size());
  return FlatParams(std::move(total), net.params().layout_ptr());
}

double net_loss(const DenoiserNet& net, std::span<const DenoisingSample> batch, std::span<const double> weights) {
  check_batch(batch, weights);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    total += weights[i] * (net_forward(net, s.x_t, s.t, s.cond) - s.target).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

ParamTangent last_layer_mask(const DenoiserNet& net) {
  ParamTangent mask = ParamTangent::zeros(net.params().layout_ptr());
  const ParamBlock& last = net.params().layout().final_layer();
  mask.values().segment(static_cast<Eigen::Index>(last.offset), static_cast<Eigen::Index>(last.size())).setOnes();
  return mask;
}

}  // namespace distill
