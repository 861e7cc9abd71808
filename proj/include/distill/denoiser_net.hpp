#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "distill/dual.hpp"
#include "distill/linalg.hpp"
#include "distill/rng.hpp"

namespace distill {

enum class Activation { tanh, identity };

/// Shape of a small time- and condition-aware MLP: input is
/// [x_t; t/T; sin(pi tau); cos(pi tau); sin(2 pi tau); cos(2 pi tau); embedding(cond)].
struct NetArchitecture {
  int data_dim = 2;
  std::vector<int> hidden = {32, 32};
  Activation activation = Activation::tanh;
  int num_timesteps = 1000;
  /// Number of learned condition ids. One extra "null" embedding is always
  /// allocated when this is positive.
  int condition_count = 0;
  int condition_width = 0;

  static constexpr int kTimeFeatures = 5;

  int embedding_width() const { return condition_count > 0 ? condition_width : 0; }
  int input_width() const { return data_dim + kTimeFeatures + embedding_width(); }

  friend bool operator==(const NetArchitecture&, const NetArchitecture&) = default;
};

/// One contiguous slice of the flat parameter vector.
/// Affine blocks store W (rows x cols, column-major) followed by the bias (rows).
/// The embedding block stores a condition_width x (condition_count + 1) table.
struct ParamBlock {
  enum class Kind { embedding, affine };
  Kind kind;
  int layer_id;
  std::size_t offset;
  int rows;
  int cols;

  std::size_t weight_size() const { return static_cast<std::size_t>(rows) * cols; }
  std::size_t size() const { return weight_size() + (kind == Kind::affine ? rows : 0); }

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

class ParamLayout {
 public:
  explicit ParamLayout(const NetArchitecture& arch);

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t size() const { return size_; }
  const ParamBlock& final_layer() const { return blocks_.back(); }
  /// Affine layers only, in evaluation order.
  std::vector<ParamBlock> affine_layers() const;
  std::optional<ParamBlock> embedding() const;

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) {
    return a.size_ == b.size_ && a.blocks_ == b.blocks_;
  }

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t size_ = 0;
};

struct FlatParamsTag {};
struct ParamTangentTag {};

/// Parameter-space vector tied to a layout. The tag keeps parameters and
/// directions in parameter space from being mixed up implicitly.
template <typename Tag>
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(Eigen::VectorXd values, std::shared_ptr<const ParamLayout> layout)
      : values_(std::move(values)), layout_(std::move(layout)) {
    if (!layout_ || static_cast<std::size_t>(values_.size()) != layout_->size())
      throw std::invalid_argument("parameter vector length does not match its layout");
  }

  static ParamVector zeros(std::shared_ptr<const ParamLayout> layout) {
    const auto n = static_cast<Eigen::Index>(layout->size());
    return ParamVector(Eigen::VectorXd::Zero(n), std::move(layout));
  }

  template <typename OtherTag>
  static ParamVector from(const ParamVector<OtherTag>& other) {
    return ParamVector(other.values(), other.layout_ptr());
  }

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const { return layout_; }
  Eigen::Index size() const { return values_.size(); }

  template <typename OtherTag>
  bool same_layout(const ParamVector<OtherTag>& other) const {
    return layout_ && other.layout_ptr() &&
           (layout_ == other.layout_ptr() || *layout_ == other.layout());
  }

 private:
  Eigen::VectorXd values_;
  std::shared_ptr<const ParamLayout> layout_;
};

using FlatParams = ParamVector<FlatParamsTag>;
using ParamTangent = ParamVector<ParamTangentTag>;

template <typename A, typename B>
void require_same_layout(const ParamVector<A>& a, const ParamVector<B>& b, const char* what) {
  if (!a.same_layout(b)) throw std::invalid_argument(std::string(what) + ": parameter layout mismatch");
}

ParamTangent operator-(const FlatParams& a, const FlatParams& b);
FlatParams operator+(const FlatParams& a, const ParamTangent& v);
ParamTangent operator*(double s, const ParamTangent& v);
ParamTangent operator+(const ParamTangent& a, const ParamTangent& b);
/// Element-wise product, used to apply 0/1 masks.
ParamTangent hadamard(const ParamTangent& mask, const ParamTangent& v);

/// The denoiser epsilon_phi(x_t, t, cond): a C^2 MLP with a flat parameter vector.
class DenoiserNet {
 public:
  DenoiserNet(NetArchitecture arch, FlatParams params);

  /// Uniform(+-1/sqrt(fan_in)) hidden layers, zero final layer, N(0,1) embeddings.
  static DenoiserNet initialize(const NetArchitecture& arch, Rng& rng);
  static DenoiserNet zeros(const NetArchitecture& arch);

  const NetArchitecture& architecture() const { return arch_; }
  const FlatParams& params() const { return params_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return params_.layout_ptr(); }

  DenoiserNet with_params(FlatParams params) const;
  void set_params(FlatParams params);

 private:
  NetArchitecture arch_;
  FlatParams params_;
};

/// Time embedding and condition slot of the input; x_t is written separately.
template <typename Scalar>
VectorX<Scalar> input_features(const NetArchitecture& arch, const Point& x_t, int t,
                               const VectorX<Scalar>& embedding) {
  const int d = arch.data_dim;
  VectorX<Scalar> in(arch.input_width());
  for (int i = 0; i < d; ++i) in[i] = Scalar(x_t[i]);
  const double tau = static_cast<double>(t) / static_cast<double>(arch.num_timesteps);
  constexpr double pi = std::numbers::pi;
  in[d + 0] = Scalar(tau);
  in[d + 1] = Scalar(std::sin(pi * tau));
  in[d + 2] = Scalar(std::cos(pi * tau));
  in[d + 3] = Scalar(std::sin(2.0 * pi * tau));
  in[d + 4] = Scalar(std::cos(2.0 * pi * tau));
  for (Eigen::Index i = 0; i < embedding.size(); ++i) in[d + NetArchitecture::kTimeFeatures + i] = embedding[i];
  return in;
}

template <typename Scalar>
Scalar activate(Activation act, const Scalar& z) {
  using std::tanh;
  return act == Activation::tanh ? Scalar(tanh(z)) : z;
}

/// Forward pass for any Eigen-compatible scalar. With Scalar = Dual<double> and
/// parameter tangents set, the output tangents are the parameter JVP.
template <typename Scalar>
VectorX<Scalar> evaluate(const NetArchitecture& arch, const ParamLayout& layout,
                         const VectorX<Scalar>& params, const Point& x_t, int t, std::optional<int> cond) {
  VectorX<Scalar> embedding(0);
  if (auto emb = layout.embedding()) {
    const int column = cond ? *cond : arch.condition_count;
    embedding = params.segment(static_cast<Eigen::Index>(emb->offset) + column * emb->rows, emb->rows);
  }
  VectorX<Scalar> a = input_features<Scalar>(arch, x_t, t, embedding);
  const auto layers = layout.affine_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const ParamBlock& b = layers[l];
    const auto off = static_cast<Eigen::Index>(b.offset);
    Eigen::Map<const MatrixX<Scalar>> W(params.data() + off, b.rows, b.cols);
    const auto bias = params.segment(off + static_cast<Eigen::Index>(b.weight_size()), b.rows);
    VectorX<Scalar> z = W * a + bias;
    if (l + 1 < layers.size()) {
      a = z.unaryExpr([&](const Scalar& v) { return activate(arch.activation, v); });
    } else {
      a = std::move(z);
    }
  }
  return a;
}

/// One supervised denoising pair for net_grad.
struct DenoisingSample {
  Point x_t;
  int t = 0;
  std::optional<int> cond;
  Point target;
};

Point net_forward(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond = std::nullopt);

/// Reverse mode: gradient of cotangent . epsilon_phi(x_t, t, cond) with respect to the parameters.
FlatParams net_vjp(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond, const Point& cotangent);

/// Gradient of (1/B) sum_i w_i ||eps_phi(x_i, t_i, c_i) - eps_i||^2.
FlatParams net_grad(const DenoiserNet& net, std::span<const DenoisingSample> batch, std::span<const double> weights);

/// (1/B) sum_i w_i ||eps_phi - eps_i||^2 for the same batch.
double net_loss(const DenoiserNet& net, std::span<const DenoisingSample> batch, std::span<const double> weights);

/// Directional derivative of the network output along a parameter tangent,
/// from one dual-valued forward pass.
Point net_jvp(const DenoiserNet& net, const Point& x_t, int t, std::optional<int> cond, const ParamTangent& tangent);

/// 0/1 mask over exactly the final affine layer (weights and bias).
ParamTangent last_layer_mask(const DenoiserNet& net);

}  // namespace distill
