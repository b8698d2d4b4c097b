// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/common.hpp"

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace kernelscope::nn {

enum class ActivationKind : std::uint8_t { LeakyReLU = 0, ReLU = 1, Tanh = 2 };

/// Pointwise nonlinearity. At a pre-activation of exactly zero the
/// piecewise-linear kinds use their negative-side slope.
struct Activation {
  ActivationKind kind = ActivationKind::LeakyReLU;
  double slope = 0.2;  // LeakyReLU only

  static Activation leaky_relu(double slope = 0.2) { return {ActivationKind::LeakyReLU, slope}; }
  static Activation relu() { return {ActivationKind::ReLU, 0.0}; }
  static Activation tanh() { return {ActivationKind::Tanh, 0.0}; }

  template <typename Scalar>
  Scalar value(Scalar z) const {
    switch (kind) {
      case ActivationKind::LeakyReLU: return z > Scalar(0) ? z : Scalar(slope) * z;
      case ActivationKind::ReLU: return z > Scalar(0) ? z : Scalar(0);
      case ActivationKind::Tanh: return std::tanh(z);
    }
    return z;
  }

  template <typename Scalar>
  Scalar derivative(Scalar z) const {
    switch (kind) {
      case ActivationKind::LeakyReLU: return z > Scalar(0) ? Scalar(1) : Scalar(slope);
      case ActivationKind::ReLU: return z > Scalar(0) ? Scalar(1) : Scalar(0);
      case ActivationKind::Tanh: {
        const Scalar t = std::tanh(z);
        return Scalar(1) - t * t;
      }
    }
    return Scalar(1);
  }

  /// Elementwise forms over Eigen arrays, vectorizable.
  template <typename Derived>
  auto apply(const Eigen::MatrixBase<Derived>& z) const {
    using Scalar = typename Derived::Scalar;
    using Plain = typename Derived::PlainObject;
    switch (kind) {
      case ActivationKind::LeakyReLU:
        return Plain(z.cwiseMax(Scalar(0)) + Scalar(slope) * z.cwiseMin(Scalar(0)));
      case ActivationKind::ReLU: return Plain(z.cwiseMax(Scalar(0)));
      case ActivationKind::Tanh: return Plain(z.array().tanh().matrix());
    }
    return Plain(z);
  }

  template <typename Derived>
  auto apply_derivative(const Eigen::MatrixBase<Derived>& z) const {
    using Scalar = typename Derived::Scalar;
    using Plain = typename Derived::PlainObject;
    switch (kind) {
      case ActivationKind::LeakyReLU:
        return Plain(((z.array() > Scalar(0)).template cast<Scalar>() * Scalar(1 - slope) + Scalar(slope))
                         .matrix());
      case ActivationKind::ReLU:
        return Plain((z.array() > Scalar(0)).template cast<Scalar>().matrix());
      case ActivationKind::Tanh:
        return Plain((Scalar(1) - z.array().tanh().square()).matrix());
    }
    return Plain(Plain::Ones(z.rows(), z.cols()));
  }

  std::string name() const {
    switch (kind) {
      case ActivationKind::LeakyReLU: return "leaky_relu";
      case ActivationKind::ReLU: return "relu";
      case ActivationKind::Tanh: return "tanh";
    }
    return "unknown";
  }

  friend bool operator==(const Activation&, const Activation&) = default;
};

inline Activation parse_activation(const std::string& name, double slope = 0.2) {
  if (name == "leaky_relu" || name == "leakyrelu") return Activation::leaky_relu(slope);
  if (name == "relu") return Activation::relu();
  if (name == "tanh") return Activation::tanh();
  throw Error("config", "unknown activation '" + name + "'");
}

struct NetworkConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths{1};
  Activation activation{};
  bool shortcuts = false;
  std::uint64_t seed = 0;

  void validate() const {
    require(input_dim >= 1, "config", "input_dim must be positive");
    require(!hidden_widths.empty(), "config", "at least one hidden layer is required");
    for (auto w : hidden_widths) require(w >= 1, "config", "hidden widths must be positive");
    require(activation.kind != ActivationKind::LeakyReLU || std::isfinite(activation.slope), "config",
            "LeakyReLU slope must be finite");
  }
};

struct LayerShape {
  std::uint32_t fan_in = 0;
  std::uint32_t fan_out = 0;

  std::size_t num_params() const { return (std::size_t(fan_in) + 1) * fan_out; }
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Layer shapes of a scalar-output fully connected network. The last layer
/// is the linear output head; every earlier layer is followed by the
/// activation. With shortcuts on, a hidden layer whose input is another
/// hidden layer of the same width adds that input to its output.
struct Topology {
  std::vector<LayerShape> layers;
  Activation activation{};
  bool shortcuts = false;

  static Topology from_config(const NetworkConfig& config) {
    config.validate();
    Topology topo;
    topo.activation = config.activation;
    topo.shortcuts = config.shortcuts;
    std::size_t fan_in = config.input_dim;
    for (auto w : config.hidden_widths) {
      topo.layers.push_back({static_cast<std::uint32_t>(fan_in), static_cast<std::uint32_t>(w)});
      fan_in = w;
    }
    topo.layers.push_back({static_cast<std::uint32_t>(fan_in), 1u});
    return topo;
  }

  std::size_t input_dim() const { return layers.front().fan_in; }
  std::size_t depth() const { return layers.size(); }

  std::size_t num_params() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.num_params();
    return total;
  }

  /// Offset of layer l's weight block; its bias follows the weights.
  std::size_t offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += layers[i].num_params();
    return off;
  }

  bool has_skip(std::size_t l) const {
    return shortcuts && l > 0 && l + 1 < layers.size() && layers[l].fan_in == layers[l].fan_out;
  }

  void validate() const {
    require(layers.size() >= 2, "format", "topology needs a hidden and an output layer");
    require(layers.back().fan_out == 1, "format", "output layer must be scalar");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require(layers[l].fan_in >= 1 && layers[l].fan_out >= 1, "format", "empty layer in topology");
      if (l > 0) require(layers[l].fan_in == layers[l - 1].fan_out, "format", "layer shapes do not chain");
    }
  }

  friend bool operator==(const Topology&, const Topology&) = default;
};

inline std::size_t parameter_count(const NetworkConfig& config) {
  return Topology::from_config(config).num_params();
}

/// Fully connected scalar-output network over a flat parameter vector.
/// Weights of each layer are stored row-major (fan_out x fan_in), then
/// the layer's biases.
template <std::floating_point Scalar>
class BasicNetwork {
 public:
  using scalar_type = Scalar;
  using VectorS = VectorT<Scalar>;
  using MatrixS = MatrixT<Scalar>;

  /// Per-layer values retained by a batched forward pass. Columns are samples.
  struct ForwardPass {
    std::vector<MatrixS> inputs;  // input to layer l
    std::vector<MatrixS> pre;     // pre-activation of hidden layer l
    VectorS output;
  };

  BasicNetwork() = default;

  BasicNetwork(Topology topology, VectorS theta) : topology_(std::move(topology)), theta_(std::move(theta)) {
    topology_.validate();
    require(static_cast<std::size_t>(theta_.size()) == topology_.num_params(), "dimension_mismatch",
            "parameter vector length does not match topology");
    require(theta_.allFinite(), "non_finite", "network parameters must be finite");
  }

  /// Uniform Glorot weights U(+-sqrt(6/(fan_in+fan_out))), zero biases.
  static BasicNetwork init(const NetworkConfig& config, std::uint64_t seed) {
    Topology topo = Topology::from_config(config);
    VectorS theta = VectorS::Zero(static_cast<Eigen::Index>(topo.num_params()));
    std::mt19937_64 rng(seed);
    std::size_t off = 0;
    for (const auto& layer : topo.layers) {
      const double bound = std::sqrt(6.0 / (double(layer.fan_in) + double(layer.fan_out)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      const std::size_t nw = std::size_t(layer.fan_in) * layer.fan_out;
      for (std::size_t i = 0; i < nw; ++i) theta[Eigen::Index(off + i)] = Scalar(dist(rng));
      off += layer.num_params();
    }
    return BasicNetwork(std::move(topo), std::move(theta));
  }

  static BasicNetwork init(const NetworkConfig& config) { return init(config, config.seed); }

  const Topology& topology() const { return topology_; }
  std::size_t num_params() const { return static_cast<std::size_t>(theta_.size()); }
  std::size_t input_dim() const { return topology_.input_dim(); }
  const VectorS& params() const { return theta_; }

  void set_params(const VectorS& theta) {
    require(theta.size() == theta_.size(), "dimension_mismatch", "parameter vector length mismatch");
    theta_ = theta;
  }

  BasicNetwork with_params(const VectorS& theta) const {
    BasicNetwork copy = *this;
    copy.set_params(theta);
    return copy;
  }

  template <std::floating_point Other>
  BasicNetwork<Other> cast() const {
    return BasicNetwork<Other>(topology_, theta_.template cast<Other>());
  }

  /// Outputs for every row of X (rows are samples).
  VectorS forward_batch(const MatrixS& X) const { return forward_pass(X).output; }

  Scalar forward(const VectorS& x) const {
    MatrixS row = x.transpose();
    return forward_batch(row)[0];
  }

  ForwardPass forward_pass(const MatrixS& X) const {
    require(static_cast<std::size_t>(X.cols()) == input_dim(), "dimension_mismatch",
            "input has " + std::to_string(X.cols()) + " columns, network expects " +
                std::to_string(input_dim()));
    const std::size_t depth = topology_.depth();
    ForwardPass pass;
    pass.inputs.resize(depth);
    pass.pre.resize(depth - 1);
    pass.inputs[0] = X.transpose();
    for (std::size_t l = 0; l < depth; ++l) {
      MatrixS z = weights(l) * pass.inputs[l];
      z.colwise() += bias(l);
      if (l + 1 == depth) {
        pass.output = z.row(0).transpose();
        break;
      }
      MatrixS h = topology_.activation.apply(z);
      if (topology_.has_skip(l)) h += pass.inputs[l];
      pass.pre[l] = std::move(z);
      pass.inputs[l + 1] = std::move(h);
    }
    return pass;
  }

  /// Sum over samples of coeffs[i] * grad f(X^i), i.e. the Jacobian times
  /// coeffs, without forming the Jacobian.
  VectorS weighted_gradient(const ForwardPass& pass, const VectorS& coeffs) const {
    const std::size_t depth = topology_.depth();
    require(coeffs.size() == pass.output.size(), "dimension_mismatch", "coefficient count mismatch");
    VectorS grad(theta_.size());
    MatrixS delta = coeffs.transpose();  // 1 x M
    MatrixS upstream;
    for (std::size_t l = depth; l-- > 0;) {
      if (l + 1 < depth) {
        const MatrixS& z = pass.pre[l];
        delta = upstream.cwiseProduct(topology_.activation.apply_derivative(z));
      }
      const auto& shape = topology_.layers[l];
      const std::size_t off = topology_.offset(l);
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
          grad.data() + off, shape.fan_out, shape.fan_in);
      gw.noalias() = delta * pass.inputs[l].transpose();
      grad.segment(Eigen::Index(off + std::size_t(shape.fan_in) * shape.fan_out), shape.fan_out) =
          delta.rowwise().sum();
      if (l == 0) break;
      MatrixS next = weights(l).transpose() * delta;
      if (topology_.has_skip(l)) next += upstream;
      upstream = std::move(next);
    }
    return grad;
  }

  VectorS weighted_gradient(const MatrixS& X, const VectorS& coeffs) const {
    return weighted_gradient(forward_pass(X), coeffs);
  }

  /// Exact gradient of the scalar output with respect to every parameter.
  VectorS grad_sample(const VectorS& x) const {
    require(static_cast<std::size_t>(x.size()) == input_dim(), "dimension_mismatch",
            "sample dimension does not match network input");
    MatrixS row = x.transpose();
    const ForwardPass pass = forward_pass(row);
    for (const auto& h : pass.inputs)
      require(h.allFinite(), "non_finite", "non-finite activation during gradient evaluation");
    require(pass.output.allFinite(), "non_finite", "non-finite network output");
    VectorS g = weighted_gradient(pass, VectorS::Ones(1));
    require(g.allFinite(), "non_finite", "non-finite gradient");
    return g;
  }

  /// |theta| x N matrix whose column i is grad_sample(X^i). Columns are
  /// computed independently, so the result does not depend on threading.
  MatrixS jacobian(const MatrixS& X) const {
    require(static_cast<std::size_t>(X.cols()) == input_dim(), "dimension_mismatch",
            "input dimension does not match network");
    MatrixS A(theta_.size(), X.rows());
    parallel_for(static_cast<std::size_t>(X.rows()), [&](std::size_t i) {
      A.col(Eigen::Index(i)) = grad_sample(X.row(Eigen::Index(i)).transpose());
    });
    return A;
  }

 private:
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> weights(
      std::size_t l) const {
    const auto& shape = topology_.layers[l];
    return {theta_.data() + topology_.offset(l), shape.fan_out, shape.fan_in};
  }

  Eigen::Map<const VectorS> bias(std::size_t l) const {
    const auto& shape = topology_.layers[l];
    return {theta_.data() + topology_.offset(l) + std::size_t(shape.fan_in) * shape.fan_out,
            shape.fan_out};
  }

  Topology topology_;
  VectorS theta_;
};

using Network = BasicNetwork<double>;
using NetworkF32 = BasicNetwork<float>;

}  // namespace kernelscope::nn
