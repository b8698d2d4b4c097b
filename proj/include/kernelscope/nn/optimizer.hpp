// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/nn/dataset.hpp"
#include "kernelscope/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace kernelscope::nn {

/// Step-decayed learning rate: delta0 * decay_factor^floor(t / decay_interval).
struct Schedule {
  double delta0 = 0.25;
  double decay_factor = 0.5;
  Step decay_interval = 20000;
  Step total_steps = 60000;

  double rate(Step t) const {
    return delta0 * std::pow(decay_factor, double(t / decay_interval));
  }

  /// True when the rate used at step t is lower than at step t - 1.
  bool decays_at(Step t) const {
    return decay_factor < 1.0 && t > 0 && t % decay_interval == 0;
  }

  std::vector<Step> decay_steps() const {
    std::vector<Step> out;
    if (decay_factor >= 1.0) return out;
    for (Step t = decay_interval; t < total_steps; t += decay_interval) out.push_back(t);
    return out;
  }

  void validate() const {
    require(delta0 > 0.0 && std::isfinite(delta0), "config", "delta0 must be positive");
    require(decay_factor > 0.0 && decay_factor <= 1.0, "config", "decay_factor must lie in (0, 1]");
    require(decay_interval > 0, "config", "decay_interval must be positive");
  }
};

struct FullBatchGD {};
struct SGD {
  std::size_t batch_size = 32;
};
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerKind = std::variant<FullBatchGD, SGD, Adam>;

struct OptimizerConfig {
  OptimizerKind kind = FullBatchGD{};
  Schedule schedule{};
  std::uint64_t seed = 0;  // minibatch sampling

  bool is_full_batch_gd() const { return std::holds_alternative<FullBatchGD>(kind); }

  std::string name() const {
    if (std::holds_alternative<SGD>(kind)) return "sgd";
    if (std::holds_alternative<Adam>(kind)) return "adam";
    return "gd";
  }

  void validate(std::size_t n) const {
    schedule.validate();
    if (const auto* sgd = std::get_if<SGD>(&kind))
      require(sgd->batch_size >= 1 && sgd->batch_size <= n, "config", "batch_size must lie in [1, N]");
    if (const auto* adam = std::get_if<Adam>(&kind)) {
      require(adam->beta1 >= 0.0 && adam->beta1 < 1.0, "config", "beta1 must lie in [0, 1)");
      require(adam->beta2 >= 0.0 && adam->beta2 < 1.0, "config", "beta2 must lie in [0, 1)");
      require(adam->eps > 0.0, "config", "eps must be positive");
    }
  }
};

template <typename M>
concept CachesForwardPass = requires(const M& m, const typename M::MatrixS& X) {
  m.forward_pass(X);
  m.weighted_gradient(m.forward_pass(X), typename M::VectorS{});
};

/// Gradient of the L2 loss over the given rows, with one forward pass.
template <DifferentiableModel M>
typename M::VectorS batch_loss_gradient(const M& model, const typename M::MatrixS& X,
                                        const typename M::VectorS& y) {
  using Scalar = typename M::scalar_type;
  const Scalar inv_n = Scalar(1) / Scalar(X.rows());
  if constexpr (CachesForwardPass<M>) {
    const auto pass = model.forward_pass(X);
    return model.weighted_gradient(pass, typename M::VectorS(pass.output - y)) * inv_n;
  } else {
    const typename M::VectorS residual = model.forward_batch(X) - y;
    return model.weighted_gradient(X, residual) * inv_n;
  }
}

/// One plain gradient step theta <- theta - delta_t * grad L on the given
/// batch; the stateless form of the update used by FullBatchGD and SGD.
template <DifferentiableModel M>
void train_step(M& model, const typename M::MatrixS& X, const typename M::VectorS& y, double delta) {
  using Scalar = typename M::scalar_type;
  const typename M::VectorS grad = batch_loss_gradient(model, X, y);
  require(grad.allFinite(), "diverged", "non-finite gradient");
  typename M::VectorS next = model.params() - Scalar(delta) * grad;
  require(next.allFinite(), "diverged", "non-finite parameter update");
  model.set_params(next);
}

/// Stateful optimizer: carries Adam moments and the minibatch generator.
template <DifferentiableModel M>
class Optimizer {
 public:
  using Scalar = typename M::scalar_type;
  using VectorS = typename M::VectorS;
  using MatrixS = typename M::MatrixS;

  Optimizer(OptimizerConfig config, const Dataset& data)
      : config_(std::move(config)),
        X_(data.inputs.cast<Scalar>()),
        y_(data.labels.cast<Scalar>()),
        rng_(config_.seed) {
    config_.validate(data.size());
  }

  const OptimizerConfig& config() const { return config_; }

  /// Applies the update for step t, using rate schedule.rate(t).
  void step(M& model, Step t) {
    const double delta = config_.schedule.rate(t);
    if (std::holds_alternative<FullBatchGD>(config_.kind)) {
      train_step(model, X_, y_, delta);
    } else if (const auto* sgd = std::get_if<SGD>(&config_.kind)) {
      draw_batch(sgd->batch_size);
      train_step(model, batch_X_, batch_y_, delta);
    } else {
      adam_step(model, std::get<Adam>(config_.kind), delta);
    }
  }

 private:
  void draw_batch(std::size_t batch) {
    if (order_.empty()) {
      order_.resize(std::size_t(X_.rows()));
      std::iota(order_.begin(), order_.end(), std::size_t{0});
    }
    // Partial Fisher-Yates: the first `batch` slots become a uniform sample.
    for (std::size_t i = 0; i < batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order_.size() - 1);
      std::swap(order_[i], order_[pick(rng_)]);
    }
    batch_X_.resize(Eigen::Index(batch), X_.cols());
    batch_y_.resize(Eigen::Index(batch));
    for (std::size_t i = 0; i < batch; ++i) {
      batch_X_.row(Eigen::Index(i)) = X_.row(Eigen::Index(order_[i]));
      batch_y_[Eigen::Index(i)] = y_[Eigen::Index(order_[i])];
    }
  }

  void adam_step(M& model, const Adam& adam, double delta) {
    const VectorS grad = batch_loss_gradient(model, X_, y_);
    require(grad.allFinite(), "diverged", "non-finite gradient");
    if (first_.size() == 0) {
      first_ = VectorS::Zero(grad.size());
      second_ = VectorS::Zero(grad.size());
    }
    ++adam_steps_;
    first_ = Scalar(adam.beta1) * first_ + Scalar(1 - adam.beta1) * grad;
    second_ = Scalar(adam.beta2) * second_ + Scalar(1 - adam.beta2) * grad.cwiseAbs2();
    const Scalar c1 = Scalar(1 - std::pow(adam.beta1, double(adam_steps_)));
    const Scalar c2 = Scalar(1 - std::pow(adam.beta2, double(adam_steps_)));
    const VectorS update =
        ((first_ / c1).array() / ((second_ / c2).array().sqrt() + Scalar(adam.eps))).matrix();
    VectorS next = model.params() - Scalar(delta) * update;
    require(next.allFinite(), "diverged", "non-finite parameter update");
    model.set_params(next);
  }

  OptimizerConfig config_;
  MatrixS X_;
  VectorS y_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  MatrixS batch_X_;
  VectorS batch_y_;
  VectorS first_;
  VectorS second_;
  std::uint64_t adam_steps_ = 0;
};

}  // namespace kernelscope::nn
