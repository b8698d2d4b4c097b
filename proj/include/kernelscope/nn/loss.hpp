// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/nn/dataset.hpp"
#include "kernelscope/nn/model.hpp"

namespace kernelscope::nn {

/// L2 loss L = (1/N) sum 1/2 (f(X^i) - Y^i)^2 and its residual m = f - y.
struct LossEvaluation {
  double loss = 0.0;
  Vector outputs;
  Vector residual;
};

template <DifferentiableModel M>
LossEvaluation loss_and_residual(const M& model, const Dataset& data) {
  using Scalar = typename M::scalar_type;
  LossEvaluation eval;
  eval.outputs = model.forward_batch(data.inputs.cast<Scalar>()).template cast<double>();
  eval.residual = eval.outputs - data.labels;
  eval.loss = 0.5 * eval.residual.squaredNorm() / double(data.size());
  return eval;
}

/// grad L = (1/N) A m, assembled without forming A.
template <DifferentiableModel M>
Vector loss_gradient(const M& model, const Dataset& data, const Vector& residual) {
  using Scalar = typename M::scalar_type;
  require(std::size_t(residual.size()) == data.size(), "dimension_mismatch", "residual length mismatch");
  return model.weighted_gradient(data.inputs.cast<Scalar>(), residual.cast<Scalar>()).template cast<double>() /
         double(data.size());
}

}  // namespace kernelscope::nn
