// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/common.hpp"

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>

namespace kernelscope::nn {

/// A scalar-output model with a flat parameter vector and exact
/// per-sample parameter gradients. Inputs are matrices with one sample
/// per row.
template <typename M>
concept DifferentiableModel = requires(const M& m, M& mut, const typename M::VectorS& v,
                                       const typename M::MatrixS& X) {
  typename M::scalar_type;
  { m.num_params() } -> std::convertible_to<std::size_t>;
  { m.input_dim() } -> std::convertible_to<std::size_t>;
  { m.params() } -> std::convertible_to<typename M::VectorS>;
  { m.with_params(v) } -> std::same_as<M>;
  { mut.set_params(v) };
  { m.forward_batch(X) } -> std::convertible_to<typename M::VectorS>;
  { m.grad_sample(v) } -> std::convertible_to<typename M::VectorS>;
  { m.jacobian(X) } -> std::convertible_to<typename M::MatrixS>;
  { m.weighted_gradient(X, v) } -> std::convertible_to<typename M::VectorS>;
};

/// Model that is linear in its parameters: f(x) = w . phi(x) + b with a
/// frozen feature map phi. Its gradient does not depend on the parameters,
/// so its kernel stays constant under any training.
class FeatureModel {
 public:
  using scalar_type = double;
  using VectorS = Vector;
  using MatrixS = Matrix;

  /// phi(x) = x.
  static FeatureModel identity(std::size_t input_dim) {
    FeatureModel m;
    m.input_dim_ = input_dim;
    m.theta_ = Vector::Zero(Eigen::Index(input_dim + 1));
    return m;
  }

  /// phi(x) = tanh(U x + c) with U, c drawn once from N(0, 1) and frozen.
  static FeatureModel random(std::size_t input_dim, std::size_t width, std::uint64_t seed) {
    FeatureModel m;
    m.input_dim_ = input_dim;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    m.projection_ = Matrix(Eigen::Index(width), Eigen::Index(input_dim));
    m.offset_ = Vector(Eigen::Index(width));
    for (Eigen::Index i = 0; i < m.projection_.size(); ++i) m.projection_.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < m.offset_.size(); ++i) m.offset_[i] = normal(rng);
    m.theta_ = Vector(Eigen::Index(width + 1));
    const double scale = 1.0 / std::sqrt(double(width));
    for (Eigen::Index i = 0; i < m.theta_.size() - 1; ++i) m.theta_[i] = scale * normal(rng);
    m.theta_[m.theta_.size() - 1] = 0.0;
    return m;
  }

  std::size_t num_params() const { return std::size_t(theta_.size()); }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t feature_dim() const { return num_params() - 1; }
  const Vector& params() const { return theta_; }

  void set_params(const Vector& theta) {
    require(theta.size() == theta_.size(), "dimension_mismatch", "parameter vector length mismatch");
    theta_ = theta;
  }

  FeatureModel with_params(const Vector& theta) const {
    FeatureModel copy = *this;
    copy.set_params(theta);
    return copy;
  }

  /// N x (features + 1) design matrix, last column all ones.
  Matrix design(const Matrix& X) const {
    require(std::size_t(X.cols()) == input_dim_, "dimension_mismatch", "input dimension mismatch");
    Matrix D(X.rows(), theta_.size());
    if (projection_.size() == 0) {
      D.leftCols(X.cols()) = X;
    } else {
      Matrix z = X * projection_.transpose();
      z.rowwise() += offset_.transpose();
      D.leftCols(z.cols()) = z.array().tanh().matrix();
    }
    D.col(D.cols() - 1).setOnes();
    return D;
  }

  Vector forward_batch(const Matrix& X) const { return design(X) * theta_; }
  Vector grad_sample(const Vector& x) const { return design(x.transpose()).row(0).transpose(); }
  Matrix jacobian(const Matrix& X) const { return design(X).transpose(); }
  Vector weighted_gradient(const Matrix& X, const Vector& coeffs) const {
    return design(X).transpose() * coeffs;
  }

 private:
  std::size_t input_dim_ = 0;
  Matrix projection_;
  Vector offset_;
  Vector theta_;
};

}  // namespace kernelscope::nn
