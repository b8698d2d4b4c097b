// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/common.hpp"
#include "kernelscope/nn/dataset.hpp"
#include "kernelscope/nn/loss.hpp"
#include "kernelscope/nn/model.hpp"
#include "kernelscope/nn/training.hpp"
#include "kernelscope/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace kernelscope::dynamics {

using spectral::SpectrumSnapshot;

struct DynamicsState {
  Step t = 0;
  Vector outputs;
  Vector residual;
  double delta = 0.0;

  /// L2 residual consistency m_t = f_t - y.
  bool consistent_with(const Vector& labels, double tol = 1e-12) const {
    return labels.size() == outputs.size() &&
           (residual - (outputs - labels)).cwiseAbs().maxCoeff() <= tol * (1.0 + labels.cwiseAbs().maxCoeff());
  }
};

struct FirstOrderReport {
  Step t = 0;
  double error = 0.0;      // |df_true - df_pred| / |df_true|
  double cos_alpha = 1.0;  // cosine between df_true and df_pred
};

/// df = -(delta / N) G m.
inline Vector first_order_step(const Matrix& G, const Vector& m, double delta) {
  require(G.rows() == G.cols() && G.cols() == m.size(), "dimension_mismatch", "Gramian and residual sizes differ");
  return -(delta / double(m.size())) * (G * m);
}

inline FirstOrderReport compare_first_order(Step t, const Vector& actual, const Vector& predicted) {
  require(actual.size() == predicted.size(), "dimension_mismatch", "difference vectors differ in length");
  FirstOrderReport r;
  r.t = t;
  const double na = actual.norm();
  const double np = predicted.norm();
  const double gap = (actual - predicted).norm();
  if (na > 0.0) {
    r.error = gap / na;
  } else {
    r.error = np > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  if (na > 0.0 && np > 0.0)
    r.cos_alpha = std::clamp(actual.dot(predicted) / (na * np), -1.0, 1.0);
  else
    r.cos_alpha = (na == 0.0 && np == 0.0) ? 1.0 : 0.0;
  return r;
}

/// Compares the true one-step output change between checkpoints t and t+1
/// against -(delta_t/N) G_t m_t. Meaningful for full-batch GD traces.
template <nn::DifferentiableModel M>
FirstOrderReport verify_first_order(const nn::TrainingTrace<M>& trace, const nn::Dataset& data, Step t) {
  using Scalar = typename M::scalar_type;
  const auto& now = trace.require_step(t);
  const auto& next = trace.require_step(t + 1);
  const Matrix A = now.model.jacobian(data.inputs.cast<Scalar>()).template cast<double>();
  const Vector predicted = -(now.delta / double(data.size())) * (A.transpose() * (A * now.residual));
  return compare_first_order(t, next.outputs - now.outputs, predicted);
}

/// (1 - delta lambda / N)^t, evaluated as sign times |base|^t so large t
/// neither loses the sign nor overflows into NaN.
inline double mode_factor(double lambda, double delta, std::size_t n, Step t) {
  if (t == 0) return 1.0;
  const double base = 1.0 - delta * lambda / double(n);
  if (base == 0.0) return 0.0;
  const double sign = (base < 0.0 && (t % 2 == 1)) ? -1.0 : 1.0;
  return sign * std::pow(std::abs(base), double(t));
}

/// Frozen-kernel idealization of L2 gradient descent.
struct ConstantKernelModel {
  SpectrumSnapshot spectrum;
  Vector f0;
  Vector m0;
  Vector coefficients;  // <v_i, m0> for every mode
  Vector f0_coefficients;
  Vector m0_null;       // component of m0 in the (numerical) null space
  std::size_t retained = 0;  // N', modes with lambda above the zero threshold
  double delta = 0.0;

  std::size_t size() const { return std::size_t(f0.size()); }

  /// Per-mode decay factors (1 - delta lambda_i / N)^t of the retained modes.
  Vector factors(Step t) const {
    Vector r(static_cast<Eigen::Index>(retained));
    for (std::size_t i = 0; i < retained; ++i)
      r[Eigen::Index(i)] = mode_factor(spectrum.eigenvalues[Eigen::Index(i)], delta, size(), t);
    return r;
  }
};

inline ConstantKernelModel make_constant_kernel_model(SpectrumSnapshot spectrum, Vector f0, Vector m0,
                                                      double delta) {
  require(f0.size() == m0.size() && std::size_t(f0.size()) == spectrum.size(), "dimension_mismatch",
          "f0, m0 and spectrum sizes differ");
  ConstantKernelModel model;
  model.retained = spectrum.nonzero_count();
  model.coefficients = spectrum.eigenvectors.transpose() * m0;
  model.f0_coefficients = spectrum.eigenvectors.transpose() * f0;
  const Eigen::Index nz = Eigen::Index(model.retained);
  const Eigen::Index rest = Eigen::Index(spectrum.size()) - nz;
  model.m0_null = spectrum.eigenvectors.rightCols(rest) * model.coefficients.tail(rest);
  model.spectrum = std::move(spectrum);
  model.f0 = std::move(f0);
  model.m0 = std::move(m0);
  model.delta = delta;
  return model;
}

struct TrainPrediction {
  Vector outputs;
  Vector residual;
};

/// Closed-form f_t and m_t at the training points under a frozen kernel.
inline TrainPrediction closed_form_train(const ConstantKernelModel& model, Step t) {
  const Eigen::Index nz = Eigen::Index(model.retained);
  const Vector r = model.factors(t);
  const auto V = model.spectrum.eigenvectors.leftCols(nz);
  const Vector c = model.coefficients.head(nz);
  TrainPrediction p;
  p.residual = V * r.cwiseProduct(c) + model.m0_null;
  p.outputs = model.f0 - V * (Vector::Ones(nz) - r).cwiseProduct(c);
  return p;
}

struct ModeCoefficient {
  std::size_t mode = 0;  // zero-based
  double coef_m = 0.0;   // <v_i, m_t>
  double coef_f = 0.0;   // <v_i, f_t>
};

/// Per-mode projections of the closed-form trajectory at step t.
inline std::vector<ModeCoefficient> mode_coefficients(const ConstantKernelModel& model, Step t,
                                                      const std::vector<std::size_t>& modes) {
  std::vector<ModeCoefficient> out;
  for (std::size_t i : modes) {
    require(i < model.size(), "invalid_argument", "mode index out of range");
    const double c = model.coefficients[Eigen::Index(i)];
    const double r = i < model.retained
                         ? mode_factor(model.spectrum.eigenvalues[Eigen::Index(i)], model.delta, model.size(), t)
                         : 1.0;
    out.push_back({i, r * c, model.f0_coefficients[Eigen::Index(i)] - (1.0 - r) * c});
  }
  return out;
}

struct TestPrediction {
  Vector outputs;
  std::size_t skipped_modes = 0;  // zero-eigenvalue modes left out
};

/// Test-point trajectory through FIM eigenvectors:
/// f_t(X') = f_0(X') - sum_i [1 - r_i^t] <v_i, m0> <omega_i, grad f_0(X')> / sqrt(lambda_i).
class GradientTestPredictor {
 public:
  template <nn::DifferentiableModel M>
  GradientTestPredictor(const ConstantKernelModel& model, const M& net0, const Matrix& A0, const Matrix& test_inputs)
      : model_(&model) {
    using Scalar = typename M::scalar_type;
    const Eigen::Index nz = Eigen::Index(model.retained);
    require(A0.cols() == Eigen::Index(model.size()), "dimension_mismatch", "Jacobian width differs from N");
    const Matrix omega = spectral::fim_eigvecs(A0, model.spectrum, model.retained);
    const Matrix B = net0.jacobian(test_inputs.cast<Scalar>()).template cast<double>();
    projections_ = B.transpose() * omega;  // M x N'
    f0_ = net0.forward_batch(test_inputs.cast<Scalar>()).template cast<double>();
    inv_sqrt_lambda_ = model.spectrum.eigenvalues.head(nz).cwiseSqrt().cwiseInverse();
  }

  TestPrediction predict(Step t) const {
    const Eigen::Index nz = Eigen::Index(model_->retained);
    const Vector r = model_->factors(t);
    const Vector w = (Vector::Ones(nz) - r).cwiseProduct(model_->coefficients.head(nz)).cwiseProduct(inv_sqrt_lambda_);
    return {f0_ - projections_ * w, model_->size() - model_->retained};
  }

  const Vector& initial_outputs() const { return f0_; }

 private:
  const ConstantKernelModel* model_;
  Matrix projections_;
  Vector f0_;
  Vector inv_sqrt_lambda_;
};

template <nn::DifferentiableModel M>
TestPrediction closed_form_test_gradient(const ConstantKernelModel& model, const M& net0, const Matrix& A0,
                                         const Matrix& test_inputs, Step t) {
  return GradientTestPredictor(model, net0, A0, test_inputs).predict(t);
}

/// Test-point trajectory through extended kernel eigenfunctions:
/// f_t(X') = f_0(X') - sum_i [1 - r_i^t] <v_i, m0> v~_i(X').
/// With only_nonzero_coefficients, modes whose <v_i, m0> is exactly zero are
/// left out.
inline Vector closed_form_test_eigenfunction(const ConstantKernelModel& model, const spectral::CrossKernel& cross,
                                             const Vector& f0_test, Step t, bool only_nonzero_coefficients = false) {
  require(cross.rows.rows() == f0_test.size(), "dimension_mismatch", "cross kernel rows differ from test count");
  require(cross.rows.cols() == Eigen::Index(model.size()), "dimension_mismatch", "cross kernel width differs from N");
  const Eigen::Index nz = Eigen::Index(model.retained);
  const Vector r = model.factors(t);
  Vector w(nz);
  for (Eigen::Index i = 0; i < nz; ++i) {
    const double c = model.coefficients[i];
    w[i] = (only_nonzero_coefficients && c == 0.0) ? 0.0 : (1.0 - r[i]) * c / model.spectrum.eigenvalues[i];
  }
  // sum_i w_i * (g(X', X) v_i) equals g(X', X) (V w).
  return f0_test - cross.rows * (model.spectrum.eigenvectors.leftCols(nz) * w);
}

/// Information-flow speed 1 - |1 - delta lambda / N|.
inline double info_speed(double lambda, double delta, std::size_t n) {
  return 1.0 - std::abs(1.0 - delta * lambda / double(n));
}

/// Largest stable learning rate 2N / lambda_max (infinite for a zero kernel).
inline double stability_bound(const SpectrumSnapshot& spec, std::size_t n) {
  const double lmax = spec.lambda_max();
  return lmax > 0.0 ? 2.0 * double(n) / lmax : std::numeric_limits<double>::infinity();
}

template <nn::DifferentiableModel M>
double default_hvp_epsilon(const M& model) {
  return 1e-4 * (1.0 + double(model.params().cwiseAbs().maxCoeff()));
}

/// Model-Hessian-vector product H(X) v by central differences of exact
/// gradients: (grad f_{theta+eps v}(X) - grad f_{theta-eps v}(X)) / (2 eps).
template <nn::DifferentiableModel M>
Vector hvp(const M& model, const Vector& x, const Vector& v, double eps) {
  using Scalar = typename M::scalar_type;
  using VectorS = typename M::VectorS;
  require(eps > 0.0, "invalid_argument", "hvp step must be positive");
  require(std::size_t(v.size()) == model.num_params(), "dimension_mismatch", "direction length differs from |theta|");
  const VectorS theta = model.params();
  const VectorS step = (eps * v).cast<Scalar>();
  const VectorS xs = x.cast<Scalar>();
  const Vector plus = model.with_params(theta + step).grad_sample(xs).template cast<double>();
  const Vector minus = model.with_params(theta - step).grad_sample(xs).template cast<double>();
  Vector out = (plus - minus) / (2.0 * eps);
  require(out.allFinite(), "non_finite", "non-finite Hessian-vector product");
  return out;
}

/// First-order Gramian change dG = -(delta/N)(Q + Q^T), where column i of Q
/// is A^T H(X^i) A m.
template <nn::DifferentiableModel M>
Matrix gramian_differential(const M& model, const Matrix& inputs, const Matrix& A, const Vector& m, double delta,
                            double eps = -1.0) {
  const Eigen::Index n = inputs.rows();
  require(A.cols() == n && m.size() == n, "dimension_mismatch", "Jacobian, inputs and residual disagree");
  if (eps <= 0.0) eps = default_hvp_epsilon(model);
  const Vector direction = A * m;
  const double scale = direction.norm();
  Matrix W = Matrix::Zero(A.rows(), n);
  if (scale > 0.0) {
    const Vector unit = direction / scale;
    parallel_for(std::size_t(n), [&](std::size_t i) {
      W.col(Eigen::Index(i)) = scale * hvp(model, inputs.row(Eigen::Index(i)).transpose(), unit, eps);
    });
  }
  const Matrix Q = A.transpose() * W;
  return -(delta / double(n)) * (Q + Q.transpose());
}

struct DualityProbe {
  Vector measured;   // f(theta + eps sqrt(lambda_i) omega_i) - f(theta)
  Vector predicted;  // eps lambda_i v_i
  double relative_deviation = 0.0;
  double cross_talk = 0.0;  // max_{j != i} |<v_j, measured>| / |<v_i, measured>|
};

/// Moves theta along FIM eigenvector omega_i and checks that the training
/// outputs move along Gramian eigenvector v_i.
template <nn::DifferentiableModel M>
DualityProbe fim_duality_probe(const M& model, const Matrix& inputs, const Matrix& A, const SpectrumSnapshot& spec,
                               std::size_t i, double eps) {
  using Scalar = typename M::scalar_type;
  require(i < spec.size(), "invalid_argument", "mode index out of range");
  const double lambda = spec.eigenvalues[Eigen::Index(i)];
  const Matrix omega = spectral::fim_eigvecs(A, spec, i + 1);
  const typename M::MatrixS Xs = inputs.cast<Scalar>();
  const Vector base = model.forward_batch(Xs).template cast<double>();
  const typename M::VectorS shifted =
      model.params() + (eps * std::sqrt(lambda) * omega.col(Eigen::Index(i))).cast<Scalar>();
  DualityProbe probe;
  probe.measured = model.with_params(shifted).forward_batch(Xs).template cast<double>() - base;
  probe.predicted = eps * lambda * spec.mode(i);
  probe.relative_deviation = (probe.measured - probe.predicted).norm() / probe.predicted.norm();
  const Vector coords = spec.eigenvectors.transpose() * probe.measured;
  const double own = std::abs(coords[Eigen::Index(i)]);
  double other = 0.0;
  for (Eigen::Index j = 0; j < coords.size(); ++j)
    if (j != Eigen::Index(i)) other = std::max(other, std::abs(coords[j]));
  probe.cross_talk = own > 0.0 ? other / own : std::numeric_limits<double>::infinity();
  return probe;
}

/// Max absolute gap between (1/N) A m and its spectral form
/// (1/N) sum_i sqrt(lambda_i) <v_i, m> omega_i.
inline double loss_gradient_decomposition_check(const Matrix& A, const SpectrumSnapshot& spec, const Vector& m,
                                                std::size_t n) {
  require(A.cols() == m.size(), "dimension_mismatch", "Jacobian and residual sizes differ");
  const Vector direct = A * m / double(n);
  const std::size_t k = spec.nonzero_count();
  Vector spectral_sum = Vector::Zero(A.rows());
  if (k > 0) {
    const Matrix omega = spectral::fim_eigvecs(A, spec, k);
    for (std::size_t i = 0; i < k; ++i) {
      const double l = spec.eigenvalues[Eigen::Index(i)];
      spectral_sum += std::sqrt(l) * spec.mode(i).dot(m) * omega.col(Eigen::Index(i));
    }
    spectral_sum /= double(n);
  }
  return (direct - spectral_sum).cwiseAbs().maxCoeff();
}

/// Relative Frobenius gap between the loss Hessian (central differences of
/// the exact loss gradient) and F/N = A A^T / N.
template <nn::DifferentiableModel M>
double loss_hessian_relation_check(const M& model, const nn::Dataset& data, double eps) {
  using Scalar = typename M::scalar_type;
  const std::size_t p = model.num_params();
  require(p <= 4000, "invalid_argument", "explicit Hessian limited to |theta| <= 4000");
  require(eps > 0.0, "invalid_argument", "finite-difference step must be positive");
  const typename M::VectorS theta = model.params();
  Matrix H(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j) {
    typename M::VectorS shift = M::VectorS::Zero(theta.size());
    shift[Eigen::Index(j)] = Scalar(eps);
    const M up = model.with_params(theta + shift);
    const M down = model.with_params(theta - shift);
    const Vector gu = nn::loss_gradient(up, data, nn::loss_and_residual(up, data).residual);
    const Vector gd = nn::loss_gradient(down, data, nn::loss_and_residual(down, data).residual);
    H.col(Eigen::Index(j)) = (gu - gd) / (2.0 * eps);
  }
  const Matrix Hs = 0.5 * (H + H.transpose());
  const Matrix A = model.jacobian(data.inputs.cast<Scalar>()).template cast<double>();
  const Matrix F = A * A.transpose() / double(data.size());
  return (Hs - F).norm() / F.norm();
}

}  // namespace kernelscope::dynamics
