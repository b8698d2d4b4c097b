// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/binary_io.hpp"
#include "kernelscope/common.hpp"
#include "kernelscope/nn/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace kernelscope::spectral {

/// Eigenvalues below this fraction of lambda_max count as zero.
inline constexpr double kZeroEigenvalueRatio = 1e-10;

/// Gramian G(i, j) = g_t(X^i, X^j) = A^T A over the training points.
struct Gramian {
  Step t = 0;
  Matrix G;

  std::size_t size() const { return std::size_t(G.rows()); }
};

/// Eigenpairs of a Gramian, eigenvalues descending, eigenvectors in the
/// columns with their largest-magnitude entry positive.
struct SpectrumSnapshot {
  Step t = 0;
  Vector eigenvalues;
  Matrix eigenvectors;
  Vector kernel_eigenvalues;  // eigenvalues / N

  std::size_t size() const { return std::size_t(eigenvalues.size()); }
  double lambda_max() const { return eigenvalues.size() ? eigenvalues[0] : 0.0; }
  double lambda_min() const { return eigenvalues.size() ? eigenvalues[eigenvalues.size() - 1] : 0.0; }
  double zero_threshold() const { return kZeroEigenvalueRatio * lambda_max(); }

  /// Number of leading eigenvalues above the zero threshold.
  std::size_t nonzero_count() const {
    std::size_t n = 0;
    while (n < size() && eigenvalues[Eigen::Index(n)] > zero_threshold()) ++n;
    return n;
  }

  auto mode(std::size_t i) const { return eigenvectors.col(Eigen::Index(i)); }

  /// G m reconstructed from the eigenpairs.
  Vector apply(const Vector& m) const {
    return eigenvectors * (eigenvalues.asDiagonal() * (eigenvectors.transpose() * m));
  }
};

/// Row j holds g(X'_j, X^i) for every training point i.
struct CrossKernel {
  Matrix rows;
};

inline Gramian gramian(const Matrix& A, Step t = 0) {
  require(A.allFinite(), "non_finite", "Jacobian contains non-finite entries");
  Gramian g;
  g.t = t;
  g.G = Matrix::Zero(A.cols(), A.cols());
  g.G.selfadjointView<Eigen::Lower>().rankUpdate(A.transpose());
  g.G = g.G.selfadjointView<Eigen::Lower>();
  return g;
}

/// Full dense symmetric eigendecomposition. Small negative round-off
/// eigenvalues (|lambda| < 1e-10 lambda_max) are clamped to zero; clearly
/// negative ones are rejected as not positive semidefinite.
inline SpectrumSnapshot eig_sym(const Gramian& gram) {
  const Matrix& G = gram.G;
  require(G.rows() == G.cols(), "dimension_mismatch", "Gramian must be square");
  require(G.allFinite(), "non_finite", "Gramian contains non-finite entries");
  const double scale = G.cwiseAbs().maxCoeff();
  require(G.rows() == 0 || (G - G.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * std::max(scale, 1e-300), "invalid_argument",
          "Gramian is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(G);
  if (solver.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "eigendecomposition did not converge (n=" << G.rows() << ", max|G|=" << scale
        << ", trace=" << G.trace() << ")";
    throw Error("convergence", msg.str());
  }
  const Eigen::Index n = G.rows();
  SpectrumSnapshot s;
  s.t = gram.t;
  s.eigenvalues = solver.eigenvalues().reverse();
  s.eigenvectors = solver.eigenvectors().rowwise().reverse();
  const double lmax = n ? std::max(s.eigenvalues[0], 0.0) : 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double& l = s.eigenvalues[i];
    if (l < 0.0) {
      if (-l < kZeroEigenvalueRatio * lmax || (lmax == 0.0 && -l < 1e-300))
        l = 0.0;
      else if (-l > 1e-8 * lmax)
        throw Error("not_psd", "Gramian has eigenvalue " + std::to_string(l) + " with lambda_max " +
                                   std::to_string(lmax));
      else
        l = 0.0;
    }
    auto v = s.eigenvectors.col(i);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
  }
  s.kernel_eigenvalues = s.eigenvalues / double(std::max<Eigen::Index>(n, 1));
  return s;
}

/// FIM eigenvectors omega_i = A v_i / sqrt(lambda_i), the left singular
/// vectors of A, for the first k modes.
inline Matrix fim_eigvecs(const Matrix& A, const SpectrumSnapshot& spec, std::size_t k) {
  require(A.cols() == Eigen::Index(spec.size()), "dimension_mismatch", "Jacobian and spectrum sizes differ");
  require(k <= spec.size(), "invalid_argument", "requested more modes than available");
  const double threshold = spec.zero_threshold();
  Matrix omega(A.rows(), Eigen::Index(k));
  for (std::size_t i = 0; i < k; ++i) {
    const double l = spec.eigenvalues[Eigen::Index(i)];
    if (!(l > threshold) || l <= 0.0)
      throw Error("ill_conditioned", "mode " + std::to_string(i + 1) + " has a zero eigenvalue");
    omega.col(Eigen::Index(i)) = A * spec.mode(i) / std::sqrt(l);
  }
  return omega;
}

/// g(X'_j, X^i) = grad f(X'_j) . grad f(X^i).
template <nn::DifferentiableModel M>
CrossKernel cross_kernel(const M& model, const Matrix& test_inputs, const Matrix& train_inputs) {
  using Scalar = typename M::scalar_type;
  require(test_inputs.cols() == train_inputs.cols(), "dimension_mismatch", "test and train dimensions differ");
  const Matrix A = model.jacobian(train_inputs.cast<Scalar>()).template cast<double>();
  const Matrix B = model.jacobian(test_inputs.cast<Scalar>()).template cast<double>();
  return {B.transpose() * A};
}

/// Kernel eigenfunction i estimated at query points:
/// v~_i(X') = g(X', X) v_i / lambda_i.
inline Vector eigenfunction_extend(const CrossKernel& cross, const SpectrumSnapshot& spec, std::size_t i) {
  require(cross.rows.cols() == Eigen::Index(spec.size()), "dimension_mismatch",
          "cross kernel width differs from spectrum size");
  require(i < spec.size(), "invalid_argument", "mode index out of range");
  const double l = spec.eigenvalues[Eigen::Index(i)];
  if (!(l > spec.zero_threshold()) || l <= 0.0)
    throw Error("ill_conditioned", "ill-conditioned extension: mode " + std::to_string(i + 1) +
                                       " has eigenvalue " + std::to_string(l));
  return cross.rows * spec.mode(i) / l;
}

// Spectrum on disk: eigenvectors as a KSMAT container plus a JSON sidecar
// {"t", "N", "eigenvalues"}.
inline nlohmann::json spectrum_sidecar(const SpectrumSnapshot& s) {
  nlohmann::json j;
  j["t"] = s.t;
  j["N"] = s.size();
  j["eigenvalues"] = std::vector<double>(s.eigenvalues.data(), s.eigenvalues.data() + s.eigenvalues.size());
  return j;
}

inline void write_spectrum(const io::fs::path& matrix_path, const io::fs::path& sidecar_path,
                           const SpectrumSnapshot& s) {
  io::write_matrix(matrix_path, s.eigenvectors);
  io::write_file_atomic(sidecar_path, spectrum_sidecar(s).dump(1) + "\n");
}

inline SpectrumSnapshot read_spectrum(const io::fs::path& matrix_path, const io::fs::path& sidecar_path) {
  SpectrumSnapshot s;
  s.eigenvectors = io::read_matrix(matrix_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(sidecar_path));
    s.t = j.at("t").get<Step>();
    const auto values = j.at("eigenvalues").get<std::vector<double>>();
    s.eigenvalues = Eigen::Map<const Vector>(values.data(), Eigen::Index(values.size()));
    require(j.at("N").get<std::size_t>() == values.size(), "format", "sidecar N disagrees with eigenvalue count");
  } catch (const nlohmann::json::exception& e) {
    throw Error("format", sidecar_path.string() + ": " + e.what());
  }
  require(s.eigenvectors.rows() == s.eigenvalues.size() && s.eigenvectors.cols() == s.eigenvalues.size(),
          "format", "spectrum matrix and sidecar sizes differ");
  s.kernel_eigenvalues = s.eigenvalues / double(std::max<Eigen::Index>(s.eigenvalues.size(), 1));
  return s;
}

}  // namespace kernelscope::spectral
