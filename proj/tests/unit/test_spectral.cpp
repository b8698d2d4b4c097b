// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernelscope/nn/network.hpp"
#include "kernelscope/spectral.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace ks = kernelscope;
namespace sp = kernelscope::spectral;
using ks::Matrix;
using ks::Vector;

namespace {

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

void expect_snapshot_invariants(const Matrix& G, const sp::SpectrumSnapshot& s) {
  const auto n = G.rows();
  EXPECT_LT(max_abs(s.eigenvectors.transpose() * s.eigenvectors - Matrix::Identity(n, n)), 1e-8);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i > 0) {
      EXPECT_LE(s.eigenvalues[i], s.eigenvalues[i - 1]);
    }
    EXPECT_GE(s.eigenvalues[i], 0.0);
    EXPECT_LT((G * s.eigenvectors.col(i) - s.eigenvalues[i] * s.eigenvectors.col(i)).norm(),
              1e-7 * (s.lambda_max() + 1.0));
    Eigen::Index arg;
    s.eigenvectors.col(i).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(s.eigenvectors(arg, i), 0.0);
  }
  EXPECT_EQ(s.kernel_eigenvalues, s.eigenvalues / double(n));
}

ks::nn::Network tanh_net(std::size_t d, std::uint64_t seed) {
  return ks::nn::Network::init(ks::testing::small_config(d, {6, 5}, ks::nn::Activation::tanh()), seed);
}

}  // namespace

TEST(Gramian, IdentityJacobian) {
  const auto g = sp::gramian(Matrix::Identity(4, 4));
  EXPECT_EQ(g.G, Matrix::Identity(4, 4));
}

TEST(Gramian, TwoColumnExample) {
  const Matrix A{{1.0, 1.0}, {0.0, 1.0}};
  const auto g = sp::gramian(A, 7);
  EXPECT_EQ(g.t, 7u);
  EXPECT_EQ(g.G, (Matrix{{1.0, 1.0}, {1.0, 2.0}}));
}

TEST(Gramian, SymmetricAndPsd) {
  const Matrix A = ks::testing::random_matrix(13, 30, 4);
  const auto g = sp::gramian(A);
  EXPECT_EQ(g.G, g.G.transpose());
  const auto s = sp::eig_sym(g);
  EXPECT_GE(s.lambda_min(), -1e-8 * s.lambda_max());
}

TEST(Gramian, RejectsNonFinite) {
  Matrix A = Matrix::Ones(2, 2);
  A(0, 1) = NAN;
  EXPECT_THROW(sp::gramian(A), ks::Error);
}

TEST(Gramian, SharesNonzeroSpectrumWithFim) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix A = ks::testing::random_matrix(12, 20, seed);
    const auto s = sp::eig_sym(sp::gramian(A));
    Eigen::SelfAdjointEigenSolver<Matrix> fim(A * A.transpose());
    const Vector f = fim.eigenvalues().reverse();
    ASSERT_EQ(s.nonzero_count(), 12u);
    for (Eigen::Index i = 0; i < 12; ++i) EXPECT_LT(std::abs(s.eigenvalues[i] - f[i]) / f[i], 1e-8);
    for (Eigen::Index i = 12; i < 20; ++i) EXPECT_LT(s.eigenvalues[i], s.zero_threshold() + 1e-300);
  }
}

TEST(EigSym, Diagonal) {
  const auto s = sp::eig_sym({0, Matrix{{1.0, 0.0}, {0.0, 3.0}}});
  EXPECT_NEAR(s.eigenvalues[0], 3.0, 1e-15);
  EXPECT_NEAR(s.eigenvalues[1], 1.0, 1e-15);
  EXPECT_NEAR(s.mode(0)[1], 1.0, 1e-15);
  EXPECT_NEAR(s.mode(1)[0], 1.0, 1e-15);
}

TEST(EigSym, ClassicTwoByTwo) {
  const auto s = sp::eig_sym({0, Matrix{{2.0, 1.0}, {1.0, 2.0}}});
  EXPECT_NEAR(s.eigenvalues[0], 3.0, 1e-14);
  EXPECT_NEAR(s.eigenvalues[1], 1.0, 1e-14);
  EXPECT_NEAR(s.mode(0)[0], 1.0 / std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(s.mode(0)[1], 1.0 / std::sqrt(2.0), 1e-14);
}

TEST(EigSym, RandomPsdReconstruction) {
  const Matrix B = ks::testing::random_matrix(50, 50, 9);
  const Matrix G = B * B.transpose();
  const auto s = sp::eig_sym({0, G});
  expect_snapshot_invariants(G, s);
  const Matrix R = s.eigenvectors * s.eigenvalues.asDiagonal() * s.eigenvectors.transpose();
  EXPECT_LT(max_abs(R - G), 1e-9 * s.lambda_max());
  EXPECT_NEAR(s.lambda_max(), ks::testing::power_iteration(G), 1e-9 * s.lambda_max());
  const Vector m = ks::testing::random_vector(50, 3);
  EXPECT_LT((s.apply(m) - G * m).norm(), 1e-9 * s.lambda_max() * m.norm());
}

TEST(EigSym, ClampsRoundOffAndRejectsIndefinite) {
  const Matrix A = ks::testing::random_matrix(3, 8, 1);
  const auto s = sp::eig_sym(sp::gramian(A));
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) EXPECT_GE(s.eigenvalues[i], 0.0);
  EXPECT_EQ(s.nonzero_count(), 3u);
  try {
    sp::eig_sym({0, Matrix{{1.0, 0.0}, {0.0, -0.5}}});
    FAIL();
  } catch (const ks::Error& e) {
    EXPECT_EQ(e.code(), "not_psd");
  }
  EXPECT_THROW(sp::eig_sym({0, Matrix{{1.0, 0.5}, {0.0, 1.0}}}), ks::Error);
}

TEST(EigSym, SignConventionIsDeterministic) {
  const Matrix B = ks::testing::random_matrix(10, 10, 2);
  const Matrix G = B * B.transpose();
  const auto a = sp::eig_sym({0, G});
  const auto b = sp::eig_sym({0, G});
  EXPECT_EQ(a.eigenvectors, b.eigenvectors);
  expect_snapshot_invariants(G, a);
}

TEST(FimEigvecs, RankOne) {
  const Matrix a{{3.0}, {4.0}, {0.0}};
  const auto s = sp::eig_sym(sp::gramian(a));
  const Matrix omega = sp::fim_eigvecs(a, s, 1);
  EXPECT_NEAR(omega(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(omega(1, 0), 0.8, 1e-15);
}

TEST(FimEigvecs, OrthonormalAndEigenvectorsOfExplicitFim) {
  const Matrix A = ks::testing::random_matrix(60, 25, 7);
  const auto s = sp::eig_sym(sp::gramian(A));
  const Matrix omega = sp::fim_eigvecs(A, s, 25);
  EXPECT_LT(max_abs(omega.transpose() * omega - Matrix::Identity(25, 25)), 1e-7);
  const Matrix F = A * A.transpose();
  for (Eigen::Index i = 0; i < 25; ++i) {
    const Vector w = omega.col(i);
    EXPECT_LT((F * w - s.eigenvalues[i] * w).norm() / (s.eigenvalues[i] * w.norm()), 1e-7);
  }
}

TEST(FimEigvecs, RefusesZeroModes) {
  const Matrix A = ks::testing::random_matrix(2, 5, 7);
  const auto s = sp::eig_sym(sp::gramian(A));
  EXPECT_NO_THROW(sp::fim_eigvecs(A, s, 2));
  try {
    sp::fim_eigvecs(A, s, 3);
    FAIL();
  } catch (const ks::Error& e) {
    EXPECT_EQ(e.code(), "ill_conditioned");
  }
}

TEST(CrossKernel, SamePointsReproduceGramian) {
  const auto net = tanh_net(2, 3);
  const Matrix X = ks::testing::random_matrix(12, 2, 5);
  const auto g = sp::gramian(net.jacobian(X));
  const auto cross = sp::cross_kernel(net, X, X);
  EXPECT_LT(max_abs(cross.rows - g.G), 1e-12 * max_abs(g.G));
}

TEST(CrossKernel, LinearModelKernel) {
  const auto model = ks::nn::FeatureModel::identity(3);
  const Matrix Xtest{{1.0, 2.0, 3.0}};
  const Matrix Xtrain{{0.5, -1.0, 2.0}, {0.0, 0.0, 0.0}};
  const auto cross = sp::cross_kernel(model, Xtest, Xtrain);
  EXPECT_DOUBLE_EQ(cross.rows(0, 0), 0.5 - 2.0 + 6.0 + 1.0);
  EXPECT_DOUBLE_EQ(cross.rows(0, 1), 1.0);
}

TEST(CrossKernel, MatchesJointGramianBlock) {
  const auto net = tanh_net(2, 8);
  const Matrix X = ks::testing::random_matrix(9, 2, 1);
  const Matrix Xt = ks::testing::random_matrix(4, 2, 2);
  Matrix all(13, 2);
  all << X, Xt;
  const auto joint = sp::gramian(net.jacobian(all));
  const auto cross = sp::cross_kernel(net, Xt, X);
  EXPECT_LT(max_abs(cross.rows - joint.G.block(9, 0, 4, 9)), 1e-13 * max_abs(joint.G));
  EXPECT_THROW(sp::cross_kernel(net, Matrix::Ones(1, 3), X), ks::Error);
}

TEST(EigenfunctionExtend, ReproducesEigenvectorsAtTrainingPoints) {
  const auto net = tanh_net(2, 4);
  const Matrix X = ks::testing::random_matrix(15, 2, 6);
  const auto s = sp::eig_sym(sp::gramian(net.jacobian(X)));
  const auto cross = sp::cross_kernel(net, X, X);
  for (std::size_t i = 0; i < 5; ++i) {
    const Vector ext = sp::eigenfunction_extend(cross, s, i);
    EXPECT_LT((ext - s.mode(i)).norm(), 1e-8 * s.mode(i).norm()) << i;
  }
}

TEST(EigenfunctionExtend, ConstantKernel) {
  const std::size_t n = 6;
  sp::SpectrumSnapshot s = sp::eig_sym({0, Matrix::Constant(n, n, 2.0)});
  EXPECT_NEAR(s.lambda_max(), 12.0, 1e-12);
  EXPECT_NEAR(std::abs(s.mode(0).sum()), std::sqrt(double(n)), 1e-12);
  const sp::CrossKernel cross{Matrix::Constant(3, n, 2.0)};
  const Vector ext = sp::eigenfunction_extend(cross, s, 0);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(ext[j], 1.0 / std::sqrt(double(n)), 1e-12);
  try {
    sp::eigenfunction_extend(cross, s, 1);
    FAIL();
  } catch (const ks::Error& e) {
    EXPECT_EQ(e.code(), "ill_conditioned");
    EXPECT_NE(std::string(e.what()).find("ill-conditioned extension"), std::string::npos);
  }
}

TEST(EigenfunctionExtend, ContinuousOnDenseGrid) {
  const auto net = tanh_net(1, 11);
  const Matrix X = ks::testing::random_matrix(20, 1, 3);
  const auto s = sp::eig_sym(sp::gramian(net.jacobian(X)));
  const int cells = 400;
  const double h = 6.0 / cells;
  Matrix grid(cells + 1, 1);
  for (int c = 0; c <= cells; ++c) grid(c, 0) = -3.0 + h * c;
  const auto cross = sp::cross_kernel(net, grid, X);
  const Vector ext = sp::eigenfunction_extend(cross, s, 0);
  // Local Lipschitz bound: |d/dx g(x, X) v| / lambda at both cell ends, by finite differences on a finer step.
  std::vector<double> slope(cells + 1);
  for (int c = 0; c <= cells; ++c) {
    const Matrix probe{{grid(c, 0)}, {grid(c, 0) + h / 10}};
    const auto fine = sp::cross_kernel(net, probe, X);
    const Vector e = fine.rows * s.mode(0) / s.lambda_max();
    slope[c] = std::abs(e[1] - e[0]) / (h / 10);
  }
  for (int c = 0; c < cells; ++c)
    EXPECT_LE(std::abs(ext[c + 1] - ext[c]), 2.0 * std::max(slope[c], slope[c + 1]) * h + 1e-9) << c;
}

TEST(EigenfunctionExtend, LargestEigenvalueConvergesWithSampling) {
  // Analytic Gaussian kernel on uniform samples from [-1, 1]; lambda_1 / N
  // estimates an operator eigenvalue, so refinements should approach the 4N value.
  auto top = [](int n) {
    Matrix G(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double xi = -1.0 + 2.0 * (i + 0.5) / n, xj = -1.0 + 2.0 * (j + 0.5) / n;
        G(i, j) = std::exp(-(xi - xj) * (xi - xj));
      }
    return sp::eig_sym({0, G}).kernel_eigenvalues[0];
  };
  const double ref = top(400);
  double prev = std::abs(top(25) - ref);
  for (int n : {50, 100}) {
    const double gap = std::abs(top(n) - ref);
    EXPECT_LT(gap, prev);
    prev = gap;
  }
}

TEST(SpectrumFile, RoundTrip) {
  const Matrix B = ks::testing::random_matrix(6, 6, 1);
  auto s = sp::eig_sym({42, B * B.transpose()});
  const auto dir = std::filesystem::temp_directory_path() / ("kernelscope_sp_" + std::to_string(::getpid()));
  sp::write_spectrum(dir / "s.ksmat", dir / "s.json", s);
  const auto back = sp::read_spectrum(dir / "s.ksmat", dir / "s.json");
  EXPECT_EQ(back.t, 42u);
  EXPECT_EQ(back.eigenvalues, s.eigenvalues);
  EXPECT_EQ(back.eigenvectors, s.eigenvectors);
  EXPECT_EQ(back.kernel_eigenvalues, s.kernel_eigenvalues);
  ks::io::write_file_atomic(dir / "bad.json", "{\"t\": 1, \"N\": 5, \"eigenvalues\": [1,2,3,4,5]}");
  EXPECT_THROW(sp::read_spectrum(dir / "s.ksmat", dir / "bad.json"), ks::Error);
  ks::io::write_file_atomic(dir / "broken.json", "{\"t\": ");
  EXPECT_THROW(sp::read_spectrum(dir / "s.ksmat", dir / "broken.json"), ks::Error);
}
