// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernelscope/alignment.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace ks = kernelscope;
namespace al = kernelscope::alignment;
namespace sp = kernelscope::spectral;
using ks::Matrix;
using ks::Vector;

namespace {

sp::SpectrumSnapshot random_spectrum(Eigen::Index n, std::uint64_t seed, ks::Step t = 0) {
  const Matrix B = ks::testing::random_matrix(n, n, seed);
  return sp::eig_sym({t, B * B.transpose()});
}

// Spectrum with eigenvalues (5, 3, 3, 3, 1, 1) and a random orthonormal basis.
sp::SpectrumSnapshot clustered_spectrum(std::uint64_t seed) {
  const Matrix Q = Eigen::HouseholderQR<Matrix>(ks::testing::random_matrix(6, 6, seed)).householderQ();
  const Vector lambda{{5.0, 3.0, 3.0, 3.0, 1.0, 1.0}};
  return sp::eig_sym({0, Q * lambda.asDiagonal() * Q.transpose()});
}

}  // namespace

TEST(RelativeEnergy, BasisAndOrthogonalVectors) {
  const auto s = random_spectrum(8, 1);
  EXPECT_NEAR(al::relative_energy(s.mode(0), s, 1), 1.0, 1e-14);
  EXPECT_NEAR(al::relative_energy(s.mode(5), s, 3), 0.0, 1e-14);
  EXPECT_NEAR(al::relative_energy(s.mode(5), s, 6), 1.0, 1e-14);
}

TEST(RelativeEnergy, CompleteBasisAndMonotoneInK) {
  const auto s = random_spectrum(30, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Vector phi = ks::testing::random_vector(30, seed + 100);
    EXPECT_NEAR(al::relative_energy(phi, s, 30), 1.0, 1e-10);
    double prev = 0.0;
    for (std::size_t k = 1; k <= 30; ++k) {
      const double e = al::relative_energy(phi, s, k);
      EXPECT_GE(e, prev - 1e-15);
      EXPECT_LE(e, 1.0 + 1e-12);
      prev = e;
    }
    EXPECT_NEAR(al::relative_energy(-3.5 * phi, s, 7), al::relative_energy(phi, s, 7), 1e-14);
  }
}

TEST(RelativeEnergy, Errors) {
  const auto s = random_spectrum(4, 3);
  auto code = [&](const Vector& phi, std::size_t k) {
    try {
      al::relative_energy(phi, s, k);
    } catch (const ks::Error& e) {
      return e.code();
    }
    return std::string("none");
  };
  EXPECT_EQ(code(Vector::Zero(4), 2), "zero_vector");
  EXPECT_EQ(code(Vector::Ones(4), 0), "invalid_argument");
  EXPECT_EQ(code(Vector::Ones(4), 5), "invalid_argument");
  EXPECT_EQ(code(Vector::Ones(3), 2), "dimension_mismatch");
}

TEST(RelativeEnergy, InvariantToSignFlipsAndClusterRotations) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = clustered_spectrum(seed);
    const Vector phi = ks::testing::random_vector(6, seed + 50);
    auto t = s;
    for (Eigen::Index i = 0; i < 6; ++i)
      if (rng() % 2) t.eigenvectors.col(i) *= -1.0;
    const Matrix R = Eigen::HouseholderQR<Matrix>(ks::testing::random_matrix(3, 3, seed + 7)).householderQ();
    t.eigenvectors.middleCols(1, 3) = t.eigenvectors.middleCols(1, 3) * R;
    for (std::size_t k : {1u, 4u, 6u}) EXPECT_NEAR(al::relative_energy(phi, s, k), al::relative_energy(phi, t, k), 1e-12);
  }
}

TEST(SpectralProjection, BasisVectorAndParseval) {
  const auto s = random_spectrum(10, 4);
  const Vector e = al::spectral_projection(2.0 * s.mode(3), s);
  for (Eigen::Index j = 0; j < 10; ++j) EXPECT_NEAR(e[j], j == 3 ? 4.0 : 0.0, 1e-13);
  const Vector phi = ks::testing::random_vector(10, 9);
  EXPECT_NEAR(al::spectral_projection(phi, s).sum(), phi.squaredNorm(), 1e-10 * phi.squaredNorm());
}

TEST(EnergyCurve, MatchesPointwiseEnergy) {
  const auto s = random_spectrum(25, 5);
  const Vector phi = ks::testing::random_vector(25, 6);
  const auto ks_grid = al::default_k_grid(25);
  EXPECT_EQ(ks_grid, (std::vector<std::size_t>{5, 10, 20}));
  const auto curve = al::relative_energy_curve(phi, s, ks_grid);
  for (std::size_t j = 0; j < ks_grid.size(); ++j)
    EXPECT_NEAR(curve[j], al::relative_energy(phi, s, ks_grid[j]), 1e-13);
  EXPECT_EQ(al::default_k_grid(3), std::vector<std::size_t>{3});
  EXPECT_EQ(al::default_k_grid(1000).size(), 7u);
}

TEST(AlignmentTrace, TargetsAndDegenerateResidual) {
  const auto s = random_spectrum(6, 7, 12);
  const Vector y = ks::testing::random_vector(6, 1);
  al::AlignmentInput fitted{12, &s, y, Vector::Zero(6), 0.1};
  al::AlignmentInput moving{13, &s, ks::testing::random_vector(6, 2), ks::testing::random_vector(6, 3), 0.1};
  const std::vector<al::Target> targets{al::Target::Labels, al::Target::Output, al::Target::Residual,
                                        al::Target::Differential};
  const auto records = al::alignment_trace({fitted, moving}, y, targets, {1, 3});
  ASSERT_EQ(records.size(), 16u);
  for (const auto& r : records) {
    if (r.t == 12 && (r.target == al::Target::Residual || r.target == al::Target::Differential)) {
      EXPECT_TRUE(r.degenerate);
      EXPECT_TRUE(std::isnan(r.energy));
    } else {
      EXPECT_FALSE(r.degenerate);
    }
  }
  EXPECT_NEAR(records[1].energy, al::relative_energy(y, s, 3), 1e-14);
  const Vector df = ks::dynamics::first_order_step(s.eigenvectors * s.eigenvalues.asDiagonal() * s.eigenvectors.transpose(),
                                                   moving.residual, 0.1);
  EXPECT_NEAR(records[15].energy, al::relative_energy(df, s, 3), 1e-12);
  EXPECT_EQ(records[15].target, al::Target::Differential);
  const std::string csv = al::encode_alignment_csv(records);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,target,k,energy");
  EXPECT_NE(csv.find("12,residual,1,nan"), std::string::npos);
  al::AlignmentInput missing{14, nullptr, y, y, 0.1};
  EXPECT_THROW(al::alignment_trace({missing}, y, targets, {1}), ks::Error);
}

TEST(AlignmentTrace, TargetNames) {
  for (auto t : {al::Target::Labels, al::Target::Output, al::Target::Residual, al::Target::Differential,
                 al::Target::Custom})
    EXPECT_EQ(al::parse_target(al::target_name(t)), t);
  EXPECT_THROW(al::parse_target("loss"), ks::Error);
}

TEST(SpectrumPreservation, SelfComparisonIsAStep) {
  const auto s = random_spectrum(12, 8, 40);
  for (std::size_t i : {0u, 4u, 11u}) {
    std::vector<std::size_t> grid(12);
    for (std::size_t k = 0; k < 12; ++k) grid[k] = k + 1;
    const auto recs = al::spectrum_preservation(s, s, i, grid);
    for (const auto& r : recs) EXPECT_NEAR(r.energy, r.k >= i + 1 ? 1.0 : 0.0, 1e-12);
    EXPECT_EQ(recs[0].t_ref, 40u);
    EXPECT_EQ(recs[0].t_probe, 40u);
  }
}

TEST(SpectrumPreservation, PermutedModesLocateTheMode) {
  const auto s = random_spectrum(8, 9);
  auto permuted = s;
  permuted.t = 99;
  const std::vector<int> order{3, 0, 7, 1, 6, 2, 5, 4};
  for (int j = 0; j < 8; ++j) permuted.eigenvectors.col(j) = s.eigenvectors.col(order[std::size_t(j)]);
  // Probe mode 2 of s is column 5 of the permuted reference.
  const auto recs = al::spectrum_preservation(permuted, s, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  for (const auto& r : recs) EXPECT_NEAR(r.energy, r.k >= 6 ? 1.0 : 0.0, 1e-12);
  const std::string csv = al::encode_preservation_csv(recs);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t_ref,t_probe,i,k,energy");
  EXPECT_NE(csv.find("\n99,0,3,1,"), std::string::npos);
  EXPECT_THROW(al::spectrum_preservation(s, random_spectrum(7, 1), 0, {1}), ks::Error);
}

TEST(EigenvalueTrends, FlatForFrozenKernelAndConsistentRows) {
  const Matrix B = ks::testing::random_matrix(5, 10, 2);
  std::vector<sp::SpectrumSnapshot> spectra;
  for (ks::Step t : {0u, 50u, 100u, 150u}) spectra.push_back(sp::eig_sym(sp::gramian(B, t)));
  std::vector<const sp::SpectrumSnapshot*> ptrs;
  for (const auto& s : spectra) ptrs.push_back(&s);
  const ks::nn::Schedule schedule{0.1, 0.5, 100, 200};
  const auto rows = al::eigenvalue_trends(ptrs, schedule, {0, 1, 20});
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.lambda, spectra[0].eigenvalues[Eigen::Index(r.mode)]);
    EXPECT_EQ(r.speed, 1.0 - std::abs(1.0 - r.dl_over_n));
    EXPECT_EQ(r.dl_over_n, schedule.rate(r.t) * r.lambda / 10.0);
    EXPECT_EQ(r.bound, 20.0 / spectra[0].lambda_max());
    EXPECT_EQ(r.decayed, r.t == 100);
  }
  const std::string csv = al::encode_trends_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,i,lambda,dl_over_n,speed,bound");
  EXPECT_NE(csv.find("\n0,1,"), std::string::npos);
}
