// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/dynamics.hpp"
#include "kernelscope/nn/optimizer.hpp"
#include "kernelscope/spectral.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kernelscope::alignment {

using spectral::SpectrumSnapshot;

enum class Target { Labels, Output, Residual, Differential, Custom };

inline std::string target_name(Target t) {
  switch (t) {
    case Target::Labels: return "labels";
    case Target::Output: return "output";
    case Target::Residual: return "residual";
    case Target::Differential: return "differential";
    case Target::Custom: return "custom";
  }
  return "custom";
}

inline Target parse_target(const std::string& s) {
  if (s == "labels") return Target::Labels;
  if (s == "output") return Target::Output;
  if (s == "residual") return Target::Residual;
  if (s == "differential") return Target::Differential;
  if (s == "custom") return Target::Custom;
  throw Error("config", "unknown alignment target '" + s + "'");
}

inline std::vector<std::size_t> default_k_grid(std::size_t n) {
  std::vector<std::size_t> ks;
  for (std::size_t k : {5, 10, 20, 50, 100, 200, 400})
    if (k <= n) ks.push_back(k);
  if (ks.empty() && n > 0) ks.push_back(n);
  return ks;
}

/// Squared projections <v_i, phi>^2 onto every eigenvector; they sum to |phi|^2.
inline Vector spectral_projection(const Vector& phi, const SpectrumSnapshot& spec) {
  require(std::size_t(phi.size()) == spec.size(), "dimension_mismatch", "vector length differs from spectrum size");
  return (spec.eigenvectors.transpose() * phi).cwiseAbs2();
}

/// Fraction of |phi|^2 inside the span of the top-k eigenvectors.
inline double relative_energy(const Vector& phi, const SpectrumSnapshot& spec, std::size_t k) {
  require(std::size_t(phi.size()) == spec.size(), "dimension_mismatch", "vector length differs from spectrum size");
  require(k >= 1 && k <= spec.size(), "invalid_argument", "k must lie in [1, N]");
  const double norm2 = phi.squaredNorm();
  require(norm2 > 0.0, "zero_vector", "relative energy of a zero vector is undefined");
  return (spec.eigenvectors.leftCols(Eigen::Index(k)).transpose() * phi).squaredNorm() / norm2;
}

/// Energy at every k in one pass (cumulative sums of the projections).
inline std::vector<double> relative_energy_curve(const Vector& phi, const SpectrumSnapshot& spec,
                                                 const std::vector<std::size_t>& ks) {
  const double norm2 = phi.squaredNorm();
  require(norm2 > 0.0, "zero_vector", "relative energy of a zero vector is undefined");
  const Vector proj = spectral_projection(phi, spec);
  std::vector<double> out;
  for (std::size_t k : ks) {
    require(k >= 1 && k <= spec.size(), "invalid_argument", "k must lie in [1, N]");
    out.push_back(proj.head(Eigen::Index(k)).sum() / norm2);
  }
  return out;
}

struct AlignmentRecord {
  Step t = 0;
  Target target = Target::Labels;
  std::size_t k = 0;
  double energy = 0.0;
  bool degenerate = false;  // zero target vector; energy is NaN
};

/// State at one checkpoint together with its spectrum.
struct AlignmentInput {
  Step t = 0;
  const SpectrumSnapshot* spectrum = nullptr;
  Vector outputs;
  Vector residual;
  double delta = 0.0;
};

/// E_t(phi, k) for the requested targets and k at every input step. The
/// differential target uses the first-order step -(delta/N) G m.
inline std::vector<AlignmentRecord> alignment_trace(const std::vector<AlignmentInput>& inputs, const Vector& labels,
                                                    const std::vector<Target>& targets,
                                                    const std::vector<std::size_t>& ks) {
  std::vector<AlignmentRecord> out;
  for (const auto& in : inputs) {
    require(in.spectrum != nullptr, "missing_checkpoint", "no spectrum for step " + std::to_string(in.t));
    const SpectrumSnapshot& spec = *in.spectrum;
    for (Target target : targets) {
      Vector phi;
      switch (target) {
        case Target::Labels: phi = labels; break;
        case Target::Output: phi = in.outputs; break;
        case Target::Residual: phi = in.residual; break;
        case Target::Differential:
          phi = -(in.delta / double(spec.size())) * spec.apply(in.residual);
          break;
        case Target::Custom: throw Error("invalid_argument", "custom targets go through relative_energy directly");
      }
      if (phi.squaredNorm() == 0.0) {
        for (std::size_t k : ks) out.push_back({in.t, target, k, std::nan(""), true});
        continue;
      }
      const auto energies = relative_energy_curve(phi, spec, ks);
      for (std::size_t j = 0; j < ks.size(); ++j) out.push_back({in.t, target, ks[j], energies[j], false});
    }
  }
  return out;
}

struct PreservationRecord {
  Step t_ref = 0;
  Step t_probe = 0;
  std::size_t mode = 0;  // zero-based
  std::size_t k = 0;
  double energy = 0.0;
};

/// Energy of probe eigenvector i within the top-k of the reference spectrum.
inline std::vector<PreservationRecord> spectrum_preservation(const SpectrumSnapshot& ref,
                                                             const SpectrumSnapshot& probe, std::size_t i,
                                                             const std::vector<std::size_t>& ks) {
  require(ref.size() == probe.size(), "dimension_mismatch", "spectra cover different point counts");
  require(i < probe.size(), "invalid_argument", "mode index out of range");
  const Vector phi = probe.mode(i);
  const auto energies = relative_energy_curve(phi, ref, ks);
  std::vector<PreservationRecord> out;
  for (std::size_t j = 0; j < ks.size(); ++j) out.push_back({ref.t, probe.t, i, ks[j], energies[j]});
  return out;
}

struct TrendRow {
  Step t = 0;
  std::size_t mode = 0;  // zero-based
  double lambda = 0.0;
  double dl_over_n = 0.0;  // delta_t lambda / N
  double speed = 0.0;      // 1 - |1 - delta_t lambda / N|
  double bound = 0.0;      // 2N / lambda_max
  bool decayed = false;    // learning rate dropped since the previous row's step
};

inline std::vector<TrendRow> eigenvalue_trends(const std::vector<const SpectrumSnapshot*>& spectra,
                                               const nn::Schedule& schedule, const std::vector<std::size_t>& modes) {
  std::vector<TrendRow> out;
  std::optional<Step> previous;
  for (const SpectrumSnapshot* spec : spectra) {
    require(spec != nullptr, "invalid_argument", "null spectrum");
    const std::size_t n = spec->size();
    const double delta = schedule.rate(spec->t);
    const bool decayed = previous && schedule.rate(*previous) > delta;
    const double bound = dynamics::stability_bound(*spec, n);
    for (std::size_t i : modes) {
      if (i >= n) continue;
      const double lambda = spec->eigenvalues[Eigen::Index(i)];
      out.push_back({spec->t, i, lambda, delta * lambda / double(n), dynamics::info_speed(lambda, delta, n), bound,
                     decayed});
    }
    previous = spec->t;
  }
  return out;
}

inline std::string encode_alignment_csv(const std::vector<AlignmentRecord>& records) {
  std::string out = "t,target,k,energy\n";
  for (const auto& r : records)
    out += std::to_string(r.t) + ',' + target_name(r.target) + ',' + std::to_string(r.k) + ',' +
           (r.degenerate ? std::string("nan") : format_double(r.energy)) + '\n';
  return out;
}

inline std::string encode_preservation_csv(const std::vector<PreservationRecord>& records) {
  std::string out = "t_ref,t_probe,i,k,energy\n";
  for (const auto& r : records)
    out += std::to_string(r.t_ref) + ',' + std::to_string(r.t_probe) + ',' + std::to_string(r.mode + 1) + ',' +
           std::to_string(r.k) + ',' + format_double(r.energy) + '\n';
  return out;
}

inline std::string encode_trends_csv(const std::vector<TrendRow>& rows) {
  std::string out = "t,i,lambda,dl_over_n,speed,bound\n";
  for (const auto& r : rows)
    out += std::to_string(r.t) + ',' + std::to_string(r.mode + 1) + ',' + format_double(r.lambda) + ',' +
           format_double(r.dl_over_n) + ',' + format_double(r.speed) + ',' + format_double(r.bound) +
           '\n';
  return out;
}

}  // namespace kernelscope::alignment
