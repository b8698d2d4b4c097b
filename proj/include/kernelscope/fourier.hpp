// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/binary_io.hpp"
#include "kernelscope/common.hpp"

#include <json.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

namespace kernelscope::fourier {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

/// Frequencies -extent..extent per axis in `resolution` evenly spaced steps.
/// The default gives integer frequencies on [-40, 40].
struct GridSpec {
  double extent = 40.0;
  std::size_t resolution = 81;

  std::vector<double> axis() const {
    std::vector<double> out(resolution);
    for (std::size_t j = 0; j < resolution; ++j)
      out[j] = resolution == 1 ? 0.0 : -extent + 2.0 * extent * double(j) / double(resolution - 1);
    return out;
  }

  void validate() const {
    require(extent >= 0.0 && std::isfinite(extent), "config", "frequency extent must be finite and non-negative");
    require(resolution >= 1, "config", "frequency resolution must be positive");
  }
};

/// Sampled transform on a d-dimensional frequency grid. Cell (j_1, ..., j_d)
/// is stored row-major, first axis slowest.
struct FrequencyGrid {
  GridSpec spec;
  std::size_t dim = 0;
  std::vector<double> axis;
  std::vector<Complex> values;
  std::vector<double> magnitudes;

  std::size_t cells() const { return magnitudes.size(); }

  std::vector<double> frequency(std::size_t cell) const {
    std::vector<double> xi(dim);
    const std::size_t res = spec.resolution;
    for (std::size_t a = dim; a-- > 0;) {
      xi[a] = axis[cell % res];
      cell /= res;
    }
    return xi;
  }

  std::size_t cell_of(const std::vector<std::size_t>& index) const {
    std::size_t cell = 0;
    for (std::size_t j : index) cell = cell * spec.resolution + j;
    return cell;
  }

  /// Magnitudes reshaped to res^(d-1) rows by res columns.
  Matrix magnitude_matrix() const {
    const Eigen::Index res = Eigen::Index(spec.resolution);
    Matrix m(Eigen::Index(cells()) / res, res);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < res; ++c) m(r, c) = magnitudes[std::size_t(r * res + c)];
    return m;
  }
};

/// phi^(xi) = (1/N) sum_k phi_k exp(-2 pi i <xi, X^k>), by direct summation
/// over the samples. The exponential factorizes per axis, so each axis
/// contributes an N x res table and the grid is assembled by products.
inline FrequencyGrid sampled_ft(const Vector& phi, const Matrix& points, const GridSpec& spec = {}) {
  spec.validate();
  require(phi.size() == points.rows(), "dimension_mismatch", "sample values and points differ in count");
  require(points.cols() >= 1 && points.cols() <= 3, "dimension_mismatch", "grid output supports 1 <= d <= 3");
  require(phi.allFinite() && points.allFinite(), "non_finite", "non-finite Fourier input");
  require(phi.size() > 0, "invalid_argument", "no samples");
  const Eigen::Index n = phi.size();
  const std::size_t d = std::size_t(points.cols());
  const std::vector<double> axis = spec.axis();
  const Eigen::Index res = Eigen::Index(axis.size());

  std::vector<ComplexMatrix> tables(d, ComplexMatrix(n, res));
  for (std::size_t a = 0; a < d; ++a)
    for (Eigen::Index j = 0; j < res; ++j)
      for (Eigen::Index k = 0; k < n; ++k)
        tables[a](k, j) = std::polar(1.0, -2.0 * std::numbers::pi * axis[std::size_t(j)] * points(k, Eigen::Index(a)));

  FrequencyGrid grid;
  grid.spec = spec;
  grid.dim = d;
  grid.axis = axis;
  const Eigen::VectorXcd weights = phi.cast<Complex>() / double(n);
  if (d == 1) {
    const Eigen::VectorXcd v = tables[0].transpose() * weights;
    grid.values.assign(v.data(), v.data() + v.size());
  } else if (d == 2) {
    const ComplexMatrix v = tables[0].transpose() * (weights.asDiagonal() * tables[1]);
    grid.values.resize(std::size_t(res * res));
    for (Eigen::Index i = 0; i < res; ++i)
      for (Eigen::Index j = 0; j < res; ++j) grid.values[std::size_t(i * res + j)] = v(i, j);
  } else {
    grid.values.resize(std::size_t(res * res * res));
    for (Eigen::Index i = 0; i < res; ++i) {
      const Eigen::VectorXcd w = weights.cwiseProduct(tables[0].col(i));
      const ComplexMatrix v = tables[1].transpose() * (w.asDiagonal() * tables[2]);
      for (Eigen::Index j = 0; j < res; ++j)
        for (Eigen::Index l = 0; l < res; ++l) grid.values[std::size_t((i * res + j) * res + l)] = v(j, l);
    }
  }
  grid.magnitudes.reserve(grid.values.size());
  for (const Complex& c : grid.values) grid.magnitudes.push_back(std::abs(c));
  return grid;
}

/// Frequency of the largest magnitude over the half-grid whose first
/// nonzero coordinate is positive (plus the origin). Ties go to the smaller
/// |xi|, then to the lexicographically smaller xi.
inline std::vector<double> dominant_frequency(const FrequencyGrid& grid) {
  require(grid.cells() > 0, "invalid_argument", "empty frequency grid");
  auto in_half = [](const std::vector<double>& xi) {
    for (double v : xi) {
      if (v > 0.0) return true;
      if (v < 0.0) return false;
    }
    return true;
  };
  double peak = -1.0;
  for (std::size_t c = 0; c < grid.cells(); ++c)
    if (in_half(grid.frequency(c))) peak = std::max(peak, grid.magnitudes[c]);
  const double tie = 1e-12 * std::max(peak, 1e-300);
  std::vector<double> best;
  double best_norm = 0.0;
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    const auto xi = grid.frequency(c);
    if (!in_half(xi) || grid.magnitudes[c] < peak - tie) continue;
    double norm = 0.0;
    for (double v : xi) norm += v * v;
    if (best.empty() || norm < best_norm || (norm == best_norm && xi < best)) {
      best = xi;
      best_norm = norm;
    }
  }
  return best;
}

inline double norm(const std::vector<double>& xi) {
  double s = 0.0;
  for (double v : xi) s += v * v;
  return std::sqrt(s);
}

/// Binary 16-bit PGM (P5, big-endian samples) of a magnitude matrix,
/// min-max scaled to [0, 65535]. The sidecar records the scaling.
struct PgmImage {
  std::string bytes;
  nlohmann::json sidecar;
};

inline PgmImage encode_pgm(const Matrix& values) {
  require(values.size() > 0, "invalid_argument", "empty image");
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  const double range = hi - lo;
  std::string out = "P5\n" + std::to_string(values.cols()) + " " + std::to_string(values.rows()) + "\n65535\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double unit = range > 0.0 ? (values(r, c) - lo) / range : 0.0;
      const auto level = static_cast<std::uint16_t>(std::lround(unit * 65535.0));
      out.push_back(char(level >> 8));
      out.push_back(char(level & 0xFF));
    }
  }
  nlohmann::json side;
  side["min"] = lo;
  side["max"] = hi;
  side["scale"] = range > 0.0 ? range / 65535.0 : 0.0;
  side["width"] = values.cols();
  side["height"] = values.rows();
  return {std::move(out), std::move(side)};
}

struct GridArtifact {
  std::string name;
  std::string bytes;
};

/// <stem>.pgm (d <= 2), <stem>.json and <stem>.ksmat for one grid.
inline std::vector<GridArtifact> grid_artifacts(const std::string& stem, const FrequencyGrid& grid) {
  std::vector<GridArtifact> out;
  const Matrix mags = grid.magnitude_matrix();
  nlohmann::json side;
  if (grid.dim <= 2) {
    PgmImage img = encode_pgm(mags);
    out.push_back({stem + ".pgm", std::move(img.bytes)});
    side = std::move(img.sidecar);
  }
  side["extent"] = grid.spec.extent;
  side["resolution"] = grid.spec.resolution;
  side["dim"] = grid.dim;
  side["rows"] = grid.dim == 1 ? "single" : (grid.dim == 2 ? "xi1" : "xi1*res+xi2");
  side["cols"] = grid.dim == 1 ? "xi1" : (grid.dim == 2 ? "xi2" : "xi3");
  side["dominant_frequency"] = dominant_frequency(grid);
  out.push_back({stem + ".json", side.dump(1) + "\n"});
  out.push_back({stem + ".ksmat", io::encode_matrix(mags)});
  return out;
}

/// Writes the artifacts of grid_artifacts into dir; returns the file names.
inline std::vector<std::string> write_grid(const io::fs::path& dir, const std::string& stem, const FrequencyGrid& grid) {
  std::vector<std::string> files;
  for (const auto& a : grid_artifacts(stem, grid)) {
    io::write_file_atomic(dir / a.name, a.bytes);
    files.push_back(a.name);
  }
  return files;
}

}  // namespace kernelscope::fourier
