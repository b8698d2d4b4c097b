// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/binary_io.hpp"
#include "kernelscope/harness/config.hpp"
#include "kernelscope/nn/dataset.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace kernelscope::harness {

/// Grayscale image with intensities in [0, 1], row 0 at the top.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major

  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  /// Bilinear interpolation with pixel (r, c) centered at
  /// ((c + 0.5) / W, (r + 0.5) / H); x1 runs along columns, x2 along rows.
  /// Points outside the center lattice clamp to the border pixels.
  double sample(double x1, double x2) const {
    auto locate = [](double u, std::size_t size, std::size_t& lo, double& frac) {
      double p = u * double(size) - 0.5;
      p = std::clamp(p, 0.0, double(size - 1));
      lo = std::min<std::size_t>(std::size_t(std::floor(p)), size > 1 ? size - 2 : 0);
      frac = size > 1 ? p - double(lo) : 0.0;
    };
    std::size_t c0, r0;
    double fc, fr;
    locate(x1, width, c0, fc);
    locate(x2, height, r0, fr);
    const std::size_t c1 = std::min(c0 + 1, width - 1), r1 = std::min(r0 + 1, height - 1);
    const double top = (1 - fc) * at(r0, c0) + fc * at(r0, c1);
    const double bottom = (1 - fc) * at(r1, c0) + fc * at(r1, c1);
    return (1 - fr) * top + fr * bottom;
  }
};

/// Reads a binary (P5) or ASCII (P2) PGM with maxval up to 65535.
inline GrayImage read_pgm(const fs::path& path) {
  const std::string raw = io::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < raw.size() && std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
      if (pos < raw.size() && raw[pos] == '#') {
        while (pos < raw.size() && raw[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    if (start == pos) throw Error("format", path.string() + ": truncated PGM header");
    return raw.substr(start, pos - start);
  };
  auto number = [&]() {
    const std::string t = token();
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) throw Error("format", path.string() + ": bad PGM number");
    return v;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw Error("format", path.string() + ": not a PGM image");
  GrayImage img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535)
    throw Error("format", path.string() + ": bad PGM dimensions");
  const std::size_t count = img.width * img.height;
  img.pixels.resize(count);
  if (magic == "P2") {
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = double(number()) / double(maxval);
    return img;
  }
  ++pos;  // single whitespace before the raster
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  if (raw.size() < pos + count * bytes) throw Error("format", path.string() + ": truncated PGM raster");
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t v = static_cast<unsigned char>(raw[pos + i * bytes]);
    if (bytes == 2) v = (v << 8) | static_cast<unsigned char>(raw[pos + i * bytes + 1]);
    img.pixels[i] = double(v) / double(maxval);
  }
  return img;
}

using TargetFunction = std::function<double(const Eigen::Ref<const Vector>&)>;

/// Analytic targets on [0, 1]^d:
///   sin_product  prod_a sin(2 pi f x_a)                     (f = "frequency", default 1)
///   multiscale   sin(2 pi x1) sin(2 pi x2) + a sin(2 pi k (x1 + x2))  (a = 0.3, k = 6)
///   cosine       cos(2 pi <w, x>)                             ("frequencies", default (5, 0, ...))
///   constant     c                                            ("value", default 1)
inline TargetFunction analytic_target(const std::string& id, const json& params, std::size_t dim) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  try {
    if (id == "sin_product") {
      const double f = params.value("frequency", 1.0);
      return [f](const Eigen::Ref<const Vector>& x) {
        double v = 1.0;
        for (Eigen::Index a = 0; a < x.size(); ++a) v *= std::sin(two_pi * f * x[a]);
        return v;
      };
    }
    if (id == "multiscale") {
      const double amp = params.value("amplitude", 0.3);
      const double k = params.value("frequency", 6.0);
      return [amp, k](const Eigen::Ref<const Vector>& x) {
        const double x2 = x.size() > 1 ? x[1] : 0.25;
        return std::sin(two_pi * x[0]) * std::sin(two_pi * x2) + amp * std::sin(two_pi * k * (x[0] + x2));
      };
    }
    if (id == "cosine") {
      std::vector<double> w(dim, 0.0);
      w[0] = 5.0;
      if (params.contains("frequencies")) w = params.at("frequencies").get<std::vector<double>>();
      require(w.size() == dim, "config", "cosine frequencies must have dim entries");
      return [w](const Eigen::Ref<const Vector>& x) {
        double dot = 0.0;
        for (std::size_t a = 0; a < w.size(); ++a) dot += w[a] * x[Eigen::Index(a)];
        return std::cos(two_pi * dot);
      };
    }
    if (id == "constant") {
      const double c = params.value("value", 1.0);
      return [c](const Eigen::Ref<const Vector>&) { return c; };
    }
  } catch (const json::exception& e) {
    throw Error("config", "bad parameters for target '" + id + "': " + e.what());
  }
  throw Error("config", "unknown analytic target '" + id + "'");
}

struct ExperimentData {
  nn::Dataset train;
  Matrix test_raw;     // M x d in [0, 1]^d
  Matrix test_inputs;  // standardized with the training statistics
  Vector test_labels;
};

/// Uniform samples in [0, 1]^d. Training points come first from the seeded
/// stream, test points continue the same stream.
inline ExperimentData build_dataset(const ExperimentConfig& config) {
  const DatasetSpec& spec = config.dataset;
  TargetFunction target;
  if (spec.source == "image") {
    auto img = std::make_shared<GrayImage>(read_pgm(config.image_path()));
    target = [img](const Eigen::Ref<const Vector>& x) { return img->sample(x[0], x[1]); };
  } else {
    target = analytic_target(spec.function, spec.params, spec.dim);
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto draw = [&](std::size_t count) {
    Matrix X(Eigen::Index(count), Eigen::Index(spec.dim));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index a = 0; a < X.cols(); ++a) X(i, a) = uniform(rng);
    return X;
  };
  auto label = [&](const Matrix& X) {
    Vector y(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) y[i] = target(X.row(i).transpose());
    return y;
  };
  const Matrix train_raw = draw(spec.n);
  ExperimentData out;
  out.train = nn::make_dataset(train_raw, label(train_raw));
  out.test_raw = draw(spec.test_n);
  out.test_labels = label(out.test_raw);
  out.test_inputs = spec.test_n ? out.train.normalize(out.test_raw) : Matrix(0, Eigen::Index(spec.dim));
  return out;
}

}  // namespace kernelscope::harness
