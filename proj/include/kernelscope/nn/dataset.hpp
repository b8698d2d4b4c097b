// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/common.hpp"

#include <cmath>
#include <vector>

namespace kernelscope::nn {

/// Training data with standardized inputs. The raw coordinates are kept
/// next to the standardized ones.
struct Dataset {
  Matrix inputs;      // N x d, standardized
  Vector labels;      // N
  Vector norm_mean;   // d
  Vector norm_std;    // d, 1 for constant raw columns
  Matrix raw_inputs;  // N x d, as sampled
  std::vector<std::size_t> constant_columns;

  std::size_t size() const { return std::size_t(inputs.rows()); }
  std::size_t dim() const { return std::size_t(inputs.cols()); }

  /// Applies the training statistics to new raw points.
  Matrix normalize(const Matrix& raw) const {
    require(raw.cols() == norm_mean.size(), "dimension_mismatch", "point dimension mismatch");
    Matrix out = raw.rowwise() - norm_mean.transpose();
    return out.array().rowwise() / norm_std.transpose().array();
  }
};

/// Standardizes each column to empirical mean 0 and (population) standard
/// deviation 1. Constant columns are centered only and reported.
inline Dataset make_dataset(Matrix raw, Vector labels) {
  require(raw.rows() == labels.size(), "dimension_mismatch", "inputs and labels differ in length");
  require(raw.rows() > 0 && raw.cols() > 0, "invalid_argument", "dataset must be non-empty");
  require(raw.allFinite() && labels.allFinite(), "non_finite", "dataset contains non-finite values");
  Dataset data;
  const double n = double(raw.rows());
  data.norm_mean = raw.colwise().mean().transpose();
  data.norm_std = Vector::Ones(raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double sd = std::sqrt((raw.col(c).array() - data.norm_mean[c]).square().sum() / n);
    if (sd > 1e-12 * std::max(1.0, std::abs(data.norm_mean[c])))
      data.norm_std[c] = sd;
    else
      data.constant_columns.push_back(std::size_t(c));
  }
  data.raw_inputs = std::move(raw);
  data.labels = std::move(labels);
  data.inputs = data.normalize(data.raw_inputs);
  return data;
}

}  // namespace kernelscope::nn
