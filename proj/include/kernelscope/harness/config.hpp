// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/alignment.hpp"
#include "kernelscope/binary_io.hpp"
#include "kernelscope/fourier.hpp"
#include "kernelscope/nn/network.hpp"
#include "kernelscope/nn/optimizer.hpp"
#include "kernelscope/nn/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kernelscope::harness {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kConfigVersion = 1;

struct DatasetSpec {
  std::string source = "analytic";  // analytic | image
  std::string function = "multiscale";
  json params = json::object();
  std::string image;  // PGM path, resolved against the config directory
  std::size_t dim = 2;
  std::size_t n = 1000;
  std::size_t test_n = 1000;
  std::uint64_t seed = 1;
};

/// Explicit steps, or dense-then-geometric with optional fixed spacing.
struct CheckpointSpec {
  std::vector<Step> steps;
  Step dense_until = 100;
  double growth = 1.5;
  Step every = 0;
  bool pair_next = false;
  Step record_interval = 100;

  std::vector<Step> resolve(Step total) const {
    if (!steps.empty()) {
      std::set<Step> s(steps.begin(), steps.end());
      s.insert(0);
      return {s.begin(), s.end()};
    }
    return nn::checkpoint_schedule(total, dense_until, growth, every, pair_next);
  }
};

struct FourierPlan {
  std::vector<std::size_t> modes{1, 10, 50, 200};  // one-based
  bool residual = true;
  fourier::GridSpec grid{};
};

struct PredictPlan {
  Step t0 = 0;
  std::vector<Step> steps;  // empty: every checkpoint at or after t0
};

struct AnalysisPlan {
  std::vector<alignment::Target> targets{alignment::Target::Labels, alignment::Target::Output,
                                         alignment::Target::Residual, alignment::Target::Differential};
  std::vector<std::size_t> k_grid;   // empty: default grid clipped to N
  std::vector<std::size_t> modes{1, 2, 5, 10, 20, 50, 100, 200};  // one-based
  std::vector<Step> spectrum_steps;  // empty: every checkpoint
  std::vector<Step> preservation_refs;  // empty: the middle spectrum
  FourierPlan fourier{};
  PredictPlan predict{};
  bool constant_kernel = true;
  bool gramian_differential = false;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  DatasetSpec dataset{};
  nn::NetworkConfig network{};
  nn::OptimizerConfig optimizer{};
  CheckpointSpec checkpoints{};
  AnalysisPlan analysis{};
  std::string output_dir = "run";
  std::string precision = "f64";
  fs::path base_dir;  // directory of the config file; not serialized

  void validate() const {
    require(version == kConfigVersion, "config", "unsupported config version " + std::to_string(version));
    require(dataset.source == "analytic" || dataset.source == "image", "config",
            "dataset.source must be 'analytic' or 'image'");
    require(dataset.n >= 1, "config", "dataset.n must be positive");
    require(dataset.dim >= 1, "config", "dataset.dim must be positive");
    if (dataset.source == "image") {
      require(dataset.dim == 2, "config", "image datasets are two-dimensional");
      require(fs::exists(image_path()), "config", "image not found: " + image_path().string());
    }
    require(network.input_dim == dataset.dim, "config", "network input_dim differs from dataset.dim");
    network.validate();
    optimizer.validate(dataset.n);
    require(precision == "f64" || precision == "f32", "config", "precision must be 'f64' or 'f32'");
    require(checkpoints.record_interval > 0, "config", "checkpoints.record_interval must be positive");
    require(std::is_sorted(checkpoints.steps.begin(), checkpoints.steps.end()), "config",
            "checkpoints.steps must be sorted");
    for (Step s : checkpoints.steps)
      require(s <= optimizer.schedule.total_steps, "config", "checkpoint step beyond total_steps");
    for (std::size_t m : analysis.modes) require(m >= 1, "config", "analysis.modes are one-based");
    for (std::size_t m : analysis.fourier.modes) require(m >= 1, "config", "analysis.fourier.modes are one-based");
    for (std::size_t k : analysis.k_grid) require(k >= 1 && k <= dataset.n, "config", "k_grid entries must lie in [1, N]");
    analysis.fourier.grid.validate();
  }

  fs::path image_path() const {
    const fs::path p(dataset.image);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }

  std::vector<std::size_t> k_grid() const {
    return analysis.k_grid.empty() ? alignment::default_k_grid(dataset.n) : analysis.k_grid;
  }
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> known) {
  require(j.is_object(), "config", section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    require(ok, "config", "unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["version"] = c.version;
  j["dataset"] = {{"source", c.dataset.source}, {"function", c.dataset.function}, {"params", c.dataset.params},
                  {"image", c.dataset.image},   {"dim", c.dataset.dim},           {"n", c.dataset.n},
                  {"test_n", c.dataset.test_n}, {"seed", c.dataset.seed}};
  j["network"] = {{"hidden_widths", c.network.hidden_widths},
                  {"activation", c.network.activation.name()},
                  {"slope", c.network.activation.slope},
                  {"shortcuts", c.network.shortcuts},
                  {"seed", c.network.seed}};
  const auto& s = c.optimizer.schedule;
  json opt = {{"kind", c.optimizer.name()},          {"delta0", s.delta0},
              {"decay_factor", s.decay_factor},     {"decay_interval", s.decay_interval},
              {"total_steps", s.total_steps},       {"seed", c.optimizer.seed}};
  if (const auto* sgd = std::get_if<nn::SGD>(&c.optimizer.kind)) opt["batch_size"] = sgd->batch_size;
  if (const auto* adam = std::get_if<nn::Adam>(&c.optimizer.kind)) {
    opt["beta1"] = adam->beta1;
    opt["beta2"] = adam->beta2;
    opt["eps"] = adam->eps;
  }
  j["optimizer"] = opt;
  j["checkpoints"] = {{"steps", c.checkpoints.steps},         {"dense_until", c.checkpoints.dense_until},
                      {"growth", c.checkpoints.growth},       {"every", c.checkpoints.every},
                      {"pair_next", c.checkpoints.pair_next}, {"record_interval", c.checkpoints.record_interval}};
  std::vector<std::string> targets;
  for (auto t : c.analysis.targets) targets.push_back(alignment::target_name(t));
  const auto& a = c.analysis;
  j["analysis"] = {
      {"targets", targets},
      {"k_grid", a.k_grid},
      {"modes", a.modes},
      {"spectrum_steps", a.spectrum_steps},
      {"preservation_refs", a.preservation_refs},
      {"fourier",
       {{"modes", a.fourier.modes},
        {"residual", a.fourier.residual},
        {"extent", a.fourier.grid.extent},
        {"resolution", a.fourier.grid.resolution}}},
      {"predict", {{"t0", a.predict.t0}, {"steps", a.predict.steps}}},
      {"constant_kernel", a.constant_kernel},
      {"gramian_differential", a.gramian_differential},
  };
  j["output_dir"] = c.output_dir;
  j["precision"] = c.precision;
  return j;
}

/// Parses and validates a config. Unknown keys are rejected so typos do
/// not silently fall back to defaults.
inline ExperimentConfig config_from_json(const json& j, const fs::path& base_dir = {}) {
  using detail::read;
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    detail::reject_unknown(j, "config",
                           {"version", "dataset", "network", "optimizer", "checkpoints", "analysis", "output_dir",
                            "precision"});
    require(j.contains("version"), "config", "config must state its version");
    read(j, "version", c.version);
    require(c.version == kConfigVersion, "config", "unsupported config version " + std::to_string(c.version));
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      detail::reject_unknown(d, "dataset", {"source", "function", "params", "image", "dim", "n", "test_n", "seed"});
      read(d, "source", c.dataset.source);
      read(d, "function", c.dataset.function);
      read(d, "params", c.dataset.params);
      read(d, "image", c.dataset.image);
      read(d, "dim", c.dataset.dim);
      read(d, "n", c.dataset.n);
      read(d, "test_n", c.dataset.test_n);
      read(d, "seed", c.dataset.seed);
    }
    c.network.input_dim = c.dataset.dim;
    c.network.hidden_widths = {64, 64, 64, 64};
    if (j.contains("network")) {
      const json& n = j.at("network");
      detail::reject_unknown(n, "network", {"hidden_widths", "activation", "slope", "shortcuts", "seed"});
      read(n, "hidden_widths", c.network.hidden_widths);
      if (n.contains("activation")) c.network.activation = nn::parse_activation(n.at("activation").get<std::string>());
      read(n, "slope", c.network.activation.slope);
      read(n, "shortcuts", c.network.shortcuts);
      read(n, "seed", c.network.seed);
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      detail::reject_unknown(o, "optimizer",
                             {"kind", "delta0", "decay_factor", "decay_interval", "total_steps", "seed",
                              "batch_size", "beta1", "beta2", "eps"});
      const std::string kind = o.value("kind", std::string("gd"));
      if (kind == "gd") {
        c.optimizer.kind = nn::FullBatchGD{};
      } else if (kind == "sgd") {
        nn::SGD sgd;
        read(o, "batch_size", sgd.batch_size);
        c.optimizer.kind = sgd;
      } else if (kind == "adam") {
        nn::Adam adam;
        read(o, "beta1", adam.beta1);
        read(o, "beta2", adam.beta2);
        read(o, "eps", adam.eps);
        c.optimizer.kind = adam;
      } else {
        throw Error("config", "optimizer.kind must be gd, sgd or adam");
      }
      read(o, "delta0", c.optimizer.schedule.delta0);
      read(o, "decay_factor", c.optimizer.schedule.decay_factor);
      read(o, "decay_interval", c.optimizer.schedule.decay_interval);
      read(o, "total_steps", c.optimizer.schedule.total_steps);
      read(o, "seed", c.optimizer.seed);
    }
    if (j.contains("checkpoints")) {
      const json& k = j.at("checkpoints");
      detail::reject_unknown(k, "checkpoints", {"steps", "dense_until", "growth", "every", "pair_next", "record_interval"});
      read(k, "steps", c.checkpoints.steps);
      read(k, "dense_until", c.checkpoints.dense_until);
      read(k, "growth", c.checkpoints.growth);
      read(k, "every", c.checkpoints.every);
      read(k, "pair_next", c.checkpoints.pair_next);
      read(k, "record_interval", c.checkpoints.record_interval);
    }
    if (j.contains("analysis")) {
      const json& a = j.at("analysis");
      detail::reject_unknown(a, "analysis",
                             {"targets", "k_grid", "modes", "spectrum_steps", "preservation_refs", "fourier",
                              "predict", "constant_kernel", "gramian_differential"});
      if (a.contains("targets")) {
        c.analysis.targets.clear();
        for (const auto& t : a.at("targets")) c.analysis.targets.push_back(alignment::parse_target(t.get<std::string>()));
      }
      read(a, "k_grid", c.analysis.k_grid);
      read(a, "modes", c.analysis.modes);
      read(a, "spectrum_steps", c.analysis.spectrum_steps);
      read(a, "preservation_refs", c.analysis.preservation_refs);
      read(a, "constant_kernel", c.analysis.constant_kernel);
      read(a, "gramian_differential", c.analysis.gramian_differential);
      if (a.contains("fourier")) {
        const json& f = a.at("fourier");
        detail::reject_unknown(f, "analysis.fourier", {"modes", "residual", "extent", "resolution"});
        read(f, "modes", c.analysis.fourier.modes);
        read(f, "residual", c.analysis.fourier.residual);
        read(f, "extent", c.analysis.fourier.grid.extent);
        read(f, "resolution", c.analysis.fourier.grid.resolution);
      }
      if (a.contains("predict")) {
        const json& p = a.at("predict");
        detail::reject_unknown(p, "analysis.predict", {"t0", "steps"});
        read(p, "t0", c.analysis.predict.t0);
        read(p, "steps", c.analysis.predict.steps);
      }
    }
    read(j, "output_dir", c.output_dir);
    read(j, "precision", c.precision);
  } catch (const json::exception& e) {
    throw Error("config", std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error("config", path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// Canonical serialization: sorted keys, no whitespace.
inline std::string canonical_config(const ExperimentConfig& c) { return to_json(c).dump(); }

}  // namespace kernelscope::harness
