// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment stages over a run directory. Each stage reads what earlier
// stages wrote, records its outputs in the manifest and returns an
// in-memory summary.

#pragma once

#include "kernelscope/alignment.hpp"
#include "kernelscope/dynamics.hpp"
#include "kernelscope/fourier.hpp"
#include "kernelscope/harness/config.hpp"
#include "kernelscope/harness/data.hpp"
#include "kernelscope/harness/manifest.hpp"
#include "kernelscope/nn/checkpoint_io.hpp"
#include "kernelscope/nn/training.hpp"
#include "kernelscope/spectral.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kernelscope::harness {

inline std::string step_tag(Step t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "t%08llu", static_cast<unsigned long long>(t));
  return buf;
}

inline std::string checkpoint_file(Step t) { return "checkpoints/" + step_tag(t) + ".ksnet"; }
inline std::string spectrum_file(Step t) { return "spectra/" + step_tag(t) + ".ksmat"; }
inline std::string spectrum_sidecar_file(Step t) { return "spectra/" + step_tag(t) + ".json"; }

inline std::string csv_number(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

/// Command-line adjustments applied on top of a config.
struct Overrides {
  std::optional<std::uint64_t> seed;        // network init and minibatch sampling
  std::optional<std::vector<Step>> checkpoints;
  std::optional<std::string> precision;
  std::optional<std::vector<std::size_t>> modes;   // one-based
  std::optional<std::vector<std::size_t>> k_grid;

  void apply(ExperimentConfig& c) const {
    if (seed) {
      c.network.seed = *seed;
      c.optimizer.seed = *seed;
    }
    if (precision) c.precision = *precision;
    if (modes) {
      c.analysis.modes = *modes;
      c.analysis.fourier.modes = *modes;
    }
    if (k_grid) c.analysis.k_grid = *k_grid;
    if (checkpoints) {
      c.checkpoints.steps = *checkpoints;
      std::sort(c.checkpoints.steps.begin(), c.checkpoints.steps.end());
    }
    c.validate();
  }
};

class Run {
 public:
  /// New run: the config (with overrides applied) becomes the run's config.
  static Run create(ExperimentConfig config, const fs::path& out) {
    Run run(std::move(config), out);
    run.data_ = build_dataset(run.config_);
    return run;
  }

  /// Existing run directory written by train.
  static Run open(const fs::path& out) {
    require(fs::exists(out / "config.json"), "missing_checkpoint", out.string() + " holds no trained run");
    ExperimentConfig config = load_config(out / "config.json");
    Run run(std::move(config), out);
    run.data_ = build_dataset(run.config_);
    return run;
  }

  const ExperimentConfig& config() const { return config_; }
  ExperimentConfig& config() { return config_; }
  RunDirectory& dir() { return dir_; }
  const ExperimentData& data() const { return data_; }

  std::vector<Step> checkpoints() const { return steps("checkpoints"); }
  std::vector<Step> spectra() const { return steps("spectra"); }

  nn::Network network(Step t) const {
    const auto path = dir_.path(checkpoint_file(t));
    require(fs::exists(path), "missing_checkpoint", "no checkpoint at step " + std::to_string(t));
    return nn::read_network(path);
  }

  bool has_spectrum(Step t) const { return fs::exists(dir_.path(spectrum_sidecar_file(t))); }

  spectral::SpectrumSnapshot spectrum(Step t) const {
    require(has_spectrum(t), "missing_checkpoint", "no spectrum at step " + std::to_string(t));
    return spectral::read_spectrum(dir_.path(spectrum_file(t)), dir_.path(spectrum_sidecar_file(t)));
  }

  /// Eigenvalues only, from the sidecar.
  spectral::SpectrumSnapshot eigenvalues(Step t) const {
    const auto side = json::parse(io::read_file(dir_.path(spectrum_sidecar_file(t))));
    spectral::SpectrumSnapshot s;
    s.t = side.at("t").get<Step>();
    const auto values = side.at("eigenvalues").get<std::vector<double>>();
    s.eigenvalues = Eigen::Map<const Vector>(values.data(), Eigen::Index(values.size()));
    s.kernel_eigenvalues = s.eigenvalues / double(values.size());
    return s;
  }

  /// Spectrum from disk, or computed from the checkpoint when absent.
  spectral::SpectrumSnapshot spectrum_or_compute(Step t) const {
    if (has_spectrum(t)) return spectrum(t);
    return spectral::eig_sym(spectral::gramian(network(t).jacobian(data_.train.inputs), t));
  }

 private:
  Run(ExperimentConfig config, const fs::path& out) : config_(std::move(config)), dir_(out) {}

  std::vector<Step> steps(const char* key) const {
    const auto& m = dir_.manifest();
    return m.contains(key) ? m.at(key).get<std::vector<Step>>() : std::vector<Step>{};
  }

  ExperimentConfig config_;
  RunDirectory dir_;
  ExperimentData data_;
};

inline std::string matrix_bytes(const Matrix& m) { return io::encode_matrix(m); }

// ---------------------------------------------------------------- train

struct TrainSummary {
  nn::TrainingStatus status = nn::TrainingStatus::Completed;
  std::optional<Step> diverged_at;
  std::string diagnostic;
  std::vector<Step> checkpoints;
  std::vector<nn::TraceRecord> records;
};

namespace detail {

template <typename M>
TrainSummary train_with(Run& run, const M& model, const std::vector<Step>& steps) {
  const auto& c = run.config();
  nn::TrainingPlan plan{steps, c.checkpoints.record_interval};
  std::vector<Step> taken;
  nn::CheckpointSink<M> sink = [&](const nn::Checkpoint<M>& ck) {
    run.dir().write("train", checkpoint_file(ck.t), nn::encode_network(ck.model));
    taken.push_back(ck.t);
  };
  const auto trace = nn::run_training(model, run.data().train, c.optimizer, plan, sink);
  TrainSummary s{trace.status, trace.diverged_at, trace.diagnostic, taken, trace.records};
  return s;
}

}  // namespace detail

inline TrainSummary train(Run& run) {
  auto& dir = run.dir();
  const auto& c = run.config();
  dir.reset();
  dir.begin("train");

  ExperimentConfig stored = c;
  stored.output_dir = ".";
  if (c.dataset.source == "image") {
    dir.write("train", "data/target.pgm", io::read_file(c.image_path()));
    stored.dataset.image = "data/target.pgm";
  }
  const std::string canonical = canonical_config(stored);
  dir.write("train", "config.json", to_json(stored).dump(1) + "\n");
  dir.manifest()["config_sha256"] = sha256_hex(canonical);
  dir.manifest()["seeds"] = {{"dataset", c.dataset.seed}, {"network", c.network.seed}, {"optimizer", c.optimizer.seed}};

  const auto& d = run.data();
  dir.write("train", "data/train_raw.ksmat", matrix_bytes(d.train.raw_inputs));
  dir.write("train", "data/train_labels.ksmat", matrix_bytes(d.train.labels));
  dir.write("train", "data/test_raw.ksmat", matrix_bytes(d.test_raw));
  dir.write("train", "data/test_labels.ksmat", matrix_bytes(d.test_labels));
  json norm = {{"mean", std::vector<double>(d.train.norm_mean.data(), d.train.norm_mean.data() + d.train.norm_mean.size())},
               {"std", std::vector<double>(d.train.norm_std.data(), d.train.norm_std.data() + d.train.norm_std.size())},
               {"constant_columns", d.train.constant_columns}};
  dir.write("train", "data/normalization.json", norm.dump(1) + "\n");

  const auto steps = c.checkpoints.resolve(c.optimizer.schedule.total_steps);
  TrainSummary s;
  if (c.precision == "f32")
    s = detail::train_with(run, nn::NetworkF32::init(c.network, c.network.seed), steps);
  else
    s = detail::train_with(run, nn::Network::init(c.network, c.network.seed), steps);

  dir.manifest()["checkpoints"] = s.checkpoints;
  dir.write("train", "trace.csv", nn::encode_trace_csv(s.records));
  json summary = {{"status", s.status == nn::TrainingStatus::Completed ? "completed" : "diverged"},
                  {"final_loss", s.records.empty() ? 0.0 : s.records.back().loss},
                  {"final_step", s.records.empty() ? 0 : s.records.back().t},
                  {"num_params", nn::parameter_count(c.network)}};
  if (s.diverged_at) {
    summary["diverged_at"] = *s.diverged_at;
    summary["diagnostic"] = s.diagnostic;
  }
  dir.write("train", "training.json", summary.dump(1) + "\n");
  dir.commit("train");
  return s;
}

// ------------------------------------------------------------- spectrum

/// Steps to analyze: the request filtered to existing checkpoints, or all.
inline std::vector<Step> select_steps(const std::vector<Step>& available, const std::vector<Step>& requested) {
  if (requested.empty()) return available;
  std::vector<Step> out;
  for (Step t : requested) {
    require(std::binary_search(available.begin(), available.end(), t), "missing_checkpoint",
            "no checkpoint at step " + std::to_string(t));
    out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<Step> spectrum(Run& run, const std::vector<Step>& requested = {}) {
  auto& dir = run.dir();
  const auto steps =
      select_steps(run.checkpoints(), requested.empty() ? run.config().analysis.spectrum_steps : requested);
  dir.begin("spectrum");
  dir.manifest().erase("spectra");
  for (Step t : steps) {
    const Matrix A = run.network(t).jacobian(run.data().train.inputs);
    const auto snap = spectral::eig_sym(spectral::gramian(A, t));
    dir.write("spectrum", spectrum_file(t), io::encode_matrix(snap.eigenvectors));
    dir.write("spectrum", spectrum_sidecar_file(t), spectral::spectrum_sidecar(snap).dump(1) + "\n");
  }
  dir.manifest()["spectra"] = steps;
  dir.commit("spectrum");
  return steps;
}

// ---------------------------------------------------------------- align

struct AlignSummary {
  std::vector<alignment::AlignmentRecord> records;
  std::vector<alignment::PreservationRecord> preservation;
  std::vector<alignment::TrendRow> trends;
};

inline std::vector<std::size_t> zero_based(const std::vector<std::size_t>& one_based, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t m : one_based)
    if (m >= 1 && m <= n) out.push_back(m - 1);
  return out;
}

inline AlignSummary align(Run& run) {
  auto& dir = run.dir();
  const auto& c = run.config();
  const auto steps = run.spectra();
  require(!steps.empty(), "missing_checkpoint", "no spectra; run the spectrum stage first");
  const std::size_t n = run.data().train.size();
  const auto ks = c.k_grid();
  const auto modes = zero_based(c.analysis.modes, n);
  dir.begin("align");

  AlignSummary out;
  std::vector<spectral::SpectrumSnapshot> values;
  for (Step t : steps) {
    const auto spec = run.spectrum(t);
    const auto eval = nn::loss_and_residual(run.network(t), run.data().train);
    alignment::AlignmentInput in{t, &spec, eval.outputs, eval.residual, c.optimizer.schedule.rate(t)};
    const auto recs = alignment::alignment_trace({in}, run.data().train.labels, c.analysis.targets, ks);
    out.records.insert(out.records.end(), recs.begin(), recs.end());
    values.push_back(run.eigenvalues(t));
  }
  std::vector<const spectral::SpectrumSnapshot*> ptrs;
  for (const auto& v : values) ptrs.push_back(&v);
  out.trends = alignment::eigenvalue_trends(ptrs, c.optimizer.schedule, modes);

  std::vector<Step> refs = c.analysis.preservation_refs;
  if (refs.empty()) refs.push_back(steps[steps.size() / 2]);
  const auto probe = run.spectrum(steps.back());
  for (Step r : refs) {
    const auto ref = run.spectrum(r);
    for (std::size_t i : modes) {
      const auto recs = alignment::spectrum_preservation(ref, probe, i, ks);
      out.preservation.insert(out.preservation.end(), recs.begin(), recs.end());
    }
  }

  std::string decays = "t,delta\n";
  for (Step t : c.optimizer.schedule.decay_steps())
    decays += std::to_string(t) + ',' + format_double(c.optimizer.schedule.rate(t)) + '\n';
  dir.write("align", "alignment/alignment.csv", alignment::encode_alignment_csv(out.records));
  dir.write("align", "alignment/preservation.csv", alignment::encode_preservation_csv(out.preservation));
  dir.write("align", "alignment/trends.csv", alignment::encode_trends_csv(out.trends));
  dir.write("align", "alignment/lr_decays.csv", decays);
  dir.commit("align");
  return out;
}

// --------------------------------------------------------------- dynamics

struct DynamicsSummary {
  std::vector<dynamics::FirstOrderReport> first_order;
  std::vector<std::pair<Step, double>> constant_kernel;  // (t, relative output error)
  std::vector<std::pair<double, double>> gramian_differential;  // (delta, Frobenius error)
};

inline DynamicsSummary dynamics_check(Run& run) {
  auto& dir = run.dir();
  const auto& c = run.config();
  const auto& data = run.data().train;
  const auto steps = run.checkpoints();
  require(!steps.empty(), "missing_checkpoint", "no checkpoints; run the train stage first");
  const double n = double(data.size());
  dir.begin("dynamics");
  DynamicsSummary out;

  if (c.optimizer.is_full_batch_gd()) {
    std::string csv = "t,error,cos_alpha\n";
    for (Step t : steps) {
      if (!std::binary_search(steps.begin(), steps.end(), t + 1)) continue;
      const auto now = run.network(t);
      const auto eval = nn::loss_and_residual(now, data);
      const Vector next = run.network(t + 1).forward_batch(data.inputs);
      const Matrix A = now.jacobian(data.inputs);
      const Vector predicted = -(c.optimizer.schedule.rate(t) / n) * (A.transpose() * (A * eval.residual));
      const auto r = dynamics::compare_first_order(t, next - eval.outputs, predicted);
      out.first_order.push_back(r);
      csv += std::to_string(t) + ',' + csv_number(r.error) + ',' + csv_number(r.cos_alpha) + '\n';
    }
    dir.write("dynamics", "dynamics/first_order.csv", csv);
  }

  const Step t0 = c.analysis.predict.t0;
  if (c.analysis.constant_kernel && std::binary_search(steps.begin(), steps.end(), t0)) {
    const auto eval = nn::loss_and_residual(run.network(t0), data);
    const auto model = dynamics::make_constant_kernel_model(run.spectrum_or_compute(t0), eval.outputs, eval.residual,
                                                            c.optimizer.schedule.rate(t0));
    const auto modes = zero_based(c.analysis.modes, data.size());
    std::string ck = "t,rel_error\n", mc = "t,mode,coef_m,coef_f\n";
    for (Step t : steps) {
      if (t < t0) continue;
      const Vector actual = run.network(t).forward_batch(data.inputs);
      const auto p = dynamics::closed_form_train(model, t - t0);
      const double err = actual.norm() > 0 ? (p.outputs - actual).norm() / actual.norm() : (p.outputs - actual).norm();
      out.constant_kernel.emplace_back(t, err);
      ck += std::to_string(t) + ',' + csv_number(err) + '\n';
      for (const auto& m : dynamics::mode_coefficients(model, t - t0, modes))
        mc += std::to_string(t) + ',' + std::to_string(m.mode + 1) + ',' + csv_number(m.coef_m) + ',' +
              csv_number(m.coef_f) + '\n';
    }
    dir.write("dynamics", "dynamics/constant_kernel.csv", ck);
    dir.write("dynamics", "dynamics/modes.csv", mc);
  }

  if (c.analysis.gramian_differential && std::binary_search(steps.begin(), steps.end(), t0)) {
    require(data.size() <= 500, "invalid_argument", "Gramian-differential check limited to N <= 500");
    const auto net = run.network(t0);
    const Matrix A = net.jacobian(data.inputs);
    const Matrix G0 = spectral::gramian(A).G;
    const auto eval = nn::loss_and_residual(net, data);
    std::string csv = "delta,abs_error,rel_error\n";
    for (int halvings = 0; halvings < 3; ++halvings) {
      const double delta = c.optimizer.schedule.rate(t0) / double(1 << halvings);
      const Matrix dG = dynamics::gramian_differential(net, data.inputs, A, eval.residual, delta);
      auto next = net;
      nn::train_step(next, data.inputs, data.labels, delta);
      const Matrix actual = spectral::gramian(next.jacobian(data.inputs)).G - G0;
      const double abs_err = (dG - actual).norm();
      out.gramian_differential.emplace_back(delta, abs_err);
      csv += csv_number(delta) + ',' + csv_number(abs_err) + ',' + csv_number(abs_err / actual.norm()) + '\n';
    }
    dir.write("dynamics", "dynamics/gramian_differential.csv", csv);
  }
  dir.commit("dynamics");
  return out;
}

// ---------------------------------------------------------------- fourier

struct DominantRow {
  Step t = 0;
  std::string target;  // "mode<i>" or "residual"
  std::vector<double> xi;
  double norm = 0.0;
};

inline std::vector<DominantRow> fourier_stage(Run& run, const std::vector<Step>& requested = {}) {
  auto& dir = run.dir();
  const auto& c = run.config();
  const auto& data = run.data().train;
  const auto available = run.spectra();
  require(!available.empty(), "missing_checkpoint", "no spectra; run the spectrum stage first");
  const auto steps = requested.empty() ? std::vector<Step>{available.back()} : select_steps(available, requested);
  dir.begin("fourier");
  std::vector<DominantRow> rows;
  auto emit = [&](Step t, const std::string& target, const Vector& phi) {
    const auto grid = fourier::sampled_ft(phi, data.raw_inputs, c.analysis.fourier.grid);
    for (const auto& a : fourier::grid_artifacts(step_tag(t) + "_" + target, grid))
      dir.write("fourier", "fourier/" + a.name, a.bytes);
    const auto xi = fourier::dominant_frequency(grid);
    rows.push_back({t, target, xi, fourier::norm(xi)});
  };
  for (Step t : steps) {
    const auto spec = run.spectrum(t);
    for (std::size_t i : zero_based(c.analysis.fourier.modes, data.size())) emit(t, "mode" + std::to_string(i + 1), spec.mode(i));
    if (c.analysis.fourier.residual) {
      const Vector m = nn::loss_and_residual(run.network(t), data).residual;
      if (m.squaredNorm() > 0.0) emit(t, "residual", m);
    }
  }
  std::string csv = "t,target,norm,xi\n";
  for (const auto& r : rows) {
    std::string xi;
    for (std::size_t a = 0; a < r.xi.size(); ++a) xi += (a ? " " : "") + format_double(r.xi[a]);
    csv += std::to_string(r.t) + ',' + r.target + ',' + format_double(r.norm) + ',' + xi + '\n';
  }
  dir.write("fourier", "fourier/dominant.csv", csv);
  dir.commit("fourier");
  return rows;
}

// ---------------------------------------------------------------- predict

struct PredictRow {
  Step t = 0;
  double train_error = std::numeric_limits<double>::quiet_NaN();  // vs. the checkpoint, when present
  double test_gradient_error = std::numeric_limits<double>::quiet_NaN();
  double test_eigenfunction_error = std::numeric_limits<double>::quiet_NaN();
  double forms_gap = std::numeric_limits<double>::quiet_NaN();  // gradient vs. eigenfunction form
};

struct PredictSummary {
  Step t0 = 0;
  std::vector<Step> steps;
  Matrix train;              // steps x N
  Matrix test_gradient;      // steps x M
  Matrix test_eigenfunction; // steps x M
  std::vector<PredictRow> rows;
  std::size_t skipped_modes = 0;
};

inline double relative_gap(const Vector& a, const Vector& b) {
  const double nb = b.norm();
  return nb > 0.0 ? (a - b).norm() / nb : (a - b).norm();
}

/// Closed-form trajectories from the kernel frozen at t0. Step t in the
/// output means t - t0 updates after t0 at the rate in force at t0.
inline PredictSummary predict(Run& run, std::optional<Step> t0_override = std::nullopt,
                              const std::vector<Step>& requested = {}) {
  auto& dir = run.dir();
  const auto& c = run.config();
  const auto& d = run.data();
  const auto available = run.checkpoints();
  PredictSummary out;
  out.t0 = t0_override.value_or(c.analysis.predict.t0);
  require(std::binary_search(available.begin(), available.end(), out.t0), "missing_checkpoint",
          "no checkpoint at t0 = " + std::to_string(out.t0));
  out.steps = requested.empty() ? c.analysis.predict.steps : requested;
  if (out.steps.empty())
    for (Step t : available)
      if (t >= out.t0) out.steps.push_back(t);
  for (Step t : out.steps) require(t >= out.t0, "invalid_argument", "prediction steps must not precede t0");

  dir.begin("predict");
  const auto net0 = run.network(out.t0);
  const Matrix A0 = net0.jacobian(d.train.inputs);
  const auto eval = nn::loss_and_residual(net0, d.train);
  const auto model = dynamics::make_constant_kernel_model(run.spectrum_or_compute(out.t0), eval.outputs,
                                                          eval.residual, c.optimizer.schedule.rate(out.t0));
  const Eigen::Index S = Eigen::Index(out.steps.size());
  out.train = Matrix(S, Eigen::Index(d.train.size()));
  const bool has_test = d.test_inputs.rows() > 0;
  out.test_gradient = Matrix(S, d.test_inputs.rows());
  out.test_eigenfunction = Matrix(S, d.test_inputs.rows());
  std::optional<dynamics::GradientTestPredictor> grad_form;
  spectral::CrossKernel cross;
  Vector f0_test;
  if (has_test) {
    grad_form.emplace(model, net0, A0, d.test_inputs);
    cross = spectral::cross_kernel(net0, d.test_inputs, d.train.inputs);
    f0_test = grad_form->initial_outputs();
  }
  std::string csv = "t,train_rel_error,test_gradient_rel_error,test_eigenfunction_rel_error,forms_rel_gap\n";
  for (Eigen::Index s = 0; s < S; ++s) {
    const Step t = out.steps[std::size_t(s)];
    PredictRow row;
    row.t = t;
    const Vector train_pred = dynamics::closed_form_train(model, t - out.t0).outputs;
    out.train.row(s) = train_pred.transpose();
    const bool have_actual = std::binary_search(available.begin(), available.end(), t);
    std::optional<nn::Network> actual;
    if (have_actual) {
      actual = run.network(t);
      row.train_error = relative_gap(train_pred, actual->forward_batch(d.train.inputs));
    }
    if (has_test) {
      const auto g = grad_form->predict(t - out.t0);
      out.skipped_modes = g.skipped_modes;
      const Vector e = dynamics::closed_form_test_eigenfunction(model, cross, f0_test, t - out.t0);
      out.test_gradient.row(s) = g.outputs.transpose();
      out.test_eigenfunction.row(s) = e.transpose();
      row.forms_gap = relative_gap(e, g.outputs);
      if (actual) {
        const Vector truth = actual->forward_batch(d.test_inputs);
        row.test_gradient_error = relative_gap(g.outputs, truth);
        row.test_eigenfunction_error = relative_gap(e, truth);
      }
    }
    out.rows.push_back(row);
    csv += std::to_string(t) + ',' + csv_number(row.train_error) + ',' + csv_number(row.test_gradient_error) + ',' +
           csv_number(row.test_eigenfunction_error) + ',' + csv_number(row.forms_gap) + '\n';
  }
  Matrix steps_col(S, 1);
  for (Eigen::Index s = 0; s < S; ++s) steps_col(s, 0) = double(out.steps[std::size_t(s)]);
  const std::string base = "predict/" + step_tag(out.t0) + "/";
  dir.write("predict", base + "steps.ksmat", matrix_bytes(steps_col));
  dir.write("predict", base + "train_closed_form.ksmat", matrix_bytes(out.train));
  if (has_test) {
    dir.write("predict", base + "test_gradient.ksmat", matrix_bytes(out.test_gradient));
    dir.write("predict", base + "test_eigenfunction.ksmat", matrix_bytes(out.test_eigenfunction));
  }
  dir.write("predict", base + "summary.csv", csv);
  dir.commit("predict");
  return out;
}

// ----------------------------------------------------------------- report

inline IntegrityReport report(Run& run) { return verify_run(run.dir()); }

}  // namespace kernelscope::harness
