// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

// kernelscope: command-line front end for the experiment pipeline.
//
//   kernelscope train --config exp.json [--out DIR] [--seed N] [--checkpoints 0,10,100] [--precision f32]
//   kernelscope spectrum --out DIR [--checkpoints LIST]
//   kernelscope align --out DIR [--modes LIST] [--k-grid LIST]
//   kernelscope dynamics-check --out DIR [--modes LIST]
//   kernelscope fourier --out DIR [--checkpoints LIST] [--modes LIST]
//   kernelscope predict --out DIR [--t0 STEP] [--checkpoints LIST]
//   kernelscope report --out DIR
//
// Results go to stdout as one JSON line. Failures print one JSON line
// {"error": code, "message": text} to stderr and exit nonzero.

#include "kernelscope/harness/pipeline.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <iostream>

namespace ks = kernelscope;
namespace hs = kernelscope::harness;
using hs::json;

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    T v{};
    const char* first = text.data() + pos;
    const char* last = text.data() + end;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (first == last || ec != std::errc() || ptr != last)
      throw ks::Error("usage", std::string(flag) + " expects a comma-separated list of non-negative integers");
    out.push_back(v);
    pos = end + 1;
  }
  return out;
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string checkpoints;
  std::string modes;
  std::string k_grid;
  std::string precision;
  std::optional<ks::Step> t0;

  hs::Overrides overrides() const {
    hs::Overrides o;
    o.seed = seed;
    if (!checkpoints.empty()) o.checkpoints = parse_list<ks::Step>(checkpoints, "--checkpoints");
    if (!modes.empty()) o.modes = parse_list<std::size_t>(modes, "--modes");
    if (!k_grid.empty()) o.k_grid = parse_list<std::size_t>(k_grid, "--k-grid");
    if (!precision.empty()) o.precision = precision;
    return o;
  }

  std::vector<ks::Step> steps() const {
    return checkpoints.empty() ? std::vector<ks::Step>{} : parse_list<ks::Step>(checkpoints, "--checkpoints");
  }

  /// Opens an existing run and applies the analysis overrides in memory.
  hs::Run open() const {
    auto run = hs::Run::open(out);
    hs::Overrides o;
    if (!modes.empty()) o.modes = parse_list<std::size_t>(modes, "--modes");
    if (!k_grid.empty()) o.k_grid = parse_list<std::size_t>(k_grid, "--k-grid");
    o.apply(run.config());
    return run;
  }
};

json steps_json(const std::vector<ks::Step>& steps) { return json(steps); }

int run_train(const Options& opt) {
  auto config = hs::load_config(opt.config);
  opt.overrides().apply(config);
  const std::filesystem::path out =
      !opt.out.empty() ? std::filesystem::path(opt.out) : config.base_dir / config.output_dir;
  auto run = hs::Run::create(config, out);
  const auto s = hs::train(run);
  if (s.status == ks::nn::TrainingStatus::Diverged)
    throw ks::Error("diverged", "training diverged at step " + std::to_string(s.diverged_at.value_or(0)) + ": " +
                                    s.diagnostic);
  std::cout << json{{"stage", "train"},
                    {"out", out.string()},
                    {"checkpoints", steps_json(s.checkpoints)},
                    {"final_loss", s.records.empty() ? 0.0 : s.records.back().loss}}
                   .dump()
            << '\n';
  return 0;
}

int run_spectrum(const Options& opt) {
  auto run = opt.open();
  const auto steps = hs::spectrum(run, opt.steps());
  json lambda_max = json::array();
  for (ks::Step t : steps) lambda_max.push_back(run.eigenvalues(t).lambda_max());
  std::cout << json{{"stage", "spectrum"}, {"spectra", steps_json(steps)}, {"lambda_max", lambda_max}}.dump() << '\n';
  return 0;
}

int run_align(const Options& opt) {
  auto run = opt.open();
  const auto s = hs::align(run);
  std::cout << json{{"stage", "align"},
                    {"alignment_rows", s.records.size()},
                    {"preservation_rows", s.preservation.size()},
                    {"trend_rows", s.trends.size()}}
                   .dump()
            << '\n';
  return 0;
}

int run_dynamics(const Options& opt) {
  auto run = opt.open();
  const auto s = hs::dynamics_check(run);
  json first = json::array();
  for (const auto& r : s.first_order) first.push_back({{"t", r.t}, {"error", r.error}, {"cos_alpha", r.cos_alpha}});
  json dg = json::array();
  for (const auto& [delta, err] : s.gramian_differential) dg.push_back({{"delta", delta}, {"abs_error", err}});
  std::cout << json{{"stage", "dynamics-check"},
                    {"first_order", first},
                    {"constant_kernel_rows", s.constant_kernel.size()},
                    {"gramian_differential", dg}}
                   .dump()
            << '\n';
  return 0;
}

int run_fourier(const Options& opt) {
  auto run = opt.open();
  const auto rows = hs::fourier_stage(run, opt.steps());
  json dominant = json::array();
  for (const auto& r : rows) dominant.push_back({{"t", r.t}, {"target", r.target}, {"xi", r.xi}, {"norm", r.norm}});
  std::cout << json{{"stage", "fourier"}, {"dominant", dominant}}.dump() << '\n';
  return 0;
}

int run_predict(const Options& opt) {
  auto run = opt.open();
  const auto s = hs::predict(run, opt.t0, opt.steps());
  json rows = json::array();
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  for (const auto& r : s.rows)
    rows.push_back({{"t", r.t},
                    {"train_rel_error", num(r.train_error)},
                    {"test_gradient_rel_error", num(r.test_gradient_error)},
                    {"test_eigenfunction_rel_error", num(r.test_eigenfunction_error)},
                    {"forms_rel_gap", num(r.forms_gap)}});
  std::cout << json{{"stage", "predict"}, {"t0", s.t0}, {"rows", rows}}.dump() << '\n';
  return 0;
}

int run_report(const Options& opt) {
  auto run = hs::Run::open(opt.out);
  const auto r = hs::report(run);
  const auto& m = run.dir().manifest();
  std::cout << json{{"stage", "report"},
                    {"manifest", (run.dir().root() / hs::kManifestName).string()},
                    {"files", r.files},
                    {"complete", r.complete},
                    {"incomplete", r.incomplete},
                    {"checkpoints", m.value("checkpoints", json::array())},
                    {"ok", r.ok()}}
                   .dump()
            << '\n';
  if (!r.ok()) {
    std::string detail;
    for (const auto& f : r.modified) detail += " modified:" + f;
    for (const auto& f : r.missing) detail += " missing:" + f;
    for (const auto& f : r.untracked) detail += " untracked:" + f;
    throw ks::Error("integrity", std::to_string(r.incomplete) + " file(s) not complete." + detail);
  }
  return 0;
}

int fail(const std::string& code, const std::string& message, int status) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernelscope: neural tangent kernel dynamics toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", hs::kToolkitVersion);
  Options opt;

  auto out_flag = [&](CLI::App* sub, bool required) {
    auto* o = sub->add_option("--out", opt.out, "run directory");
    if (required) o->required();
  };
  auto* train = app.add_subcommand("train", "train a network and write checkpoints");
  train->add_option("--config", opt.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  out_flag(train, false);
  train->add_option("--seed", opt.seed, "network and minibatch seed");
  train->add_option("--checkpoints", opt.checkpoints, "explicit checkpoint steps, comma-separated");
  train->add_option("--precision", opt.precision, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));

  auto* spectrum = app.add_subcommand("spectrum", "eigendecompose the Gramian at checkpoints");
  out_flag(spectrum, true);
  spectrum->add_option("--checkpoints", opt.checkpoints, "steps to analyze, comma-separated");

  auto* align = app.add_subcommand("align", "alignment, preservation and eigenvalue trends");
  out_flag(align, true);
  align->add_option("--modes", opt.modes, "one-based mode indices, comma-separated");
  align->add_option("--k-grid", opt.k_grid, "subspace sizes, comma-separated");

  auto* dyn = app.add_subcommand("dynamics-check", "first-order and constant-kernel checks");
  out_flag(dyn, true);
  dyn->add_option("--modes", opt.modes, "one-based mode indices, comma-separated");

  auto* fourier = app.add_subcommand("fourier", "sampled Fourier transforms of eigenvectors and residual");
  out_flag(fourier, true);
  fourier->add_option("--checkpoints", opt.checkpoints, "steps to analyze, comma-separated");
  fourier->add_option("--modes", opt.modes, "one-based mode indices, comma-separated");

  auto* predict = app.add_subcommand("predict", "closed-form trajectories from a frozen kernel");
  out_flag(predict, true);
  predict->add_option("--t0", opt.t0, "step whose kernel is frozen");
  predict->add_option("--checkpoints", opt.checkpoints, "prediction steps, comma-separated");

  auto* report = app.add_subcommand("report", "verify the manifest checksums");
  out_flag(report, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train) return run_train(opt);
    if (*spectrum) return run_spectrum(opt);
    if (*align) return run_align(opt);
    if (*dyn) return run_dynamics(opt);
    if (*fourier) return run_fourier(opt);
    if (*predict) return run_predict(opt);
    if (*report) return run_report(opt);
  } catch (const ks::Error& e) {
    return fail(e.code(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return fail("usage", "no subcommand", 2);
}
