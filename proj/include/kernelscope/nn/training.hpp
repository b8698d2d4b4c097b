// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/nn/loss.hpp"
#include "kernelscope/nn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kernelscope::nn {

struct TraceRecord {
  Step t = 0;
  double delta = 0.0;
  double loss = 0.0;
  double residual_norm = 0.0;
  std::optional<std::size_t> checkpoint_id;
};

/// Immutable snapshot of the model and its training-point outputs at step t.
template <typename M>
struct Checkpoint {
  std::size_t id = 0;
  Step t = 0;
  double delta = 0.0;  // rate applied by the update leaving step t
  M model;
  Vector outputs;   // f_t at the training points
  Vector residual;  // m_t = f_t - y
};

enum class TrainingStatus { Completed, Diverged };

template <typename M>
struct TrainingTrace {
  std::vector<TraceRecord> records;
  std::vector<Checkpoint<M>> checkpoints;
  TrainingStatus status = TrainingStatus::Completed;
  std::optional<Step> diverged_at;
  std::string diagnostic;

  const Checkpoint<M>& checkpoint(std::size_t id) const {
    require(id < checkpoints.size(), "missing_checkpoint", "no checkpoint with id " + std::to_string(id));
    return checkpoints[id];
  }

  const Checkpoint<M>* at_step(Step t) const {
    auto it = std::lower_bound(checkpoints.begin(), checkpoints.end(), t,
                               [](const Checkpoint<M>& c, Step s) { return c.t < s; });
    return (it != checkpoints.end() && it->t == t) ? &*it : nullptr;
  }

  const Checkpoint<M>& require_step(Step t) const {
    const auto* c = at_step(t);
    require(c != nullptr, "missing_checkpoint", "no checkpoint at step " + std::to_string(t));
    return *c;
  }
};

struct TrainingPlan {
  std::vector<Step> checkpoint_steps;  // t = 0 is always added
  Step record_interval = 100;
  double divergence_loss = 1e12;  // loss above this aborts the run
};

/// Checkpoint steps: every step below dense_until, then a geometric
/// progression with the given growth, plus multiples of `every`; with
/// pair_next each step t < total also gets t + 1 so one-step differences
/// can be measured.
inline std::vector<Step> checkpoint_schedule(Step total_steps, Step dense_until = 100, double growth = 1.5,
                                             Step every = 0, bool pair_next = false) {
  std::set<Step> steps{0};
  for (Step t = 0; t < std::min(dense_until, total_steps + 1); ++t) steps.insert(t);
  if (growth > 1.0) {
    double t = double(std::max<Step>(dense_until, 1));
    while (t <= double(total_steps)) {
      steps.insert(Step(std::llround(t)));
      t *= growth;
    }
  }
  if (every > 0)
    for (Step t = every; t <= total_steps; t += every) steps.insert(t);
  steps.insert(total_steps);
  if (pair_next) {
    std::vector<Step> base(steps.begin(), steps.end());
    for (Step t : base)
      if (t < total_steps) steps.insert(t + 1);
  }
  return {steps.begin(), steps.end()};
}

/// Called for every checkpoint as it is taken; I/O errors propagate with
/// the step attached.
template <typename M>
using CheckpointSink = std::function<void(const Checkpoint<M>&)>;

/// Runs schedule.total_steps updates from `model`. Loss is recorded every
/// record_interval steps and at each checkpoint. A non-finite or exploding
/// loss stops the run and returns the partial trace marked Diverged.
template <DifferentiableModel M>
TrainingTrace<M> run_training(M model, const Dataset& data, const OptimizerConfig& config,
                              const TrainingPlan& plan, const CheckpointSink<M>& sink = {}) {
  const Step total = config.schedule.total_steps;
  std::set<Step> ckpt(plan.checkpoint_steps.begin(), plan.checkpoint_steps.end());
  ckpt.insert(0);
  require(*ckpt.rbegin() <= total, "config", "checkpoint step beyond total_steps");
  require(plan.record_interval > 0, "config", "record_interval must be positive");

  Optimizer<M> optimizer(config, data);
  TrainingTrace<M> trace;

  for (Step t = 0;; ++t) {
    const bool take_checkpoint = ckpt.count(t) > 0;
    const bool record = take_checkpoint || t % plan.record_interval == 0 || t == total;
    if (record) {
      const LossEvaluation eval = loss_and_residual(model, data);
      TraceRecord rec{t, config.schedule.rate(t), eval.loss, eval.residual.norm(), std::nullopt};
      const bool blown = !std::isfinite(eval.loss) || eval.loss > plan.divergence_loss;
      if (take_checkpoint && !blown) {
        rec.checkpoint_id = trace.checkpoints.size();
        trace.checkpoints.push_back({*rec.checkpoint_id, t, rec.delta, model, eval.outputs, eval.residual});
        if (sink) {
          try {
            sink(trace.checkpoints.back());
          } catch (const Error& e) {
            throw Error(e.code(), "step " + std::to_string(t) + ": " + e.what());
          } catch (const std::exception& e) {
            throw Error("io", "step " + std::to_string(t) + ": " + e.what());
          }
        }
      }
      trace.records.push_back(rec);
      if (blown) {
        trace.status = TrainingStatus::Diverged;
        trace.diverged_at = t;
        trace.diagnostic = "loss " + std::to_string(eval.loss) + " at step " + std::to_string(t);
        return trace;
      }
    }
    if (t >= total) break;
    try {
      optimizer.step(model, t);
    } catch (const Error& e) {
      if (e.code() != "diverged") throw;
      trace.status = TrainingStatus::Diverged;
      trace.diverged_at = t;
      trace.diagnostic = std::string(e.what()) + " at step " + std::to_string(t);
      return trace;
    }
  }
  return trace;
}

}  // namespace kernelscope::nn
