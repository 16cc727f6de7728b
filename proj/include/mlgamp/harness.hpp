#pragma once

#include "mlgamp/gamp.hpp"
#include "mlgamp/state_evolution.hpp"

namespace mlgamp {

/// ||est - truth||^2 / ||truth||^2.
double nmse(const Vec& est, const Vec& truth);

/// Hard-decision QPSK symbol error rate.  A symbol errs when any of its
/// real components changes sign relative to the truth.
double ser_qpsk(const Vec& est, const Vec& truth, Field field);

/// Exact posterior mean of a QPSK signal by enumerating the constellation.
/// Supported models: AWGN at every layer (any noise split), or a quantized
/// last layer with all earlier layers noiseless.  Throws for anything else.
Vec brute_force_posterior(const ModelSpec& spec, const Instance& inst);

struct ExperimentConfig {
  ModelSpec spec;
  GampOptions opts;
  int trials = 1;
  std::uint64_t seed = 0;
  int jobs = 0;  // 0: hardware concurrency
  bool with_se = false;
  QuadratureSpec quad;
};

struct TrialResult {
  std::vector<double> nmse;  // per iteration
  std::vector<double> ser;
  bool converged = false;
  bool diverged = false;
};

struct ExperimentResult {
  std::vector<TrialResult> trials;
  std::vector<double> mean_nmse;  // per iteration, trials padded with their last value
  std::vector<double> mean_ser;
  SeTrace se;
  bool has_se = false;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace mlgamp
