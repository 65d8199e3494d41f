#pragma once

#include "ntk/estimators.hpp"
#include "ntk/model.hpp"
#include "ntk/ntk_operator.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ntk::bench {

/// Denominator of the relative error. `estimate` divides by the estimate |t_m|,
/// `exact` by the exact value.
enum class ErrorNormalization { estimate, exact };

struct EstimatorSweep {
  Estimator estimator = Estimator::hutchpp;
  std::vector<Index> budgets;
};

struct ExperimentSpec {
  std::string name = "sweep";
  ModelConfig model = MlpConfig{};
  /// trace for run_trace_sweep; frobenius_sq, alignment or effective_rank for
  /// run_metric_experiment.
  Quantity quantity = Quantity::trace;
  std::vector<EstimatorSweep> sweeps;
  int repeats = 50;
  /// Repeat r runs its estimator with probe seed `seed + r`.
  std::uint64_t seed = 0;
  /// Parameters and inputs are drawn from streams of this seed.
  std::uint64_t model_seed = 0;
  InitScheme init = InitScheme::torch_default;
  ProbeDistribution distribution = ProbeDistribution::rademacher;
  double split = kCanonicalSplit;
  bool orthogonalize_probes = true;
  ErrorNormalization normalization = ErrorNormalization::estimate;
  /// The exact baseline needs dim() matvecs; above this size it is refused
  /// unless allow_large_exact is set.
  Index exact_cap = kDenseCap;
  bool allow_large_exact = false;
};

/// Throws std::invalid_argument for empty sweeps, non-positive budgets or
/// repeats < 1.
void validate(const ExperimentSpec& spec);

/// Kernels under study. `second` is only used for alignment.
struct Subject {
  NtkPtr first;
  NtkPtr second;
};

/// NTK of spec.model at parameters and inputs drawn from spec.model_seed. For
/// alignment the second kernel uses an independent parameter draw on the same
/// inputs.
Subject make_subject(const ExperimentSpec& spec);

struct Percentiles {
  double p25 = 0.0;
  double median = 0.0;
  double p75 = 0.0;
};

/// Linear-interpolation percentile, q in [0, 1]. Throws on empty input.
double percentile(std::vector<double> values, double q);
Percentiles percentiles(const std::vector<double>& values);

struct SweepRow {
  Estimator estimator = Estimator::hutchpp;
  Index m = 0;
  std::uint64_t seed = 0;
  EstimateRecord record;
  double exact = 0.0;
  double rel_error = 0.0;
};

struct CurvePoint {
  Estimator estimator = Estimator::hutchpp;
  Index m = 0;
  Percentiles rel_error;
  Percentiles wall_time;
  double matvec_cost = 0.0;      // median
  double runtime_fraction = 0.0; // median wall time / exact wall time
};

/// Fastest (estimator, m) whose median relative error is at most `threshold`.
struct SpeedupPoint {
  double threshold = 0.0;
  Estimator estimator = Estimator::hutchpp;
  Index m = 0;
  double wall_time = 0.0;
  double speedup = 0.0;  // exact wall time / wall_time, same process
};

struct SweepResult {
  std::string name;
  Quantity quantity = Quantity::trace;
  Index dim = 0;
  double exact = 0.0;
  double exact_wall_time = 0.0;
  std::vector<SweepRow> rows;  // sorted by (estimator, m, seed)
  std::vector<CurvePoint> curves;
  std::vector<SpeedupPoint> speedups;
};

/// Accuracy levels reported by the speedup summary.
inline const std::vector<double> kSpeedupThresholds = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};

/// Runs every (estimator, budget) for spec.repeats seeds on tr(NTK) and
/// compares against the exact trace. hutchpp and hutchinson use NTK matvecs,
/// rhutch and fhutch the one-sided estimators. Throws CapacityError when the
/// exact baseline is over the cap and not allowed.
SweepResult run_trace_sweep(const ExperimentSpec& spec);
SweepResult run_trace_sweep(const Subject& subject, const ExperimentSpec& spec);

/// Same for ||NTK||_F^2, alignment(first, second) or effective rank. hutchpp
/// runs Hutch++ on the operator products; rhutch/prop1/prop1-reverse and
/// fhutch/prop1-forward run the one-sided product estimators.
SweepResult run_metric_experiment(const ExperimentSpec& spec);
SweepResult run_metric_experiment(const Subject& subject, const ExperimentSpec& spec);

/// Exact value of spec.quantity through dim() matvecs per kernel.
double exact_quantity(const Subject& subject, Quantity quantity);

double relative_error(double estimate, double exact, ErrorNormalization normalization);

}  // namespace ntk::bench
