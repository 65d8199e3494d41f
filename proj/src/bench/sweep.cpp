#include "ntk/bench/sweep.hpp"

#include "ntk/autodiff.hpp"
#include "ntk/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>

namespace ntk::bench {

namespace {

constexpr std::uint64_t kParamStream = 0;
constexpr std::uint64_t kInputStream = 1;
constexpr std::uint64_t kSecondParamStream = 2;

EstimatorConfig estimator_config(const ExperimentSpec& spec, Index m, std::uint64_t seed) {
  EstimatorConfig cfg;
  cfg.m = m;
  cfg.distribution = spec.distribution;
  cfg.seed = seed;
  cfg.split = spec.split;
  cfg.orthogonalize_probes = spec.orthogonalize_probes;
  return cfg;
}

void check_exact_feasible(const Subject& subject, const ExperimentSpec& spec) {
  const Index n = subject.first->dim();
  if (n > spec.exact_cap && !spec.allow_large_exact) {
    throw CapacityError("exact baseline needs " + std::to_string(n) +
                        " NTK matvecs per kernel, above the cap of " +
                        std::to_string(spec.exact_cap) +
                        "; rerun with --allow-large-exact to pay for it");
  }
}

MetricMethod metric_method(Estimator e) {
  switch (e) {
    case Estimator::hutchpp: return MetricMethod::hutchpp;
    case Estimator::rhutch:
    case Estimator::prop1_reverse: return MetricMethod::one_sided_reverse;
    case Estimator::fhutch:
    case Estimator::prop1_forward: return MetricMethod::one_sided_forward;
    case Estimator::hutchinson: break;
  }
  throw std::invalid_argument("estimator '" + std::string(to_string(e)) +
                              "' has no metric variant; use hutchpp or prop1");
}

EstimateRecord run_trace_estimator(const Subject& subject, Estimator e,
                                   const EstimatorConfig& cfg) {
  switch (e) {
    case Estimator::hutchpp: return hutchpp_trace(*subject.first, cfg);
    case Estimator::hutchinson: return hutchinson_trace(*subject.first, cfg);
    case Estimator::rhutch: return one_sided_trace(subject.first->context(), AdMode::reverse, cfg);
    case Estimator::fhutch: return one_sided_trace(subject.first->context(), AdMode::forward, cfg);
    default: break;
  }
  throw std::invalid_argument("estimator '" + std::string(to_string(e)) +
                              "' does not estimate a trace; use the norm/align/effrank commands");
}

EstimateRecord run_metric_estimator(const Subject& subject, Quantity q, Estimator e,
                                    const EstimatorConfig& cfg) {
  const auto method = metric_method(e);
  switch (q) {
    case Quantity::frobenius_sq: return frobenius_norm_sq(subject.first, cfg, method);
    case Quantity::alignment: return alignment(subject.first, subject.second, cfg, method);
    case Quantity::effective_rank: return effective_rank(subject.first, cfg, method);
    default: break;
  }
  throw std::invalid_argument("quantity '" + std::string(to_string(q)) + "' is not a kernel metric");
}

template <class Run>
SweepResult sweep(const Subject& subject, const ExperimentSpec& spec, Run&& run) {
  validate(spec);
  check_exact_feasible(subject, spec);

  SweepResult result;
  result.name = spec.name;
  result.quantity = spec.quantity;
  result.dim = subject.first->dim();
  const auto start = std::chrono::steady_clock::now();
  result.exact = exact_quantity(subject, spec.quantity);
  result.exact_wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (const auto& s : spec.sweeps) {
    for (Index m : s.budgets) {
      for (int r = 0; r < spec.repeats; ++r) {
        const std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(r);
        SweepRow row;
        row.record = run(s.estimator, estimator_config(spec, m, seed));
        row.estimator = row.record.estimator;
        row.m = m;
        row.seed = seed;
        row.exact = result.exact;
        row.rel_error = relative_error(row.record.value, result.exact, spec.normalization);
        result.rows.push_back(row);
      }
    }
  }
  std::stable_sort(result.rows.begin(), result.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.estimator, a.m, a.seed) < std::tie(b.estimator, b.m, b.seed);
  });

  std::map<std::pair<Estimator, Index>, std::vector<const SweepRow*>> groups;
  for (const auto& row : result.rows) groups[{row.estimator, row.m}].push_back(&row);
  for (const auto& [key, rows] : groups) {
    std::vector<double> errors, times, costs;
    for (const auto* row : rows) {
      errors.push_back(row->rel_error);
      times.push_back(row->record.wall_time);
      costs.push_back(row->record.matvec_cost);
    }
    CurvePoint p;
    p.estimator = key.first;
    p.m = key.second;
    p.rel_error = percentiles(errors);
    p.wall_time = percentiles(times);
    p.matvec_cost = percentile(costs, 0.5);
    p.runtime_fraction =
        result.exact_wall_time > 0.0 ? p.wall_time.median / result.exact_wall_time : 0.0;
    result.curves.push_back(p);
  }

  for (double threshold : kSpeedupThresholds) {
    const CurvePoint* best = nullptr;
    for (const auto& p : result.curves) {
      if (p.rel_error.median <= threshold &&
          (!best || p.wall_time.median < best->wall_time.median)) {
        best = &p;
      }
    }
    if (!best) continue;
    SpeedupPoint s;
    s.threshold = threshold;
    s.estimator = best->estimator;
    s.m = best->m;
    s.wall_time = best->wall_time.median;
    s.speedup = s.wall_time > 0.0 ? result.exact_wall_time / s.wall_time
                                  : std::numeric_limits<double>::infinity();
    result.speedups.push_back(s);
  }
  return result;
}

}  // namespace

void validate(const ExperimentSpec& spec) {
  if (spec.repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (spec.sweeps.empty()) throw std::invalid_argument("no estimators to run");
  for (const auto& s : spec.sweeps) {
    if (s.budgets.empty()) {
      throw std::invalid_argument("no budgets for estimator " + std::string(to_string(s.estimator)));
    }
    for (Index m : s.budgets) {
      if (m < 1) throw std::invalid_argument("budgets must be positive, got " + std::to_string(m));
    }
  }
}

Subject make_subject(const ExperimentSpec& spec) {
  const auto inputs = make_inputs(spec.model, derive_seed(spec.model_seed, kInputStream));
  auto kernel = [&](std::uint64_t stream) {
    ContextPtr ctx = make_context(
        spec.model, init_params(spec.model, derive_seed(spec.model_seed, stream), spec.init),
        inputs);
    return std::make_shared<const NtkOperator>(std::move(ctx));
  };
  Subject s;
  s.first = kernel(kParamStream);
  if (spec.quantity == Quantity::alignment) s.second = kernel(kSecondParamStream);
  return s;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

Percentiles percentiles(const std::vector<double>& values) {
  return {percentile(values, 0.25), percentile(values, 0.5), percentile(values, 0.75)};
}

double relative_error(double estimate, double exact, ErrorNormalization normalization) {
  const double denom = std::abs(normalization == ErrorNormalization::estimate ? estimate : exact);
  const double diff = std::abs(exact - estimate);
  if (diff == 0.0) return 0.0;
  return denom > 0.0 ? diff / denom : std::numeric_limits<double>::infinity();
}

double exact_quantity(const Subject& subject, Quantity quantity) {
  const auto& a = *subject.first;
  switch (quantity) {
    case Quantity::trace: return exact_trace(a);
    case Quantity::frobenius_sq: return exact_trace_product(a, a);
    case Quantity::alignment: {
      if (!subject.second) throw std::invalid_argument("alignment needs two kernels");
      const auto& b = *subject.second;
      if (b.dim() != a.dim()) throw std::invalid_argument("alignment: kernel dimensions differ");
      const double cross = exact_trace_product(a, b);
      const double na = exact_trace_product(a, a);
      const double nb = &a == &b ? na : exact_trace_product(b, b);
      if (!(na > 0.0) || !(nb > 0.0)) {
        throw DegenerateKernelError("alignment: a kernel has zero Frobenius norm");
      }
      return cross / (std::sqrt(na) * std::sqrt(nb));
    }
    case Quantity::effective_rank: {
      // one pass over the columns gives both the diagonal and the squared norm
      const Index n = a.dim();
      constexpr Index block = 64;
      double trace = 0.0, norm = 0.0;
      for (Index start = 0; start < n; start += block) {
        const Index width = std::min(block, n - start);
        DenseMatrix unit = DenseMatrix::Zero(n, width);
        for (Index j = 0; j < width; ++j) unit(start + j, j) = 1.0;
        const DenseMatrix image = a.matmat(unit);
        for (Index j = 0; j < width; ++j) trace += image(start + j, j);
        norm += image.squaredNorm();
      }
      if (!(norm > 0.0)) throw DegenerateKernelError("effective_rank: zero kernel");
      return trace * trace / norm;
    }
    case Quantity::product_trace: break;
  }
  throw std::invalid_argument("no exact baseline for " + std::string(to_string(quantity)));
}

SweepResult run_trace_sweep(const ExperimentSpec& spec) {
  if (spec.quantity != Quantity::trace) {
    throw std::invalid_argument("run_trace_sweep: spec.quantity must be trace");
  }
  return run_trace_sweep(make_subject(spec), spec);
}

SweepResult run_trace_sweep(const Subject& subject, const ExperimentSpec& spec) {
  if (spec.quantity != Quantity::trace) {
    throw std::invalid_argument("run_trace_sweep: spec.quantity must be trace");
  }
  for (const auto& s : spec.sweeps) {
    if (s.estimator == Estimator::prop1_reverse || s.estimator == Estimator::prop1_forward) {
      throw std::invalid_argument("prop1 estimates products of kernels, not tr(NTK)");
    }
  }
  return sweep(subject, spec, [&](Estimator e, const EstimatorConfig& cfg) {
    return run_trace_estimator(subject, e, cfg);
  });
}

SweepResult run_metric_experiment(const ExperimentSpec& spec) {
  return run_metric_experiment(make_subject(spec), spec);
}

SweepResult run_metric_experiment(const Subject& subject, const ExperimentSpec& spec) {
  if (spec.quantity == Quantity::trace || spec.quantity == Quantity::product_trace) {
    throw std::invalid_argument("run_metric_experiment: quantity must be a kernel metric");
  }
  for (const auto& s : spec.sweeps) metric_method(s.estimator);
  return sweep(subject, spec, [&](Estimator e, const EstimatorConfig& cfg) {
    return run_metric_estimator(subject, spec.quantity, e, cfg);
  });
}

}  // namespace ntk::bench
