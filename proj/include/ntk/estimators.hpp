#pragma once

#include "ntk/autodiff.hpp"
#include "ntk/linalg.hpp"
#include "ntk/ntk_operator.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string_view>

namespace ntk {

/// Sketch fraction of the canonical Hutch++ split (S, Q and residual each m/3).
inline constexpr double kCanonicalSplit = 1.0 / 3.0;
/// Sketch fraction floor(m/6), the lighter sketch.
inline constexpr double kSixthSplit = 1.0 / 6.0;

/// Resolves "canonical" or "sixth" to a sketch fraction.
double split_preset(std::string_view name);

struct EstimatorConfig {
  /// Total budget in the estimator's native currency: NTK matvecs for
  /// Hutch++/Hutchinson, single AD calls for the one-sided trace, (u, v)
  /// sample pairs for the product estimators.
  Index m = 30;
  ProbeDistribution distribution = ProbeDistribution::rademacher;
  std::uint64_t seed = 0;
  /// Fraction of the Hutch++ budget spent on the sketch NTK(S).
  double split = kCanonicalSplit;
  /// QR of the one-sided sketch S; without it the one-sided estimator is plain
  /// Hutchinson on ||G v||^2.
  bool orthogonalize_probes = true;
  /// Debug: plain Hutchinson with sqrt(n)-scaled Haar-orthonormal probes, exact
  /// when m == n.
  bool orthonormal_basis = false;
};

enum class Estimator { hutchpp, hutchinson, rhutch, fhutch, prop1_reverse, prop1_forward };
enum class Quantity { trace, frobenius_sq, alignment, effective_rank, product_trace };
enum class AdMode { reverse, forward };
enum class MetricMethod { hutchpp, one_sided_reverse, one_sided_forward };

std::string_view to_string(Estimator e);
std::string_view to_string(Quantity q);
std::string_view to_string(MetricMethod m);
Estimator parse_estimator(std::string_view name);

struct EstimateRecord {
  double value = 0.0;    // raw estimate
  double clamped = 0.0;  // value clamped to the quantity's admissible range
  bool was_clamped = false;
  /// NTK-matvec units: one jvp + one vjp = 1, a bare jvp or vjp = 1/2. For
  /// operators with no AD behind them this is the number of applications.
  double matvec_cost = 0.0;
  std::uint64_t jvp_calls = 0;
  std::uint64_t vjp_calls = 0;
  double wall_time = 0.0;  // seconds, monotonic clock
  Estimator estimator = Estimator::hutchpp;
  Quantity quantity = Quantity::trace;
  EstimatorConfig config;
};

/// Hutch++: tr(Q^T A Q) + tr(B^T A B) / cols(B) with Q = orth(A S) and
/// B = (I - QQ^T) T. The sketch width is floor(split * m), clamped to
/// [1, (m - 1) / 2] and to dim(); the residual gets every matvec the sketch
/// and the Q-term did not use, so exactly m matvecs are issued.
EstimateRecord hutchpp_trace(const LinearOperator& op, const EstimatorConfig& cfg);

/// (1/m) sum_i v_i^T A v_i.
EstimateRecord hutchinson_trace(const LinearOperator& op, const EstimatorConfig& cfg);

/// tr(J J^T) from one AD mode only: reverse samples G = vjp on the state
/// space, forward samples G = jvp on the parameter space. Issues exactly m
/// calls of the selected mode when probes are full rank.
EstimateRecord one_sided_trace(const JacobianContext& ctx, AdMode mode, const EstimatorConfig& cfg);

/// Estimates tr(J1 J2^T J4 J3^T) from cfg.m independent probe pairs.
/// Reverse mode averages <J1^T u, J2^T v> <J3^T u, J4^T v> over u, v in the
/// state space; forward mode averages <J3 p, J1 q> <J4 p, J2 q> over p, q in
/// the parameter space. Products are shared when contexts repeat.
using ContextQuad = std::array<const JacobianContext*, 4>;
EstimateRecord prop1_product_trace(const ContextQuad& contexts, AdMode mode,
                                   const EstimatorConfig& cfg);

/// Per-pair samples of prop1_product_trace for caller-supplied probe columns
/// (u_i, v_i) or (p_i, q_i). Used for exhaustive enumeration.
Vector prop1_samples(const ContextQuad& contexts, AdMode mode, const DenseMatrix& first,
                     const DenseMatrix& second);

using NtkPtr = std::shared_ptr<const NtkOperator>;

/// ||NTK||_F^2 = tr(NTK NTK^T).
EstimateRecord frobenius_norm_sq(const NtkPtr& op, const EstimatorConfig& cfg,
                                 MetricMethod method);

/// tr(NTK1^T NTK2) / (||NTK1||_F ||NTK2||_F). Numerator and both norms reuse
/// one probe stream, so alignment(op, op) is exactly 1. `clamped` is in [0, 1].
EstimateRecord alignment(const NtkPtr& op1, const NtkPtr& op2, const EstimatorConfig& cfg,
                         MetricMethod method);

/// tr(NTK)^2 / tr(NTK NTK^T). `clamped` is in [0, n]; throws
/// DegenerateKernelError when the denominator estimate is not positive.
EstimateRecord effective_rank(const NtkPtr& op, const EstimatorConfig& cfg, MetricMethod method);

}  // namespace ntk
