#include "ntk/estimators.hpp"

#include "ntk/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ntk {

namespace {

// Seed streams. Every estimator derives its probe matrices from cfg.seed with
// these stream ids, so runs sharing a seed share probes.
constexpr std::uint64_t kSketchStream = 1;
constexpr std::uint64_t kResidualStream = 2;
constexpr std::uint64_t kBasisStream = 3;

// Probe pairs per batched AD call in the product estimators.
constexpr Index kSampleChunk = 32;

/// Snapshots operator and context counters and the clock, and writes the
/// deltas into a record.
class CostMeter {
 public:
  CostMeter(std::vector<const LinearOperator*> ops, std::set<const JacobianContext*> contexts)
      : ops_(std::move(ops)), contexts_(std::move(contexts)) {
    for (const auto* op : ops_) op->collect_contexts(contexts_);
    for (const auto* op : ops_) applications_ += op->matvec_count();
    for (const auto* ctx : contexts_) {
      jvp_ += ctx->jvp_calls();
      vjp_ += ctx->vjp_calls();
    }
    start_ = std::chrono::steady_clock::now();
  }

  void finish(EstimateRecord& rec) const {
    const auto stop = std::chrono::steady_clock::now();
    std::uint64_t apps = 0, jvp = 0, vjp = 0;
    for (const auto* op : ops_) apps += op->matvec_count();
    for (const auto* ctx : contexts_) {
      jvp += ctx->jvp_calls();
      vjp += ctx->vjp_calls();
    }
    rec.jvp_calls = jvp - jvp_;
    rec.vjp_calls = vjp - vjp_;
    const std::uint64_t ad = rec.jvp_calls + rec.vjp_calls;
    rec.matvec_cost = ad > 0 ? 0.5 * static_cast<double>(ad)
                             : static_cast<double>(apps - applications_);
    rec.wall_time = std::chrono::duration<double>(stop - start_).count();
  }

 private:
  std::vector<const LinearOperator*> ops_;
  std::set<const JacobianContext*> contexts_;
  std::uint64_t applications_ = 0;
  std::uint64_t jvp_ = 0;
  std::uint64_t vjp_ = 0;
  std::chrono::steady_clock::time_point start_;
};

EstimateRecord make_record(Estimator e, Quantity q, const EstimatorConfig& cfg, double value) {
  EstimateRecord rec;
  rec.value = value;
  rec.clamped = value;
  rec.estimator = e;
  rec.quantity = q;
  rec.config = cfg;
  return rec;
}

void clamp_into(EstimateRecord& rec, double lo, double hi) {
  rec.clamped = std::clamp(rec.value, lo, hi);
  rec.was_clamped = rec.clamped != rec.value;
}

/// Sum of column-wise quadratic forms: sum_j x_j^T y_j.
double paired_sum(const DenseMatrix& x, const DenseMatrix& y) { return x.cwiseProduct(y).sum(); }

Vector column_dots(const DenseMatrix& x, const DenseMatrix& y) {
  return x.cwiseProduct(y).colwise().sum().transpose();
}

double hutchpp_value(const LinearOperator& op, const EstimatorConfig& cfg) {
  if (cfg.m < 3) throw std::invalid_argument("hutchpp: m must be >= 3, got " + std::to_string(cfg.m));
  if (!(cfg.split > 0.0 && cfg.split < 1.0)) {
    throw std::invalid_argument("hutchpp: split must lie in (0, 1)");
  }
  const Index n = op.dim();
  Index sketch = static_cast<Index>(std::floor(cfg.split * static_cast<double>(cfg.m)));
  sketch = std::clamp<Index>(sketch, 1, (cfg.m - 1) / 2);
  sketch = std::min(sketch, n);

  const DenseMatrix s =
      draw_probes(n, {cfg.distribution, sketch, derive_seed(cfg.seed, kSketchStream)});
  const DenseMatrix q = thin_qr(op.matmat(s));

  double low_rank = 0.0;
  if (q.cols() > 0) low_rank = paired_sum(op.matmat(q), q);

  const Index residual = cfg.m - sketch - q.cols();
  const DenseMatrix t =
      draw_probes(n, {cfg.distribution, residual, derive_seed(cfg.seed, kResidualStream)});
  const DenseMatrix b = project_complement(q, t);
  const double tail = paired_sum(op.matmat(b), b) / static_cast<double>(residual);
  return low_rank + tail;
}

/// Lazily computed G(first) and G(second) per context, where G is vjp in
/// reverse mode and jvp in forward mode.
class ImageCache {
 public:
  ImageCache(AdMode mode, const DenseMatrix& first, const DenseMatrix& second)
      : mode_(mode), first_(first), second_(second) {}

  const DenseMatrix& image(const JacobianContext* ctx, bool second) {
    auto key = std::make_pair(ctx, second);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      const DenseMatrix& probes = second ? second_ : first_;
      DenseMatrix out = mode_ == AdMode::reverse ? ctx->vjp_batch(probes) : ctx->jvp_batch(probes);
      it = cache_.emplace(key, std::move(out)).first;
    }
    return it->second;
  }

  /// Per-pair samples of the product identity for tr(J1 J2^T J4 J3^T).
  Vector samples(const ContextQuad& j) {
    if (mode_ == AdMode::reverse) {
      return column_dots(image(j[0], false), image(j[1], true))
          .cwiseProduct(column_dots(image(j[2], false), image(j[3], true)));
    }
    return column_dots(image(j[2], false), image(j[0], true))
        .cwiseProduct(column_dots(image(j[3], false), image(j[1], true)));
  }

 private:
  AdMode mode_;
  const DenseMatrix& first_;
  const DenseMatrix& second_;
  std::map<std::pair<const JacobianContext*, bool>, DenseMatrix> cache_;
};

Index probe_dim(const JacobianContext& ctx, AdMode mode) {
  return mode == AdMode::reverse ? ctx.state_dim() : ctx.param_dim();
}

void check_quad(const ContextQuad& j) {
  for (const auto* ctx : j) {
    if (ctx == nullptr) throw std::invalid_argument("prop1: null context");
    if (ctx->state_dim() != j[0]->state_dim()) {
      throw std::invalid_argument("prop1: contexts must share the state space");
    }
  }
  if (j[0]->param_dim() != j[1]->param_dim() || j[2]->param_dim() != j[3]->param_dim()) {
    throw std::invalid_argument("prop1: paired contexts must share the parameter space");
  }
}

/// Draws cfg.m probe pairs in chunks and hands each chunk's cache to `visit`.
template <typename Visit>
void for_each_sample_chunk(Index dim, AdMode mode, const EstimatorConfig& cfg, Visit&& visit) {
  const std::uint64_t first_seed = derive_seed(cfg.seed, kSketchStream);
  const std::uint64_t second_seed = derive_seed(cfg.seed, kResidualStream);
  std::uint64_t chunk_id = 0;
  for (Index start = 0; start < cfg.m; start += kSampleChunk, ++chunk_id) {
    const Index width = std::min(kSampleChunk, cfg.m - start);
    const DenseMatrix first =
        draw_probes(dim, {cfg.distribution, width, derive_seed(first_seed, chunk_id)});
    const DenseMatrix second =
        draw_probes(dim, {cfg.distribution, width, derive_seed(second_seed, chunk_id)});
    ImageCache cache(mode, first, second);
    visit(cache);
  }
}

AdMode method_mode(MetricMethod method) {
  return method == MetricMethod::one_sided_forward ? AdMode::forward : AdMode::reverse;
}

Estimator method_estimator(MetricMethod method) {
  switch (method) {
    case MetricMethod::hutchpp: return Estimator::hutchpp;
    case MetricMethod::one_sided_reverse: return Estimator::prop1_reverse;
    case MetricMethod::one_sided_forward: return Estimator::prop1_forward;
  }
  return Estimator::hutchpp;
}

OperatorPtr square_of(const NtkPtr& op) {
  // NTK is symmetric, so NTK NTK^T = NTK NTK.
  return std::make_shared<ProductOperator>(std::vector<OperatorPtr>{op, op});
}

}  // namespace

double split_preset(std::string_view name) {
  if (name == "canonical") return kCanonicalSplit;
  if (name == "sixth") return kSixthSplit;
  throw std::invalid_argument("unknown split preset '" + std::string(name) + "'");
}

std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::hutchpp: return "hutchpp";
    case Estimator::hutchinson: return "hutchinson";
    case Estimator::rhutch: return "rhutch";
    case Estimator::fhutch: return "fhutch";
    case Estimator::prop1_reverse: return "prop1-reverse";
    case Estimator::prop1_forward: return "prop1-forward";
  }
  return "?";
}

std::string_view to_string(Quantity q) {
  switch (q) {
    case Quantity::trace: return "trace";
    case Quantity::frobenius_sq: return "frobenius_sq";
    case Quantity::alignment: return "alignment";
    case Quantity::effective_rank: return "effective_rank";
    case Quantity::product_trace: return "product_trace";
  }
  return "?";
}

std::string_view to_string(MetricMethod m) {
  switch (m) {
    case MetricMethod::hutchpp: return "hutchpp";
    case MetricMethod::one_sided_reverse: return "one_sided_reverse";
    case MetricMethod::one_sided_forward: return "one_sided_forward";
  }
  return "?";
}

Estimator parse_estimator(std::string_view name) {
  for (auto e : {Estimator::hutchpp, Estimator::hutchinson, Estimator::rhutch, Estimator::fhutch,
                 Estimator::prop1_reverse, Estimator::prop1_forward}) {
    if (name == to_string(e)) return e;
  }
  if (name == "prop1") return Estimator::prop1_reverse;
  throw std::invalid_argument("unknown estimator '" + std::string(name) + "'");
}

EstimateRecord hutchpp_trace(const LinearOperator& op, const EstimatorConfig& cfg) {
  CostMeter meter({&op}, {});
  auto rec = make_record(Estimator::hutchpp, Quantity::trace, cfg, hutchpp_value(op, cfg));
  meter.finish(rec);
  return rec;
}

EstimateRecord hutchinson_trace(const LinearOperator& op, const EstimatorConfig& cfg) {
  if (cfg.m < 1) throw std::invalid_argument("hutchinson: m must be >= 1");
  CostMeter meter({&op}, {});
  const Index n = op.dim();
  DenseMatrix probes;
  if (cfg.orthonormal_basis) {
    if (cfg.m > n) throw std::invalid_argument("hutchinson: orthonormal probes need m <= n");
    const DenseMatrix gauss = draw_probes(
        n, {ProbeDistribution::gaussian, cfg.m, derive_seed(cfg.seed, kBasisStream)});
    probes = std::sqrt(static_cast<double>(n)) * thin_qr(gauss);
  } else {
    probes = draw_probes(n, {cfg.distribution, cfg.m, derive_seed(cfg.seed, kResidualStream)});
  }
  const double value = paired_sum(op.matmat(probes), probes) / static_cast<double>(probes.cols());
  auto rec = make_record(Estimator::hutchinson, Quantity::trace, cfg, value);
  meter.finish(rec);
  return rec;
}

EstimateRecord one_sided_trace(const JacobianContext& ctx, AdMode mode,
                               const EstimatorConfig& cfg) {
  if (cfg.m < 2) throw std::invalid_argument("one-sided trace: m must be >= 2");
  CostMeter meter({}, {&ctx});
  const Index d = probe_dim(ctx, mode);
  auto apply = [&](const DenseMatrix& probes) {
    return mode == AdMode::reverse ? ctx.vjp_batch(probes) : ctx.jvp_batch(probes);
  };

  double value = 0.0;
  if (!cfg.orthogonalize_probes) {
    const DenseMatrix v =
        draw_probes(d, {cfg.distribution, cfg.m, derive_seed(cfg.seed, kResidualStream)});
    value = apply(v).squaredNorm() / static_cast<double>(cfg.m);
  } else {
    const Index sketch = cfg.m / 2;
    DenseMatrix q;
    if (sketch >= d) {
      // the sketch would span the whole space; any orthonormal basis is exact
      q = DenseMatrix::Identity(d, d);
    } else {
      q = thin_qr(draw_probes(d, {cfg.distribution, sketch, derive_seed(cfg.seed, kSketchStream)}));
    }
    const Index residual = cfg.m - q.cols();
    const DenseMatrix t =
        draw_probes(d, {cfg.distribution, residual, derive_seed(cfg.seed, kResidualStream)});
    DenseMatrix probes(d, cfg.m);
    probes.leftCols(q.cols()) = q;
    probes.rightCols(residual) = project_complement(q, t);
    const DenseMatrix images = apply(probes);
    value = images.leftCols(q.cols()).squaredNorm() +
            images.rightCols(residual).squaredNorm() / static_cast<double>(residual);
  }
  auto rec = make_record(mode == AdMode::reverse ? Estimator::rhutch : Estimator::fhutch,
                         Quantity::trace, cfg, value);
  meter.finish(rec);
  return rec;
}

Vector prop1_samples(const ContextQuad& contexts, AdMode mode, const DenseMatrix& first,
                     const DenseMatrix& second) {
  check_quad(contexts);
  if (first.cols() != second.cols()) {
    throw std::invalid_argument("prop1_samples: probe column counts differ");
  }
  ImageCache cache(mode, first, second);
  return cache.samples(contexts);
}

EstimateRecord prop1_product_trace(const ContextQuad& contexts, AdMode mode,
                                   const EstimatorConfig& cfg) {
  check_quad(contexts);
  if (cfg.m < 1) throw std::invalid_argument("prop1: m must be >= 1");
  CostMeter meter({}, {contexts.begin(), contexts.end()});
  double total = 0.0;
  for_each_sample_chunk(probe_dim(*contexts[0], mode), mode, cfg,
                        [&](ImageCache& cache) { total += cache.samples(contexts).sum(); });
  auto rec = make_record(mode == AdMode::reverse ? Estimator::prop1_reverse : Estimator::prop1_forward,
                         Quantity::product_trace, cfg, total / static_cast<double>(cfg.m));
  meter.finish(rec);
  return rec;
}

EstimateRecord frobenius_norm_sq(const NtkPtr& op, const EstimatorConfig& cfg,
                                 MetricMethod method) {
  EstimateRecord rec;
  if (method == MetricMethod::hutchpp) {
    const auto square = square_of(op);
    CostMeter meter({square.get()}, {});
    rec = make_record(Estimator::hutchpp, Quantity::frobenius_sq, cfg, hutchpp_value(*square, cfg));
    meter.finish(rec);
  } else {
    const auto* ctx = &op->context();
    rec = prop1_product_trace({ctx, ctx, ctx, ctx}, method_mode(method), cfg);
    rec.quantity = Quantity::frobenius_sq;
  }
  clamp_into(rec, 0.0, std::numeric_limits<double>::infinity());
  return rec;
}

EstimateRecord alignment(const NtkPtr& op1, const NtkPtr& op2, const EstimatorConfig& cfg,
                         MetricMethod method) {
  if (op1->dim() != op2->dim()) {
    throw std::invalid_argument("alignment: kernels act on different state spaces (" +
                                std::to_string(op1->dim()) + " vs " + std::to_string(op2->dim()) +
                                ")");
  }
  double numerator = 0.0, norm1 = 0.0, norm2 = 0.0;
  EstimateRecord rec;
  if (method == MetricMethod::hutchpp) {
    // NTK1^T NTK2 = NTK1 NTK2 for symmetric kernels
    const auto cross = std::make_shared<ProductOperator>(std::vector<OperatorPtr>{op1, op2});
    const auto sq1 = square_of(op1);
    const auto sq2 = square_of(op2);
    CostMeter meter({cross.get(), sq1.get(), sq2.get()}, {});
    numerator = hutchpp_value(*cross, cfg);
    norm1 = hutchpp_value(*sq1, cfg);
    norm2 = hutchpp_value(*sq2, cfg);
    meter.finish(rec);
  } else {
    const auto mode = method_mode(method);
    const auto* c1 = &op1->context();
    const auto* c2 = &op2->context();
    if (c1->param_dim() != c2->param_dim() && mode == AdMode::forward) {
      throw std::invalid_argument("alignment: forward mode needs a shared parameter space");
    }
    if (cfg.m < 1) throw std::invalid_argument("alignment: m must be >= 1");
    CostMeter meter({}, {c1, c2});
    for_each_sample_chunk(probe_dim(*c1, mode), mode, cfg, [&](ImageCache& cache) {
      numerator += cache.samples({c1, c1, c2, c2}).sum();
      norm1 += cache.samples({c1, c1, c1, c1}).sum();
      norm2 += cache.samples({c2, c2, c2, c2}).sum();
    });
    meter.finish(rec);
  }
  if (!(norm1 > 0.0) || !(norm2 > 0.0)) {
    throw DegenerateKernelError("alignment: Frobenius norm estimate is not positive");
  }
  const double value = numerator / (std::sqrt(norm1) * std::sqrt(norm2));
  auto out = make_record(method_estimator(method), Quantity::alignment, cfg, value);
  out.matvec_cost = rec.matvec_cost;
  out.jvp_calls = rec.jvp_calls;
  out.vjp_calls = rec.vjp_calls;
  out.wall_time = rec.wall_time;
  clamp_into(out, 0.0, 1.0);
  return out;
}

EstimateRecord effective_rank(const NtkPtr& op, const EstimatorConfig& cfg, MetricMethod method) {
  double trace = 0.0, norm = 0.0;
  EstimateRecord rec;
  if (method == MetricMethod::hutchpp) {
    const auto square = square_of(op);
    CostMeter meter({op.get(), square.get()}, {});
    trace = hutchpp_value(*op, cfg);
    norm = hutchpp_value(*square, cfg);
    meter.finish(rec);
  } else {
    const auto mode = method_mode(method);
    const auto* ctx = &op->context();
    if (cfg.m < 1) throw std::invalid_argument("effective_rank: m must be >= 1");
    CostMeter meter({}, {ctx});
    for_each_sample_chunk(probe_dim(*ctx, mode), mode, cfg, [&](ImageCache& cache) {
      trace += 0.5 * (cache.image(ctx, false).squaredNorm() + cache.image(ctx, true).squaredNorm());
      norm += cache.samples({ctx, ctx, ctx, ctx}).sum();
    });
    trace /= static_cast<double>(cfg.m);
    norm /= static_cast<double>(cfg.m);
    meter.finish(rec);
  }
  if (!(norm > 0.0)) {
    throw DegenerateKernelError("effective_rank: tr(NTK NTK^T) estimate is not positive");
  }
  auto out = make_record(method_estimator(method), Quantity::effective_rank, cfg,
                         trace * trace / norm);
  out.matvec_cost = rec.matvec_cost;
  out.jvp_calls = rec.jvp_calls;
  out.vjp_calls = rec.vjp_calls;
  out.wall_time = rec.wall_time;
  clamp_into(out, 0.0, static_cast<double>(op->dim()));
  return out;
}

}  // namespace ntk
