#include "ntk/ntk_operator.hpp"

#include "ntk/errors.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>

namespace ntk {

DenseMatrix LinearOperator::matmat(const DenseMatrix& v) const {
  if (v.rows() != dim()) {
    throw std::invalid_argument("operator of dimension " + std::to_string(dim()) +
                                " applied to " + std::to_string(v.rows()) + " rows");
  }
  matvecs_.fetch_add(static_cast<std::uint64_t>(v.cols()), std::memory_order_relaxed);
  if (v.cols() == 0) return DenseMatrix(dim(), 0);
  return apply(v);
}

Vector LinearOperator::matvec(const Vector& v) const { return matmat(v).col(0); }

AdCounts LinearOperator::ad_counts() const {
  std::set<const JacobianContext*> contexts;
  collect_contexts(contexts);
  AdCounts counts;
  for (const auto* ctx : contexts) {
    counts.jvp += ctx->jvp_calls();
    counts.vjp += ctx->vjp_calls();
  }
  return counts;
}

DenseOperator::DenseOperator(DenseMatrix matrix) : matrix_(std::move(matrix)) {
  if (matrix_.rows() != matrix_.cols()) {
    throw std::invalid_argument("DenseOperator: matrix must be square");
  }
}

NtkOperator::NtkOperator(ContextPtr context) : context_(std::move(context)) {
  if (!context_) throw std::invalid_argument("NtkOperator: null context");
}

void NtkOperator::collect_contexts(std::set<const JacobianContext*>& out) const {
  out.insert(context_.get());
}

DenseMatrix NtkOperator::apply(const DenseMatrix& v) const {
  return context_->jvp_batch(context_->vjp_batch(v));
}

CrossNtkOperator::CrossNtkOperator(ContextPtr left, ContextPtr right)
    : left_(std::move(left)), right_(std::move(right)) {
  if (!left_ || !right_) throw std::invalid_argument("CrossNtkOperator: null context");
  if (left_->state_dim() != right_->state_dim() || left_->param_dim() != right_->param_dim()) {
    throw std::invalid_argument("CrossNtkOperator: contexts must share state and parameter spaces");
  }
}

void CrossNtkOperator::collect_contexts(std::set<const JacobianContext*>& out) const {
  out.insert(left_.get());
  out.insert(right_.get());
}

DenseMatrix CrossNtkOperator::apply(const DenseMatrix& v) const {
  return left_->jvp_batch(right_->vjp_batch(v));
}

ProductOperator::ProductOperator(std::vector<OperatorPtr> factors) : factors_(std::move(factors)) {
  if (factors_.empty()) throw std::invalid_argument("ProductOperator: no factors");
  for (const auto& f : factors_) {
    if (!f) throw std::invalid_argument("ProductOperator: null factor");
    if (f->dim() != factors_.front()->dim()) {
      throw std::invalid_argument("ProductOperator: factor dimensions differ");
    }
  }
}

void ProductOperator::collect_contexts(std::set<const JacobianContext*>& out) const {
  for (const auto& f : factors_) f->collect_contexts(out);
}

DenseMatrix ProductOperator::apply(const DenseMatrix& v) const {
  DenseMatrix out = factors_.back()->matmat(v);
  for (auto it = std::next(factors_.rbegin()); it != factors_.rend(); ++it) {
    out = (*it)->matmat(out);
  }
  return out;
}

double exact_trace(const LinearOperator& op, Index block) {
  const Index n = op.dim();
  block = std::max<Index>(1, block);
  double trace = 0.0;
  for (Index start = 0; start < n; start += block) {
    const Index width = std::min(block, n - start);
    DenseMatrix unit = DenseMatrix::Zero(n, width);
    for (Index j = 0; j < width; ++j) unit(start + j, j) = 1.0;
    const DenseMatrix image = op.matmat(unit);
    for (Index j = 0; j < width; ++j) trace += image(start + j, j);
  }
  return trace;
}

double exact_trace_product(const LinearOperator& a, const LinearOperator& b, Index block) {
  const Index n = a.dim();
  if (b.dim() != n) throw std::invalid_argument("exact_trace_product: dimension mismatch");
  block = std::max<Index>(1, block);
  double total = 0.0;
  for (Index start = 0; start < n; start += block) {
    const Index width = std::min(block, n - start);
    DenseMatrix unit = DenseMatrix::Zero(n, width);
    for (Index j = 0; j < width; ++j) unit(start + j, j) = 1.0;
    const DenseMatrix left = a.matmat(unit);
    if (&a == &b) {
      total += left.squaredNorm();
    } else {
      total += left.cwiseProduct(b.matmat(unit)).sum();
    }
  }
  return total;
}

DenseMatrix dense_ntk(const LinearOperator& op, Index cap, bool allow_over_cap) {
  const Index n = op.dim();
  if (n > cap && !allow_over_cap) {
    throw CapacityError("dense_ntk: dimension " + std::to_string(n) + " exceeds the cap of " +
                        std::to_string(cap) + "; pass the override flag to materialize anyway");
  }
  DenseMatrix out(n, n);
  constexpr Index block = 64;
  for (Index start = 0; start < n; start += block) {
    const Index width = std::min(block, n - start);
    DenseMatrix unit = DenseMatrix::Zero(n, width);
    for (Index j = 0; j < width; ++j) unit(start + j, j) = 1.0;
    out.middleCols(start, width) = op.matmat(unit);
  }
  return out;
}

}  // namespace ntk
