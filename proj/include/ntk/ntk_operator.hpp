#pragma once

#include "ntk/autodiff.hpp"
#include "ntk/linalg.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <set>
#include <vector>

namespace ntk {

/// Cumulative AD calls behind an operator, summed over distinct contexts.
struct AdCounts {
  std::uint64_t jvp = 0;
  std::uint64_t vjp = 0;
};

/// Matrix-free square operator on R^dim.
///
/// matmat() validates the shape, bumps the application counter by the number
/// of columns and forwards to apply(). The counter is the only mutable state.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  LinearOperator() = default;
  LinearOperator(const LinearOperator&) = delete;
  LinearOperator& operator=(const LinearOperator&) = delete;

  virtual Index dim() const = 0;

  DenseMatrix matmat(const DenseMatrix& v) const;
  Vector matvec(const Vector& v) const;

  std::uint64_t matvec_count() const { return matvecs_.load(std::memory_order_relaxed); }

  AdCounts ad_counts() const;
  /// Adds every Jacobian context this operator evaluates through.
  virtual void collect_contexts(std::set<const JacobianContext*>& out) const { (void)out; }

 protected:
  virtual DenseMatrix apply(const DenseMatrix& v) const = 0;

 private:
  mutable std::atomic<std::uint64_t> matvecs_{0};
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;
using ContextPtr = std::shared_ptr<const JacobianContext>;

/// Explicit square matrix.
class DenseOperator final : public LinearOperator {
 public:
  explicit DenseOperator(DenseMatrix matrix);
  Index dim() const override { return matrix_.rows(); }
  const DenseMatrix& matrix() const { return matrix_; }

 protected:
  DenseMatrix apply(const DenseMatrix& v) const override { return matrix_ * v; }

 private:
  DenseMatrix matrix_;
};

/// NTK(v) = jvp(vjp(v)) = J J^T v. Symmetric positive semidefinite.
class NtkOperator final : public LinearOperator {
 public:
  explicit NtkOperator(ContextPtr context);
  Index dim() const override { return context_->state_dim(); }
  const JacobianContext& context() const { return *context_; }
  const ContextPtr& context_ptr() const { return context_; }
  void collect_contexts(std::set<const JacobianContext*>& out) const override;

 protected:
  DenseMatrix apply(const DenseMatrix& v) const override;

 private:
  ContextPtr context_;
};

/// J_left J_right^T for two contexts over the same state space. Not symmetric
/// in general.
class CrossNtkOperator final : public LinearOperator {
 public:
  CrossNtkOperator(ContextPtr left, ContextPtr right);
  Index dim() const override { return left_->state_dim(); }
  void collect_contexts(std::set<const JacobianContext*>& out) const override;

 protected:
  DenseMatrix apply(const DenseMatrix& v) const override;

 private:
  ContextPtr left_;
  ContextPtr right_;
};

/// factors[0] * factors[1] * ... * factors.back(); the last factor is applied
/// first.
class ProductOperator final : public LinearOperator {
 public:
  explicit ProductOperator(std::vector<OperatorPtr> factors);
  Index dim() const override { return factors_.front()->dim(); }
  void collect_contexts(std::set<const JacobianContext*>& out) const override;

 protected:
  DenseMatrix apply(const DenseMatrix& v) const override;

 private:
  std::vector<OperatorPtr> factors_;
};

/// sum_i e_i^T A e_i using exactly dim() matvecs, issued in column blocks.
double exact_trace(const LinearOperator& op, Index block = 64);

/// Streams A e_i and B e_i in blocks and accumulates <A e_i, B e_i>, i.e.
/// tr(A^T B). Uses dim() matvecs of each operator (only of A when A and B are
/// the same object).
double exact_trace_product(const LinearOperator& a, const LinearOperator& b, Index block = 64);

inline constexpr Index kDenseCap = 4096;

/// Full dim x dim matrix through dim() matvecs. Refuses with CapacityError
/// when dim() exceeds `cap` unless `allow_over_cap` is set.
DenseMatrix dense_ntk(const LinearOperator& op, Index cap = kDenseCap, bool allow_over_cap = false);

}  // namespace ntk
