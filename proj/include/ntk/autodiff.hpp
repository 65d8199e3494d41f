#pragma once

#include "ntk/linalg.hpp"
#include "ntk/model.hpp"

#include <atomic>
#include <cstdint>
#include <memory>

namespace ntk {

/// Jacobian products against J = dh/dtheta at a frozen (model, params, inputs).
///
/// Concrete contexts record whatever the products need at construction and
/// are immutable afterwards; the call counters are the only mutable state.
/// Every single-vector call counts 1, every batched call counts one per
/// column.
class JacobianContext {
 public:
  virtual ~JacobianContext() = default;
  JacobianContext() = default;
  JacobianContext(const JacobianContext&) = delete;
  JacobianContext& operator=(const JacobianContext&) = delete;

  virtual Index state_dim() const = 0;
  virtual Index param_dim() const = 0;

  /// J p.
  Vector jvp(const Vector& p) const;
  /// J^T v.
  Vector vjp(const Vector& v) const;
  /// Column-wise J P for P with param_dim() rows.
  DenseMatrix jvp_batch(const DenseMatrix& tangents) const;
  /// Column-wise J^T V for V with state_dim() rows.
  DenseMatrix vjp_batch(const DenseMatrix& cotangents) const;

  std::uint64_t jvp_calls() const { return jvp_calls_.load(std::memory_order_relaxed); }
  std::uint64_t vjp_calls() const { return vjp_calls_.load(std::memory_order_relaxed); }

 protected:
  virtual DenseMatrix apply_jvp(const DenseMatrix& tangents) const = 0;
  virtual DenseMatrix apply_vjp(const DenseMatrix& cotangents) const = 0;

 private:
  mutable std::atomic<std::uint64_t> jvp_calls_{0};
  mutable std::atomic<std::uint64_t> vjp_calls_{0};
};

/// Explicit Jacobian, e.g. the linear model h = X theta. Test and synthetic use.
class DenseJacobian final : public JacobianContext {
 public:
  explicit DenseJacobian(DenseMatrix jacobian);

  Index state_dim() const override { return jacobian_.rows(); }
  Index param_dim() const override { return jacobian_.cols(); }
  const DenseMatrix& matrix() const { return jacobian_; }

 protected:
  DenseMatrix apply_jvp(const DenseMatrix& tangents) const override;
  DenseMatrix apply_vjp(const DenseMatrix& cotangents) const override;

 private:
  DenseMatrix jacobian_;
};

/// Builds the architecture-specific context, recording the forward tape once.
std::unique_ptr<JacobianContext> make_context(const ModelConfig& config, ParamVector params,
                                              StateTensor inputs);

/// Model output as replayed from the recorded tape of a model context.
/// Throws std::invalid_argument for contexts that carry no tape.
const Vector& tape_output(const JacobianContext& context);

/// One-shot conveniences that build a context per call.
Vector jvp(const ModelConfig& config, const ParamVector& params, const StateTensor& inputs,
           const Vector& p);
Vector vjp(const ModelConfig& config, const ParamVector& params, const StateTensor& inputs,
           const Vector& v);
DenseMatrix jvp_batch(const ModelConfig& config, const ParamVector& params,
                      const StateTensor& inputs, const DenseMatrix& p);
DenseMatrix vjp_batch(const ModelConfig& config, const ParamVector& params,
                      const StateTensor& inputs, const DenseMatrix& v);

}  // namespace ntk
