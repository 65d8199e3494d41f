#include "ntk/autodiff.hpp"

#include "model_detail.hpp"

#include <stdexcept>
#include <string>
#include <utility>

namespace ntk {

namespace {

void check_rows(const char* op, Index got, Index expected) {
  if (got != expected) {
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(expected) +
                                " rows, got " + std::to_string(got));
  }
}

/// A model context that owns the recorded forward pass.
class TapedContext : public JacobianContext {
 public:
  const Vector& output() const { return output_; }

 protected:
  Vector output_;
};

// Hand-written tangent and adjoint rules for the MLP. Batched products stack
// the k columns side by side as (features x batch*k) blocks; because Eigen is
// column-major, such a block is bit-identical in memory to the (n x k) matrix
// of flattened states.
class MlpJacobian final : public TapedContext {
 public:
  MlpJacobian(const MlpConfig& config, ParamVector params, const StateTensor& inputs)
      : config_(config), params_(std::move(params)), layers_(detail::mlp_layout(config)) {
    detail::check_params(config_, params_);
    detail::check_inputs(config_, inputs);
    const DenseMatrix x =
        detail::ConstMatrixMap(inputs.data.data(), config_.input_dim, config_.batch);
    trace_ = detail::mlp_trace(config_, params_.data.data(), x);
    const DenseMatrix& out = trace_.activations.back();
    output_ = Eigen::Map<const Vector>(out.data(), out.size());
  }

  Index state_dim() const override { return output_.size(); }
  Index param_dim() const override { return params_.data.size(); }

 protected:
  DenseMatrix apply_jvp(const DenseMatrix& tangents) const override {
    const Index k = tangents.cols();
    const Index batch = config_.batch;
    const double* theta = params_.data.data();
    DenseMatrix tangent;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      const DenseMatrix& a_prev = trace_.activations[l];
      const DenseMatrix& slope = trace_.slopes[l];
      DenseMatrix dz(layer.out, batch * k);
      if (l == 0) {
        dz.setZero();
      } else {
        detail::ConstMatrixMap w(theta + layer.weight_offset, layer.out, layer.in);
        dz.noalias() = w * tangent;
      }
      for (Index c = 0; c < k; ++c) {
        const double* dtheta = tangents.col(c).data();
        detail::ConstMatrixMap dw(dtheta + layer.weight_offset, layer.out, layer.in);
        detail::ConstVectorMap db(dtheta + layer.bias_offset, layer.out);
        auto block = dz.middleCols(c * batch, batch);
        block.noalias() += dw * a_prev;
        block.colwise() += db;
        block.array() *= slope.array();
      }
      tangent = std::move(dz);
    }
    return detail::ConstMatrixMap(tangent.data(), state_dim(), k);
  }

  DenseMatrix apply_vjp(const DenseMatrix& cotangents) const override {
    const Index k = cotangents.cols();
    const Index batch = config_.batch;
    const double* theta = params_.data.data();
    DenseMatrix grads = DenseMatrix::Zero(param_dim(), k);
    DenseMatrix g = detail::ConstMatrixMap(cotangents.data(), config_.out_dim(), batch * k);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      const DenseMatrix& a_prev = trace_.activations[l];
      const DenseMatrix& slope = trace_.slopes[l];
      for (Index c = 0; c < k; ++c) {
        auto block = g.middleCols(c * batch, batch);
        block.array() *= slope.array();
        double* grad = grads.col(c).data();
        detail::MatrixMap(grad + layer.weight_offset, layer.out, layer.in).noalias() =
            block * a_prev.transpose();
        detail::VectorMap(grad + layer.bias_offset, layer.out) = block.rowwise().sum();
      }
      if (l > 0) {
        detail::ConstMatrixMap w(theta + layer.weight_offset, layer.out, layer.in);
        DenseMatrix prev = w.transpose() * g;
        g = std::move(prev);
      }
    }
    return grads;
  }

 private:
  MlpConfig config_;
  ParamVector params_;
  std::vector<detail::AffineLayout> layers_;
  detail::MlpTrace trace_;
};

// GRU tangent and adjoint rules over the unrolled recurrence. Gate rows are
// ordered (r, z, n). Adjoints run in reverse time; the hidden state at step t
// receives its direct cotangent from the state vector plus the recurrent one
// carried back from step t + 1.
class GruJacobian final : public TapedContext {
 public:
  GruJacobian(const GruConfig& config, ParamVector params, const StateTensor& inputs)
      : config_(config), params_(std::move(params)), layout_(detail::gru_layout(config)) {
    detail::check_params(config_, params_);
    detail::check_inputs(config_, inputs);
    const auto xs = detail::split_timesteps(inputs.data.data(), config_.batch,
                                            config_.timesteps, config_.input_dim);
    trace_ = detail::gru_trace(config_, params_.data.data(), xs);
    output_.resize(ntk::state_dim(config_));
    for (Index t = 0; t < config_.timesteps; ++t) {
      detail::scatter_timestep(trace_.hidden[static_cast<std::size_t>(t + 1)], t, config_.batch,
                               config_.timesteps, output_.data());
    }
  }

  Index state_dim() const override { return output_.size(); }
  Index param_dim() const override { return params_.data.size(); }

 protected:
  DenseMatrix apply_jvp(const DenseMatrix& tangents) const override {
    const Index k = tangents.cols();
    const Index batch = config_.batch;
    const Index time = config_.timesteps;
    const Index h = layout_.hidden;
    const Index n = state_dim();
    detail::ConstMatrixMap w_hh(params_.data.data() + layout_.w_hh, 3 * h, h);

    DenseMatrix out(n, k);
    DenseMatrix dh = DenseMatrix::Zero(h, batch * k);
    DenseMatrix dgh(3 * h, batch * k);
    DenseMatrix next(h, batch * k);
    for (Index t = 0; t < time; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      const DenseMatrix& x = trace_.inputs[ts];
      const DenseMatrix& prev = trace_.hidden[ts];
      const auto r = trace_.reset[ts].array();
      const auto z = trace_.update[ts].array();
      const auto cand = trace_.candidate[ts].array();
      const auto hn = trace_.candidate_hidden[ts].array();

      if (t == 0) {
        dgh.setZero();
      } else {
        dgh.noalias() = w_hh * dh;
      }
      for (Index c = 0; c < k; ++c) {
        const double* dtheta = tangents.col(c).data();
        detail::ConstMatrixMap dw_ih(dtheta + layout_.w_ih, 3 * h, layout_.input);
        detail::ConstMatrixMap dw_hh(dtheta + layout_.w_hh, 3 * h, h);
        detail::ConstVectorMap db_ih(dtheta + layout_.b_ih, 3 * h);
        detail::ConstVectorMap db_hh(dtheta + layout_.b_hh, 3 * h);

        DenseMatrix dgi = dw_ih * x;
        dgi.colwise() += db_ih;
        auto gh = dgh.middleCols(c * batch, batch);
        gh.noalias() += dw_hh * prev;
        gh.colwise() += db_hh;

        const Eigen::ArrayXXd dr = r * (1.0 - r) * (dgi.topRows(h).array() + gh.topRows(h).array());
        const Eigen::ArrayXXd dz = z * (1.0 - z) *
                        (dgi.middleRows(h, h).array() + gh.middleRows(h, h).array());
        const Eigen::ArrayXXd dn = (1.0 - cand.square()) *
                        (dgi.bottomRows(h).array() + dr * hn + r * gh.bottomRows(h).array());
        next.middleCols(c * batch, batch).array() =
            dz * (prev.array() - cand) + (1.0 - z) * dn +
            z * dh.middleCols(c * batch, batch).array();
      }
      dh.swap(next);
      for (Index c = 0; c < k; ++c) {
        detail::scatter_timestep(dh.middleCols(c * batch, batch), t, batch, time,
                                 out.col(c).data());
      }
    }
    return out;
  }

  DenseMatrix apply_vjp(const DenseMatrix& cotangents) const override {
    const Index k = cotangents.cols();
    const Index batch = config_.batch;
    const Index time = config_.timesteps;
    const Index h = layout_.hidden;
    detail::ConstMatrixMap w_hh(params_.data.data() + layout_.w_hh, 3 * h, h);

    DenseMatrix grads = DenseMatrix::Zero(param_dim(), k);
    DenseMatrix carry = DenseMatrix::Zero(h, batch * k);
    DenseMatrix g(h, batch * k);
    DenseMatrix dgh(3 * h, batch * k);
    DenseMatrix dgi(3 * h, batch);
    for (Index t = time; t-- > 0;) {
      const auto ts = static_cast<std::size_t>(t);
      const DenseMatrix& x = trace_.inputs[ts];
      const DenseMatrix& prev = trace_.hidden[ts];
      const auto r = trace_.reset[ts].array();
      const auto z = trace_.update[ts].array();
      const auto cand = trace_.candidate[ts].array();
      const auto hn = trace_.candidate_hidden[ts].array();

      for (Index c = 0; c < k; ++c) {
        g.middleCols(c * batch, batch) =
            carry.middleCols(c * batch, batch) +
            detail::gather_timestep(cotangents.col(c).data(), t, batch, time, h);
      }
      for (Index c = 0; c < k; ++c) {
        const auto gb = g.middleCols(c * batch, batch).array();
        const DenseMatrix dan = (gb * (1.0 - z) * (1.0 - cand.square())).matrix();
        const DenseMatrix dar = (dan.array() * hn * r * (1.0 - r)).matrix();
        const DenseMatrix daz = (gb * (prev.array() - cand) * z * (1.0 - z)).matrix();
        dgi.topRows(h) = dar;
        dgi.middleRows(h, h) = daz;
        dgi.bottomRows(h) = dan;
        auto gh = dgh.middleCols(c * batch, batch);
        gh.topRows(h) = dar;
        gh.middleRows(h, h) = daz;
        gh.bottomRows(h) = (dan.array() * r).matrix();

        double* grad = grads.col(c).data();
        detail::MatrixMap(grad + layout_.w_ih, 3 * h, layout_.input).noalias() +=
            dgi * x.transpose();
        detail::VectorMap(grad + layout_.b_ih, 3 * h) += dgi.rowwise().sum();
        detail::MatrixMap(grad + layout_.w_hh, 3 * h, h).noalias() += gh * prev.transpose();
        detail::VectorMap(grad + layout_.b_hh, 3 * h) += gh.rowwise().sum();
      }
      carry.noalias() = w_hh.transpose() * dgh;
      for (Index c = 0; c < k; ++c) {
        carry.middleCols(c * batch, batch).array() += g.middleCols(c * batch, batch).array() * z;
      }
    }
    return grads;
  }

 private:
  GruConfig config_;
  ParamVector params_;
  detail::GruLayout layout_;
  detail::GruTrace trace_;
};

}  // namespace

Vector JacobianContext::jvp(const Vector& p) const { return jvp_batch(p).col(0); }

Vector JacobianContext::vjp(const Vector& v) const { return vjp_batch(v).col(0); }

DenseMatrix JacobianContext::jvp_batch(const DenseMatrix& tangents) const {
  check_rows("jvp", tangents.rows(), param_dim());
  jvp_calls_.fetch_add(static_cast<std::uint64_t>(tangents.cols()), std::memory_order_relaxed);
  if (tangents.cols() == 0) return DenseMatrix(state_dim(), 0);
  return apply_jvp(tangents);
}

DenseMatrix JacobianContext::vjp_batch(const DenseMatrix& cotangents) const {
  check_rows("vjp", cotangents.rows(), state_dim());
  vjp_calls_.fetch_add(static_cast<std::uint64_t>(cotangents.cols()), std::memory_order_relaxed);
  if (cotangents.cols() == 0) return DenseMatrix(param_dim(), 0);
  return apply_vjp(cotangents);
}

DenseJacobian::DenseJacobian(DenseMatrix jacobian) : jacobian_(std::move(jacobian)) {}

DenseMatrix DenseJacobian::apply_jvp(const DenseMatrix& tangents) const {
  return jacobian_ * tangents;
}

DenseMatrix DenseJacobian::apply_vjp(const DenseMatrix& cotangents) const {
  return jacobian_.transpose() * cotangents;
}

std::unique_ptr<JacobianContext> make_context(const ModelConfig& config, ParamVector params,
                                              StateTensor inputs) {
  if (const auto* mlp = std::get_if<MlpConfig>(&config)) {
    return std::make_unique<MlpJacobian>(*mlp, std::move(params), inputs);
  }
  return std::make_unique<GruJacobian>(std::get<GruConfig>(config), std::move(params), inputs);
}

const Vector& tape_output(const JacobianContext& context) {
  if (const auto* taped = dynamic_cast<const TapedContext*>(&context)) return taped->output();
  throw std::invalid_argument("tape_output: context has no recorded forward pass");
}

Vector jvp(const ModelConfig& config, const ParamVector& params, const StateTensor& inputs,
           const Vector& p) {
  return make_context(config, params, inputs)->jvp(p);
}

Vector vjp(const ModelConfig& config, const ParamVector& params, const StateTensor& inputs,
           const Vector& v) {
  return make_context(config, params, inputs)->vjp(v);
}

DenseMatrix jvp_batch(const ModelConfig& config, const ParamVector& params,
                      const StateTensor& inputs, const DenseMatrix& p) {
  return make_context(config, params, inputs)->jvp_batch(p);
}

DenseMatrix vjp_batch(const ModelConfig& config, const ParamVector& params,
                      const StateTensor& inputs, const DenseMatrix& v) {
  return make_context(config, params, inputs)->vjp_batch(v);
}

}  // namespace ntk
