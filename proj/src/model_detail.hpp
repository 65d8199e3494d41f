#pragma once

// Parameter layouts and recorded forward passes shared by the model and
// autodiff translation units.

#include "ntk/model.hpp"

#include <vector>

namespace ntk::detail {

struct AffineLayout {
  Index in = 0;
  Index out = 0;
  Index weight_offset = 0;
  Index bias_offset = 0;
};

std::vector<AffineLayout> mlp_layout(const MlpConfig& config);

struct GruLayout {
  Index input = 0;
  Index hidden = 0;
  Index w_ih = 0;  // 3H x I
  Index w_hh = 0;  // 3H x H
  Index b_ih = 0;  // 3H
  Index b_hh = 0;  // 3H
  Index total = 0;
};

GruLayout gru_layout(const GruConfig& config);

using ConstMatrixMap = Eigen::Map<const DenseMatrix>;
using MatrixMap = Eigen::Map<DenseMatrix>;
using ConstVectorMap = Eigen::Map<const Vector>;
using VectorMap = Eigen::Map<Vector>;

/// Activations and slopes of one MLP evaluation. Matrices are
/// features x batch; activations[0] is the input, activations[l + 1] the
/// output of layer l, slopes[l] the activation derivative at layer l.
struct MlpTrace {
  std::vector<DenseMatrix> activations;
  std::vector<DenseMatrix> slopes;
};

MlpTrace mlp_trace(const MlpConfig& config, const double* params, const DenseMatrix& inputs);

/// Per-timestep quantities of one GRU unroll, all hidden x batch except
/// `inputs` (input_dim x batch). hidden[t] is the state entering step t,
/// hidden[T] the final state. candidate_hidden[t] = W_hn h + b_hn.
struct GruTrace {
  std::vector<DenseMatrix> inputs;
  std::vector<DenseMatrix> hidden;
  std::vector<DenseMatrix> reset;
  std::vector<DenseMatrix> update;
  std::vector<DenseMatrix> candidate;
  std::vector<DenseMatrix> candidate_hidden;
};

GruTrace gru_trace(const GruConfig& config, const double* params,
                   const std::vector<DenseMatrix>& inputs);

/// batch x time x features flat data <-> per-timestep features x batch slices.
std::vector<DenseMatrix> split_timesteps(const double* data, Index batch, Index time,
                                         Index features);
void scatter_timestep(const DenseMatrix& slice, Index t, Index batch, Index time, double* out);
DenseMatrix gather_timestep(const double* data, Index t, Index batch, Index time,
                            Index features);

void check_params(const ModelConfig& config, const ParamVector& params);
void check_inputs(const ModelConfig& config, const StateTensor& inputs);

}  // namespace ntk::detail
