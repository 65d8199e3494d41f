#pragma once

#include "ntk/linalg.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ntk {

enum class Activation { tanh, relu, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Fully connected network. Layer 0 maps input_dim -> hidden_dim, the
/// following layers map hidden_dim -> hidden_dim, except the last one which
/// maps to output_dim when that is set (0 means "same as hidden_dim").
struct MlpConfig {
  Index input_dim = 1;
  Index hidden_dim = 1;
  Index num_layers = 1;  // total affine layers
  Activation activation = Activation::tanh;
  Index batch = 1;
  Index output_dim = 0;
  bool activate_output = true;  // false yields raw logits from the last layer

  Index out_dim() const { return output_dim > 0 ? output_dim : hidden_dim; }
};

/// Single-layer GRU with the reset gate applied to the hidden-to-hidden
/// candidate term:
///
///   r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
///
/// Gate blocks are stacked in the order (r, z, n) inside each 3H-row
/// parameter tensor. The initial hidden state is zero.
struct GruConfig {
  Index input_dim = 1;
  Index hidden_dim = 1;
  Index timesteps = 1;
  Index batch = 1;
};

using ModelConfig = std::variant<MlpConfig, GruConfig>;

void validate(const MlpConfig& config);
void validate(const GruConfig& config);

/// One named parameter tensor. Two-dimensional tensors are stored
/// column-major in the flat vector; shape is {rows, cols} or {length}.
struct TensorSpec {
  std::string name;
  std::vector<Index> shape;

  Index size() const;
  bool operator==(const TensorSpec&) const = default;
};

struct ParamVector {
  Vector data;
  std::vector<TensorSpec> manifest;
};

struct NamedTensor {
  std::string name;
  DenseMatrix value;  // vectors are stored as a single column
  bool is_vector = false;
};

std::vector<NamedTensor> unflatten(const ParamVector& params);
ParamVector flatten(const std::vector<NamedTensor>& tensors);

struct Axis {
  std::string label;
  Index extent = 0;
  bool operator==(const Axis&) const = default;
};

/// Flat row-major view of a labelled tensor: the last axis varies fastest.
struct StateTensor {
  Vector data;
  std::vector<Axis> axes;

  Index size() const { return data.size(); }
};

StateTensor make_state(std::vector<Axis> axes, Vector data);

std::vector<TensorSpec> param_manifest(const MlpConfig& config);
std::vector<TensorSpec> param_manifest(const GruConfig& config);
std::vector<TensorSpec> param_manifest(const ModelConfig& config);

Index param_count(const MlpConfig& config);
Index param_count(const GruConfig& config);
Index param_count(const ModelConfig& config);

/// Length n of the state vector produced by a forward pass.
Index state_dim(const MlpConfig& config);
Index state_dim(const GruConfig& config);
Index state_dim(const ModelConfig& config);

/// Expected input axes: batch x input_dim (MLP) or batch x time x input_dim (GRU).
std::vector<Axis> input_axes(const ModelConfig& config);
std::vector<Axis> state_axes(const ModelConfig& config);

/// Weight scale for init_params. torch_default draws weights uniformly in
/// +-1/sqrt(fan_in) (nn.Linear / nn.GRU bound); unit_variance widens the bound by
/// sqrt(3) so that weights have variance 1/fan_in. Biases are zero in both.
enum class InitScheme { torch_default, unit_variance };

std::string_view to_string(InitScheme scheme);
InitScheme parse_init_scheme(std::string_view name);

ParamVector init_params(const ModelConfig& config, std::uint64_t seed,
                        InitScheme scheme = InitScheme::torch_default);

/// Standard-normal inputs with the axes expected by the model.
StateTensor make_inputs(const ModelConfig& config, std::uint64_t seed);

StateTensor mlp_forward(const MlpConfig& config, const ParamVector& params,
                        const StateTensor& inputs);
StateTensor gru_forward(const GruConfig& config, const ParamVector& params,
                        const StateTensor& inputs);
StateTensor forward(const ModelConfig& config, const ParamVector& params,
                    const StateTensor& inputs);

}  // namespace ntk
