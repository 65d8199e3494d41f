#include "ntk/model.hpp"

#include "model_detail.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace ntk {

namespace {

std::string shape_string(const std::vector<Axis>& axes) {
  std::string out;
  for (const auto& a : axes) {
    if (!out.empty()) out += " x ";
    out += a.label + "=" + std::to_string(a.extent);
  }
  return out.empty() ? "<scalar>" : out;
}

Index extent_product(const std::vector<Axis>& axes) {
  return std::accumulate(axes.begin(), axes.end(), Index{1},
                         [](Index acc, const Axis& a) { return acc * a.extent; });
}

void apply_activation(Activation act, DenseMatrix& z, DenseMatrix& slope) {
  switch (act) {
    case Activation::tanh:
      z = z.array().tanh();
      slope = 1.0 - z.array().square();
      break;
    case Activation::relu:
      // subgradient at exactly zero is taken as 0
      slope = (z.array() > 0.0).cast<double>();
      z = z.cwiseMax(0.0);
      break;
    case Activation::identity:
      slope = DenseMatrix::Ones(z.rows(), z.cols());
      break;
  }
}

DenseMatrix sigmoid(const DenseMatrix& x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

void validate(const MlpConfig& c) {
  if (c.num_layers < 1) throw std::invalid_argument("MlpConfig: num_layers must be >= 1");
  if (c.input_dim < 1 || c.hidden_dim < 1 || c.batch < 1 || c.output_dim < 0) {
    throw std::invalid_argument("MlpConfig: dimensions must be >= 1");
  }
}

void validate(const GruConfig& c) {
  if (c.input_dim < 1 || c.hidden_dim < 1 || c.timesteps < 1 || c.batch < 1) {
    throw std::invalid_argument("GruConfig: dimensions must be >= 1");
  }
}

Index TensorSpec::size() const {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::vector<NamedTensor> unflatten(const ParamVector& params) {
  std::vector<NamedTensor> out;
  Index offset = 0;
  for (const auto& spec : params.manifest) {
    const Index rows = spec.shape.empty() ? 1 : spec.shape[0];
    const Index cols = spec.size() / std::max<Index>(rows, 1);
    if (offset + spec.size() > params.data.size()) {
      throw std::invalid_argument("unflatten: manifest exceeds data length");
    }
    out.push_back({spec.name, detail::ConstMatrixMap(params.data.data() + offset, rows, cols),
                   spec.shape.size() == 1});
    offset += spec.size();
  }
  if (offset != params.data.size()) {
    throw std::invalid_argument("unflatten: manifest covers " + std::to_string(offset) +
                                " of " + std::to_string(params.data.size()) + " entries");
  }
  return out;
}

ParamVector flatten(const std::vector<NamedTensor>& tensors) {
  ParamVector out;
  Index total = 0;
  for (const auto& t : tensors) total += t.value.size();
  out.data.resize(total);
  Index offset = 0;
  for (const auto& t : tensors) {
    std::vector<Index> shape = t.is_vector ? std::vector<Index>{t.value.rows()}
                                                   : std::vector<Index>{t.value.rows(), t.value.cols()};
    out.manifest.push_back({t.name, std::move(shape)});
    detail::MatrixMap(out.data.data() + offset, t.value.rows(), t.value.cols()) = t.value;
    offset += t.value.size();
  }
  return out;
}

StateTensor make_state(std::vector<Axis> axes, Vector data) {
  if (extent_product(axes) != data.size()) {
    throw std::invalid_argument("StateTensor: axes " + shape_string(axes) + " do not match " +
                                std::to_string(data.size()) + " entries");
  }
  return StateTensor{std::move(data), std::move(axes)};
}

namespace detail {

std::vector<AffineLayout> mlp_layout(const MlpConfig& c) {
  validate(c);
  std::vector<AffineLayout> layers;
  Index offset = 0;
  for (Index l = 0; l < c.num_layers; ++l) {
    AffineLayout layer;
    layer.in = l == 0 ? c.input_dim : c.hidden_dim;
    layer.out = l + 1 == c.num_layers ? c.out_dim() : c.hidden_dim;
    layer.weight_offset = offset;
    offset += layer.in * layer.out;
    layer.bias_offset = offset;
    offset += layer.out;
    layers.push_back(layer);
  }
  return layers;
}

GruLayout gru_layout(const GruConfig& c) {
  validate(c);
  GruLayout g;
  g.input = c.input_dim;
  g.hidden = c.hidden_dim;
  const Index gates = 3 * c.hidden_dim;
  g.w_ih = 0;
  g.w_hh = g.w_ih + gates * c.input_dim;
  g.b_ih = g.w_hh + gates * c.hidden_dim;
  g.b_hh = g.b_ih + gates;
  g.total = g.b_hh + gates;
  return g;
}

MlpTrace mlp_trace(const MlpConfig& config, const double* params, const DenseMatrix& inputs) {
  const auto layers = mlp_layout(config);
  MlpTrace trace;
  trace.activations.reserve(layers.size() + 1);
  trace.slopes.reserve(layers.size());
  trace.activations.push_back(inputs);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    ConstMatrixMap w(params + layer.weight_offset, layer.out, layer.in);
    ConstVectorMap b(params + layer.bias_offset, layer.out);
    DenseMatrix z = w * trace.activations.back();
    z.colwise() += b;
    DenseMatrix slope;
    const bool last = l + 1 == layers.size();
    apply_activation(last && !config.activate_output ? Activation::identity : config.activation, z,
                     slope);
    trace.activations.push_back(std::move(z));
    trace.slopes.push_back(std::move(slope));
  }
  return trace;
}

GruTrace gru_trace(const GruConfig& config, const double* params,
                   const std::vector<DenseMatrix>& inputs) {
  const auto g = gru_layout(config);
  const Index h = g.hidden;
  ConstMatrixMap w_ih(params + g.w_ih, 3 * h, g.input);
  ConstMatrixMap w_hh(params + g.w_hh, 3 * h, h);
  ConstVectorMap b_ih(params + g.b_ih, 3 * h);
  ConstVectorMap b_hh(params + g.b_hh, 3 * h);

  GruTrace trace;
  trace.inputs = inputs;
  trace.hidden.push_back(DenseMatrix::Zero(h, config.batch));
  for (Index t = 0; t < config.timesteps; ++t) {
    const DenseMatrix& prev = trace.hidden.back();
    DenseMatrix gi = w_ih * inputs[static_cast<std::size_t>(t)];
    gi.colwise() += b_ih;
    DenseMatrix gh = w_hh * prev;
    gh.colwise() += b_hh;

    DenseMatrix r = sigmoid(gi.topRows(h) + gh.topRows(h));
    DenseMatrix z = sigmoid(gi.middleRows(h, h) + gh.middleRows(h, h));
    DenseMatrix hn = gh.bottomRows(h);
    DenseMatrix n = (gi.bottomRows(h).array() + r.array() * hn.array()).tanh().matrix();
    DenseMatrix next = ((1.0 - z.array()) * n.array() + z.array() * prev.array()).matrix();

    trace.reset.push_back(std::move(r));
    trace.update.push_back(std::move(z));
    trace.candidate.push_back(std::move(n));
    trace.candidate_hidden.push_back(std::move(hn));
    trace.hidden.push_back(std::move(next));
  }
  return trace;
}

std::vector<DenseMatrix> split_timesteps(const double* data, Index batch, Index time,
                                         Index features) {
  std::vector<DenseMatrix> out;
  out.reserve(static_cast<std::size_t>(time));
  for (Index t = 0; t < time; ++t) out.push_back(gather_timestep(data, t, batch, time, features));
  return out;
}

DenseMatrix gather_timestep(const double* data, Index t, Index batch, Index time,
                            Index features) {
  DenseMatrix slice(features, batch);
  for (Index b = 0; b < batch; ++b) {
    slice.col(b) = ConstVectorMap(data + (b * time + t) * features, features);
  }
  return slice;
}

void scatter_timestep(const DenseMatrix& slice, Index t, Index batch, Index time, double* out) {
  const Index features = slice.rows();
  for (Index b = 0; b < batch; ++b) {
    VectorMap(out + (b * time + t) * features, features) = slice.col(b);
  }
}

void check_params(const ModelConfig& config, const ParamVector& params) {
  const Index expected = param_count(config);
  if (params.data.size() != expected) {
    throw std::invalid_argument("parameter vector has " + std::to_string(params.data.size()) +
                                " entries, model expects " + std::to_string(expected));
  }
  if (params.manifest != param_manifest(config)) {
    throw std::invalid_argument("parameter manifest does not match the model layout");
  }
}

void check_inputs(const ModelConfig& config, const StateTensor& inputs) {
  const auto expected = input_axes(config);
  if (inputs.axes != expected || inputs.data.size() != extent_product(expected)) {
    throw std::invalid_argument("inputs have shape " + shape_string(inputs.axes) +
                                ", model expects " + shape_string(expected));
  }
}

}  // namespace detail

std::vector<TensorSpec> param_manifest(const MlpConfig& config) {
  std::vector<TensorSpec> out;
  const auto layers = detail::mlp_layout(config);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    out.push_back({prefix + ".weight", {layers[l].out, layers[l].in}});
    out.push_back({prefix + ".bias", {layers[l].out}});
  }
  return out;
}

std::vector<TensorSpec> param_manifest(const GruConfig& config) {
  const auto g = detail::gru_layout(config);
  const Index gates = 3 * g.hidden;
  return {{"weight_ih", {gates, g.input}},
          {"weight_hh", {gates, g.hidden}},
          {"bias_ih", {gates}},
          {"bias_hh", {gates}}};
}

std::vector<TensorSpec> param_manifest(const ModelConfig& config) {
  return std::visit([](const auto& c) { return param_manifest(c); }, config);
}

Index param_count(const MlpConfig& config) {
  const auto layers = detail::mlp_layout(config);
  return layers.back().bias_offset + layers.back().out;
}

Index param_count(const GruConfig& config) { return detail::gru_layout(config).total; }

Index param_count(const ModelConfig& config) {
  return std::visit([](const auto& c) { return param_count(c); }, config);
}

Index state_dim(const MlpConfig& c) {
  validate(c);
  return c.batch * c.out_dim();
}

Index state_dim(const GruConfig& c) {
  validate(c);
  return c.batch * c.timesteps * c.hidden_dim;
}

Index state_dim(const ModelConfig& config) {
  return std::visit([](const auto& c) { return state_dim(c); }, config);
}

std::vector<Axis> input_axes(const ModelConfig& config) {
  if (const auto* mlp = std::get_if<MlpConfig>(&config)) {
    return {{"batch", mlp->batch}, {"features", mlp->input_dim}};
  }
  const auto& gru = std::get<GruConfig>(config);
  return {{"batch", gru.batch}, {"time", gru.timesteps}, {"features", gru.input_dim}};
}

std::vector<Axis> state_axes(const ModelConfig& config) {
  if (const auto* mlp = std::get_if<MlpConfig>(&config)) {
    return {{"batch", mlp->batch}, {"units", mlp->out_dim()}};
  }
  const auto& gru = std::get<GruConfig>(config);
  return {{"batch", gru.batch}, {"time", gru.timesteps}, {"units", gru.hidden_dim}};
}

std::string_view to_string(InitScheme scheme) {
  return scheme == InitScheme::torch_default ? "torch_default" : "unit_variance";
}

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "torch_default") return InitScheme::torch_default;
  if (name == "unit_variance") return InitScheme::unit_variance;
  throw std::invalid_argument("unknown init scheme: " + std::string(name));
}

ParamVector init_params(const ModelConfig& config, std::uint64_t seed, InitScheme scheme) {
  ParamVector params;
  params.manifest = param_manifest(config);
  params.data = Vector::Zero(param_count(config));

  std::mt19937_64 gen(seed);
  const double gain = scheme == InitScheme::unit_variance ? 3.0 : 1.0;
  auto fill_uniform = [&gen, gain](double* out, Index count, Index fan_in) {
    const double bound = std::sqrt(gain / static_cast<double>(fan_in));
    for (Index i = 0; i < count; ++i) {
      const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;  // [0, 1)
      out[i] = bound * (2.0 * u - 1.0);
    }
  };

  if (const auto* mlp = std::get_if<MlpConfig>(&config)) {
    for (const auto& layer : detail::mlp_layout(*mlp)) {
      fill_uniform(params.data.data() + layer.weight_offset, layer.in * layer.out, layer.in);
    }
  } else {
    const auto g = detail::gru_layout(std::get<GruConfig>(config));
    fill_uniform(params.data.data() + g.w_ih, 3 * g.hidden * g.input, g.input);
    fill_uniform(params.data.data() + g.w_hh, 3 * g.hidden * g.hidden, g.hidden);
  }
  return params;
}

StateTensor make_inputs(const ModelConfig& config, std::uint64_t seed) {
  auto axes = input_axes(config);
  const Index total = extent_product(axes);
  DenseMatrix draws = draw_probes(total, {ProbeDistribution::gaussian, 1, seed});
  return make_state(std::move(axes), draws.col(0));
}

StateTensor mlp_forward(const MlpConfig& config, const ParamVector& params,
                        const StateTensor& inputs) {
  detail::check_params(config, params);
  detail::check_inputs(config, inputs);
  const DenseMatrix x = detail::ConstMatrixMap(inputs.data.data(), config.input_dim, config.batch);
  auto trace = detail::mlp_trace(config, params.data.data(), x);
  const DenseMatrix& out = trace.activations.back();
  return make_state(state_axes(config), Eigen::Map<const Vector>(out.data(), out.size()));
}

StateTensor gru_forward(const GruConfig& config, const ParamVector& params,
                        const StateTensor& inputs) {
  detail::check_params(config, params);
  detail::check_inputs(config, inputs);
  const auto xs = detail::split_timesteps(inputs.data.data(), config.batch, config.timesteps,
                                          config.input_dim);
  const auto trace = detail::gru_trace(config, params.data.data(), xs);
  Vector out(state_dim(config));
  for (Index t = 0; t < config.timesteps; ++t) {
    detail::scatter_timestep(trace.hidden[static_cast<std::size_t>(t + 1)], t, config.batch,
                             config.timesteps, out.data());
  }
  return make_state(state_axes(config), std::move(out));
}

StateTensor forward(const ModelConfig& config, const ParamVector& params,
                    const StateTensor& inputs) {
  if (const auto* mlp = std::get_if<MlpConfig>(&config)) return mlp_forward(*mlp, params, inputs);
  return gru_forward(std::get<GruConfig>(config), params, inputs);
}

}  // namespace ntk
