#include "ntk/bench/presets.hpp"

#include <stdexcept>

namespace ntk::bench {

namespace {

std::vector<Preset> build_presets() {
  std::vector<Preset> out;

  MlpConfig mlp{.input_dim = 100, .hidden_dim = 64, .num_layers = 15, .batch = 50};
  out.push_back({"mlp-fig2", mlp, "15-layer tanh MLP, width 64, 50 inputs of dimension 100", 1.96});

  MlpConfig mlp_tiny{.input_dim = 10, .hidden_dim = 16, .num_layers = 4, .batch = 16};
  out.push_back({"mlp-fig2-tiny", mlp_tiny, "4-layer tanh MLP, width 16, 16 inputs", 0.0});

  GruConfig gru{.input_dim = 10, .hidden_dim = 64, .timesteps = 15, .batch = 50};
  out.push_back({"gru-fig3", gru, "GRU with 64 hidden units, 15 steps, 50 sequences", 1557.72});

  // keeps dim P < n like the full preset: P = 288, n = 512
  GruConfig gru_tiny{.input_dim = 2, .hidden_dim = 8, .timesteps = 8, .batch = 8};
  out.push_back({"gru-fig3-tiny", gru_tiny, "GRU with 8 hidden units, 8 steps, 8 sequences", 0.0});

  MlpConfig mnist{.input_dim = 784,
                  .hidden_dim = 256,
                  .num_layers = 2,
                  .batch = 512,
                  .output_dim = 10,
                  .activate_output = false};
  out.push_back({"mnist-fig4", mnist, "784-256-10 classifier evaluated on 512 test images", 0.0});

  MlpConfig mnist_tiny = mnist;
  mnist_tiny.hidden_dim = 32;
  mnist_tiny.batch = 48;
  out.push_back({"mnist-fig4-tiny", mnist_tiny, "784-32-10 classifier evaluated on 48 images", 0.0});
  return out;
}

}  // namespace

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = build_presets();
  return all;
}

const Preset& find_preset(std::string_view name) {
  std::string known;
  for (const auto& p : presets()) {
    if (p.name == name) return p;
    known += (known.empty() ? "" : ", ") + p.name;
  }
  throw std::invalid_argument("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

}  // namespace ntk::bench
