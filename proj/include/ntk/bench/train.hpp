#pragma once

#include "ntk/bench/mnist.hpp"
#include "ntk/model.hpp"

#include <cstdint>
#include <vector>

namespace ntk::bench {

struct TrainConfig {
  int epochs = 3;
  double lr = 0.1;
  Index batch_size = 64;
  std::uint64_t seed = 0;  // initial parameters and minibatch order
  InitScheme init = InitScheme::torch_default;
};

struct TrainResult {
  ParamVector initial;
  ParamVector final;
  std::vector<double> step_losses;  // mean cross-entropy of each minibatch before its update
};

/// Plain minibatch SGD on mean softmax cross-entropy. The config must produce
/// raw logits (activate_output = false, out_dim() = 10); config.batch is
/// ignored. Gradients are vjps of the loss through the model context.
TrainResult train_mnist_mlp(const MlpConfig& config, const MnistDataset& data,
                            const TrainConfig& cfg);

/// Mean softmax cross-entropy and its gradient with respect to the logits,
/// laid out like the model output (batch x classes, classes fastest).
double softmax_cross_entropy(const Vector& logits, const std::vector<int>& labels, Index begin,
                             Vector* grad);

/// Fraction of rows whose arg-max logit equals the label.
double accuracy(const MlpConfig& config, const ParamVector& params, const MnistDataset& data);

}  // namespace ntk::bench
