#include "ntk/bench/train.hpp"

#include "ntk/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ntk::bench {

namespace {

void check_classifier(const MlpConfig& config) {
  if (config.activate_output || config.out_dim() != kMnistClasses ||
      config.input_dim != kMnistPixels) {
    throw std::invalid_argument(
        "MNIST training needs a 784-input MLP with 10 raw logits (activate_output = false)");
  }
}

MlpConfig with_batch(MlpConfig config, Index batch) {
  config.batch = batch;
  return config;
}

}  // namespace

double softmax_cross_entropy(const Vector& logits, const std::vector<int>& labels, Index begin,
                             Vector* grad) {
  const Index classes = kMnistClasses;
  const Index rows = logits.size() / classes;
  if (rows * classes != logits.size()) {
    throw std::invalid_argument("softmax_cross_entropy: logits not a multiple of 10");
  }
  if (grad) grad->resize(logits.size());
  double loss = 0.0;
  for (Index b = 0; b < rows; ++b) {
    const auto row = logits.segment(b * classes, classes);
    const double shift = row.maxCoeff();
    const Vector e = (row.array() - shift).exp().matrix();
    const double z = e.sum();
    const int label = labels.at(static_cast<std::size_t>(begin + b));
    loss += std::log(z) - (row(label) - shift);
    if (grad) {
      auto g = grad->segment(b * classes, classes);
      g = e / z;
      g(label) -= 1.0;
      g /= static_cast<double>(rows);
    }
  }
  return loss / static_cast<double>(rows);
}

TrainResult train_mnist_mlp(const MlpConfig& config, const MnistDataset& data,
                            const TrainConfig& cfg) {
  check_classifier(config);
  if (cfg.epochs < 0 || cfg.batch_size < 1) {
    throw std::invalid_argument("train_mnist_mlp: epochs must be >= 0 and batch_size >= 1");
  }
  TrainResult out;
  out.initial = init_params(config, cfg.seed, cfg.init);
  ParamVector params = out.initial;

  std::mt19937_64 gen(derive_seed(cfg.seed, 1));
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), gen);
    MnistDataset shuffled{DenseMatrix(data.size(), data.images.cols()), {}};
    shuffled.labels.reserve(order.size());
    for (Index i = 0; i < data.size(); ++i) {
      shuffled.images.row(i) = data.images.row(order[i]);
      shuffled.labels.push_back(data.labels[order[i]]);
    }
    for (Index begin = 0; begin < data.size(); begin += cfg.batch_size) {
      const Index count = std::min(cfg.batch_size, data.size() - begin);
      const MlpConfig batch_config = with_batch(config, count);
      const auto ctx = make_context(batch_config, params, shuffled.inputs(begin, count));
      Vector grad_logits;
      out.step_losses.push_back(
          softmax_cross_entropy(tape_output(*ctx), shuffled.labels, begin, &grad_logits));
      if (cfg.lr != 0.0) params.data -= cfg.lr * ctx->vjp(grad_logits);
    }
  }
  out.final = std::move(params);
  return out;
}

double accuracy(const MlpConfig& config, const ParamVector& params, const MnistDataset& data) {
  check_classifier(config);
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  const StateTensor logits =
      forward(with_batch(config, data.size()), params, data.inputs(0, data.size()));
  Index correct = 0;
  for (Index b = 0; b < data.size(); ++b) {
    Index best = 0;
    logits.data.segment(b * kMnistClasses, kMnistClasses).maxCoeff(&best);
    if (best == data.labels[b]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ntk::bench
