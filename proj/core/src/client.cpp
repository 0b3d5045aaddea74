#include "fedmrl/client.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "fedmrl/errors.hpp"

namespace fedmrl {

DenseNet ModelSpec::make(const ParamVector& params) const {
  DenseNet net(layer_sizes, activation);
  net.set_params(params);
  return net;
}

ClientReport local_train(const ModelSpec& model, const ParamVector& global_params,
                         const LabeledDataset& data, const ClientConfig& cfg, double mu,
                         std::optional<double> f_bar, double lambda_fair, std::uint64_t seed) {
  if (cfg.local_epochs == 0) throw ConfigError("local_epochs must be >= 1");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.lr >= 0.0)) throw ConfigError("client learning rate must be >= 0");
  if (!(mu >= 0.0)) throw ConfigError("mu must be >= 0");
  if (data.empty()) throw InputError("client " + std::to_string(cfg.client_id) + " has no data");

  DenseNet net = model.make(global_params);
  ObjectiveSpec spec;
  spec.mu = mu;
  spec.anchor = global_params;
  spec.lambda_fair = lambda_fair;
  spec.f_bar = f_bar;
  spec.scale_clamp = cfg.scale_clamp;

  Rng rng = make_stream(seed, "client", {cfg.client_id, static_cast<std::uint64_t>(cfg.round)});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  ClientReport report;
  report.sample_count = data.size();
  long step = 0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double loss_sum = 0.0;
    double correct = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Batch batch = data.batch(idx);
      LossGrad lg;
      try {
        lg = loss_and_grad(net, batch, spec);
      } catch (const DivergenceError& e) {
        throw DivergenceError("client " + std::to_string(cfg.client_id) + " diverged at round " +
                                  std::to_string(cfg.round) + ", step " + std::to_string(step) + ": " +
                                  e.what(),
                              cfg.round, step);
      }
      net.set_params(sgd_step(net.params(), lg.grad, cfg.lr));
      const auto n = static_cast<double>(batch.size());
      loss_sum += lg.base_loss * n;
      correct += lg.accuracy * n;
      ++step;
    }
    report.train_loss = loss_sum / static_cast<double>(order.size());
    report.train_acc = correct / static_cast<double>(order.size());
  }
  if (!net.params().all_finite()) {
    throw DivergenceError("client " + std::to_string(cfg.client_id) + " produced non-finite parameters",
                          cfg.round, step);
  }
  report.steps_taken = static_cast<std::size_t>(step);
  report.local_params = net.params();
  return report;
}

Evaluation evaluate(const ModelSpec& model, const ParamVector& params, const LabeledDataset& data) {
  if (data.empty()) throw InputError("cannot evaluate on an empty dataset");
  const DenseNet net = model.make(params);
  const Batch batch = data.as_batch();
  const ForwardResult fr = forward(net, batch);

  const std::size_t M = net.output_dim();
  std::vector<std::size_t> hits(M, 0);
  std::vector<std::size_t> predicted(M, 0);
  std::vector<std::size_t> support(M, 0);
  const Matrix& logits = fr.cache.output();
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t guess = argmax(logits.row(r));
    ++predicted[guess];
    ++support[batch.labels[r]];
    if (guess == batch.labels[r]) ++hits[guess];
  }
  Evaluation ev;
  ev.loss = fr.loss;
  ev.accuracy = fr.accuracy;
  ev.class_support = support;
  ev.per_class_recall.resize(M, 0.0);
  ev.per_class_precision.resize(M, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    if (support[m] > 0) ev.per_class_recall[m] = static_cast<double>(hits[m]) / static_cast<double>(support[m]);
    if (predicted[m] > 0) {
      ev.per_class_precision[m] = static_cast<double>(hits[m]) / static_cast<double>(predicted[m]);
    }
  }
  return ev;
}

}  // namespace fedmrl
