#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "fedmrl/data.hpp"
#include "fedmrl/nn.hpp"

namespace fedmrl {

/// Shape of the model every participant trains.
struct ModelSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::kRelu;

  DenseNet make(const ParamVector& params) const;
  std::size_t param_count() const { return DenseNet::param_count_for(layer_sizes); }
};

struct ClientConfig {
  std::size_t client_id = 0;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 1;
  std::pair<double, double> scale_clamp{0.1, 10.0};
  /// Round index used for the minibatch shuffling stream and error reports.
  int round = 0;
};

struct ClientReport {
  ParamVector local_params;
  double train_loss = 0.0;  // mean base loss of the final epoch
  double train_acc = 0.0;
  std::size_t sample_count = 0;
  std::size_t steps_taken = 0;
};

/// One client's local update: starts at `global_params`, runs
/// `cfg.local_epochs` of minibatch SGD on the augmented objective with the
/// global parameters as proximal anchor. Minibatch order comes from the
/// (seed, client_id, round) stream.
ClientReport local_train(const ModelSpec& model, const ParamVector& global_params,
                         const LabeledDataset& data, const ClientConfig& cfg, double mu,
                         std::optional<double> f_bar, double lambda_fair, std::uint64_t seed);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_recall;     // 0 for classes absent from the data
  std::vector<double> per_class_precision;  // 0 for classes never predicted
  std::vector<std::size_t> class_support;
};

Evaluation evaluate(const ModelSpec& model, const ParamVector& params, const LabeledDataset& data);

}  // namespace fedmrl
