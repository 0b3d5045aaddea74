#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedmrl/rng.hpp"

namespace fedmrl {

/// Flat model parameters; the unit exchanged between clients and server.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> view() noexcept { return values_; }
  std::span<const double> view() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

enum class Activation { kRelu, kTanh };

/// Fully-connected classifier: hidden layers use `activation`, the output
/// layer emits raw logits. Layer l stores a fan_out x fan_in weight block
/// (row-major) followed by fan_out biases.
class DenseNet {
 public:
  DenseNet(std::vector<std::size_t> layer_sizes, Activation activation);

  /// Zero parameters.
  static DenseNet zeros(std::vector<std::size_t> layer_sizes, Activation activation);
  /// Kaiming-style Gaussian weights (std sqrt(2/fan_in) for relu, sqrt(1/fan_in)
  /// for tanh), zero biases.
  static DenseNet initialized(std::vector<std::size_t> layer_sizes, Activation activation,
                              Rng& rng);

  static std::size_t param_count_for(std::span<const std::size_t> layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t input_dim() const noexcept { return layer_sizes_.front(); }
  std::size_t output_dim() const noexcept { return layer_sizes_.back(); }
  std::size_t layer_count() const noexcept { return layer_sizes_.size() - 1; }

  const ParamVector& params() const noexcept { return params_; }
  ParamVector& params() noexcept { return params_; }
  /// Replaces the parameters; throws ConfigError on length mismatch.
  void set_params(ParamVector params);

  /// Offset of layer l's weight block inside the flat parameter vector.
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + layer_sizes_[layer] * layer_sizes_[layer + 1];
  }

 private:
  std::vector<std::size_t> layer_sizes_;
  Activation activation_;
  std::vector<std::size_t> offsets_;
  ParamVector params_;
};

struct Batch {
  Matrix features;                  // batch_size x input_dim
  std::vector<std::size_t> labels;  // class indices in [0, M)

  std::size_t size() const noexcept { return labels.size(); }
};

/// Per-layer activations retained for backpropagation. activations[0] is the
/// input, activations.back() the logits.
struct ForwardCache {
  std::vector<Matrix> activations;
  Matrix probabilities;  // softmax of logits; filled by forward() only

  const Matrix& output() const { return activations.back(); }
};

struct ForwardResult {
  double loss = 0.0;      // mean cross-entropy
  double accuracy = 0.0;  // fraction of argmax-correct rows
  ForwardCache cache;
};

/// Augmented local objective: cross-entropy + proximal pull toward `anchor`
/// + a fairness penalty against the broadcast reference loss `f_bar`.
struct ObjectiveSpec {
  double mu = 0.0;
  ParamVector anchor;
  double lambda_fair = 0.0;
  std::optional<double> f_bar;
  std::pair<double, double> scale_clamp{0.1, 10.0};

  void validate() const;
};

struct LossGrad {
  double objective = 0.0;
  ParamVector grad;
  double base_loss = 0.0;
  double accuracy = 0.0;
};

/// Runs the network over `inputs` (rows x input_dim). Throws ConfigError on a
/// width mismatch and DivergenceError on non-finite activations.
ForwardCache propagate(const DenseNet& net, const Matrix& inputs);

/// Gradient of a scalar loss w.r.t. all parameters, given dLoss/dOutput.
ParamVector backprop(const DenseNet& net, const ForwardCache& cache, const Matrix& d_output);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

ForwardResult forward(const DenseNet& net, const Batch& batch);

LossGrad loss_and_grad(const DenseNet& net, const Batch& batch, const ObjectiveSpec& spec);

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double lr);

double l2_distance_sq(const ParamVector& a, const ParamVector& b);

}  // namespace fedmrl
