#include "fedmrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedmrl/errors.hpp"

namespace fedmrl {

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

DenseNet::DenseNet(std::vector<std::size_t> layer_sizes, Activation activation)
    : layer_sizes_(std::move(layer_sizes)), activation_(activation) {
  if (layer_sizes_.size() < 2) throw ConfigError("DenseNet needs at least input and output sizes");
  for (std::size_t s : layer_sizes_) {
    if (s == 0) throw ConfigError("DenseNet layer sizes must be positive");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += (layer_sizes_[l] + 1) * layer_sizes_[l + 1];
  }
  params_ = ParamVector(offset);
}

DenseNet DenseNet::zeros(std::vector<std::size_t> layer_sizes, Activation activation) {
  return DenseNet(std::move(layer_sizes), activation);
}

DenseNet DenseNet::initialized(std::vector<std::size_t> layer_sizes, Activation activation,
                               Rng& rng) {
  DenseNet net(std::move(layer_sizes), activation);
  const double gain = activation == Activation::kRelu ? 2.0 : 1.0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const std::size_t fan_in = net.layer_sizes_[l];
    const std::size_t fan_out = net.layer_sizes_[l + 1];
    const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
    double* w = net.params_.view().data() + net.weight_offset(l);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) w[i] = rng.normal(0.0, stddev);
  }
  return net;
}

std::size_t DenseNet::param_count_for(std::span<const std::size_t> layer_sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    n += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  }
  return n;
}

void DenseNet::set_params(ParamVector params) {
  if (params.size() != params_.size()) {
    throw ConfigError("parameter length " + std::to_string(params.size()) +
                      " does not match network parameter count " +
                      std::to_string(params_.size()));
  }
  params_ = std::move(params);
}

void ObjectiveSpec::validate() const {
  if (!(mu >= 0.0)) throw ConfigError("mu must be >= 0");
  if (!(lambda_fair >= 0.0)) throw ConfigError("lambda_fair must be >= 0");
  if (!(scale_clamp.first > 0.0) || !(scale_clamp.second >= scale_clamp.first)) {
    throw ConfigError("fairness scale clamp requires 0 < lo <= hi");
  }
}

namespace {

double activate(Activation a, double z) {
  return a == Activation::kRelu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

// Derivative expressed through the activation output.
double activate_grad_from_output(Activation a, double y) {
  return a == Activation::kRelu ? (y > 0.0 ? 1.0 : 0.0) : 1.0 - y * y;
}

}  // namespace

ForwardCache propagate(const DenseNet& net, const Matrix& inputs) {
  if (inputs.cols != net.input_dim()) {
    throw ConfigError("input width " + std::to_string(inputs.cols) +
                      " does not match network input dim " + std::to_string(net.input_dim()));
  }
  const auto& sizes = net.layer_sizes();
  const double* p = net.params().view().data();
  ForwardCache cache;
  cache.activations.reserve(sizes.size());
  cache.activations.push_back(inputs);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const std::size_t fan_in = sizes[l];
    const std::size_t fan_out = sizes[l + 1];
    const double* w = p + net.weight_offset(l);
    const double* b = p + net.bias_offset(l);
    const bool hidden = l + 1 < net.layer_count();
    const Matrix& in = cache.activations.back();
    Matrix out(inputs.rows, fan_out);
    for (std::size_t r = 0; r < inputs.rows; ++r) {
      const double* x = in.data.data() + r * fan_in;
      double* y = out.data.data() + r * fan_out;
      for (std::size_t o = 0; o < fan_out; ++o) {
        const double* wr = w + o * fan_in;
        double z = b[o];
        for (std::size_t i = 0; i < fan_in; ++i) z += wr[i] * x[i];
        if (!std::isfinite(z)) throw DivergenceError("non-finite activation in layer " + std::to_string(l));
        y[o] = hidden ? activate(net.activation(), z) : z;
      }
    }
    cache.activations.push_back(std::move(out));
  }
  return cache;
}

ParamVector backprop(const DenseNet& net, const ForwardCache& cache, const Matrix& d_output) {
  const auto& sizes = net.layer_sizes();
  const double* p = net.params().view().data();
  ParamVector grad(net.params().size());
  double* g = grad.view().data();
  Matrix delta = d_output;
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    const std::size_t fan_in = sizes[l];
    const std::size_t fan_out = sizes[l + 1];
    const Matrix& in = cache.activations[l];
    double* gw = g + net.weight_offset(l);
    double* gb = g + net.bias_offset(l);
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const double* d = delta.data.data() + r * fan_out;
      const double* x = in.data.data() + r * fan_in;
      for (std::size_t o = 0; o < fan_out; ++o) {
        if (d[o] == 0.0) continue;
        gb[o] += d[o];
        double* gwr = gw + o * fan_in;
        for (std::size_t i = 0; i < fan_in; ++i) gwr[i] += d[o] * x[i];
      }
    }
    if (l == 0) break;
    const double* w = p + net.weight_offset(l);
    Matrix prev(delta.rows, fan_in);
    for (std::size_t r = 0; r < delta.rows; ++r) {
      const double* d = delta.data.data() + r * fan_out;
      double* pd = prev.data.data() + r * fan_in;
      for (std::size_t o = 0; o < fan_out; ++o) {
        if (d[o] == 0.0) continue;
        const double* wr = w + o * fan_in;
        for (std::size_t i = 0; i < fan_in; ++i) pd[i] += d[o] * wr[i];
      }
      const double* y = in.data.data() + r * fan_in;
      for (std::size_t i = 0; i < fan_in; ++i) {
        pd[i] *= activate_grad_from_output(net.activation(), y[i]);
      }
    }
    delta = std::move(prev);
  }
  return grad;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ForwardResult forward(const DenseNet& net, const Batch& batch) {
  if (batch.size() == 0) throw InputError("empty batch");
  if (batch.features.rows != batch.size()) throw ConfigError("batch feature rows do not match label count");
  ForwardResult result;
  result.cache = propagate(net, batch.features);
  const Matrix& logits = result.cache.output();
  const std::size_t classes = logits.cols;
  result.cache.probabilities = Matrix(logits.rows, classes);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto z = logits.row(r);
    const std::size_t label = batch.labels[r];
    if (label >= classes) throw ConfigError("label " + std::to_string(label) + " out of range");
    const double peak = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - peak);
    const double log_norm = peak + std::log(sum);
    auto prob = result.cache.probabilities.row(r);
    for (std::size_t c = 0; c < classes; ++c) prob[c] = std::exp(z[c] - log_norm);
    loss_sum += log_norm - z[label];
    if (argmax(z) == label) ++correct;
  }
  const double n = static_cast<double>(logits.rows);
  result.loss = loss_sum / n;
  result.accuracy = static_cast<double>(correct) / n;
  if (!std::isfinite(result.loss)) throw DivergenceError("non-finite loss");
  return result;
}

LossGrad loss_and_grad(const DenseNet& net, const Batch& batch, const ObjectiveSpec& spec) {
  spec.validate();
  const bool use_anchor = !(spec.mu == 0.0 && spec.anchor.empty());
  if (use_anchor && spec.anchor.size() != net.params().size()) {
    throw ConfigError("anchor length " + std::to_string(spec.anchor.size()) +
                      " does not match parameter count " + std::to_string(net.params().size()));
  }
  ForwardResult fr = forward(net, batch);
  const Matrix& probs = fr.cache.probabilities;
  Matrix d_logits(probs.rows, probs.cols);
  const double inv_n = 1.0 / static_cast<double>(probs.rows);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    for (std::size_t c = 0; c < probs.cols; ++c) {
      d_logits(r, c) = (probs(r, c) - (c == batch.labels[r] ? 1.0 : 0.0)) * inv_n;
    }
  }

  LossGrad out;
  out.base_loss = fr.loss;
  out.accuracy = fr.accuracy;
  out.objective = fr.loss;
  out.grad = backprop(net, fr.cache, d_logits);

  if (spec.lambda_fair > 0.0 && spec.f_bar.has_value()) {
    const double gap = fr.loss - *spec.f_bar;
    out.objective += spec.lambda_fair * gap * gap;
    const double scale = std::clamp(1.0 + 2.0 * spec.lambda_fair * gap, spec.scale_clamp.first,
                                    spec.scale_clamp.second);
    for (double& g : out.grad) g *= scale;
  }
  if (spec.mu > 0.0) {
    const auto& w = net.params();
    double dist = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - spec.anchor[i];
      dist += d * d;
      out.grad[i] += spec.mu * d;
    }
    out.objective += 0.5 * spec.mu * dist;
  }
  if (!out.grad.all_finite() || !std::isfinite(out.objective)) {
    throw DivergenceError("non-finite gradient");
  }
  return out;
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double lr) {
  if (params.size() != grad.size()) throw ConfigError("sgd_step: parameter/gradient length mismatch");
  ParamVector out = params;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= lr * grad[i];
  return out;
}

double l2_distance_sq(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw ConfigError("l2_distance_sq: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace fedmrl
