#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedmrl/nn.hpp"
#include "fedmrl/rng.hpp"

namespace fedmrl {

/// Fixed Gaussian random projection from parameter space (P) to the SOM
/// feature space (d); entries have standard deviation 1/sqrt(d).
class Projector {
 public:
  Projector(std::size_t feature_dim, std::size_t param_count, std::uint64_t seed);

  std::size_t feature_dim() const noexcept { return matrix_.rows; }
  std::size_t param_count() const noexcept { return matrix_.cols; }
  const Matrix& matrix() const noexcept { return matrix_; }

 private:
  Matrix matrix_;
};

std::vector<double> project(const Projector& p, const ParamVector& delta);

struct GridCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

/// Kohonen map over projected client deltas, trained online across rounds.
struct SomGrid {
  std::size_t rows = 5;
  std::size_t cols = 5;
  std::size_t dim = 32;
  std::vector<double> weights;  // rows * cols * dim, neuron-major
  double sigma0 = 2.5;
  double lr0 = 0.5;
  double decay_rounds = 30.0;

  /// Neuron weights drawn from Normal(0, 0.1).
  static SomGrid random(std::size_t rows, std::size_t cols, std::size_t dim, Rng& rng);

  std::span<double> neuron(std::size_t r, std::size_t c) { return {weights.data() + (r * cols + c) * dim, dim}; }
  std::span<const double> neuron(std::size_t r, std::size_t c) const {
    return {weights.data() + (r * cols + c) * dim, dim};
  }
  std::span<const double> neuron(GridCoord g) const { return neuron(g.row, g.col); }

  double sigma_at(double round) const;
  double lr_at(double round) const;

  friend bool operator==(const SomGrid&, const SomGrid&) = default;
};

/// Best matching unit; ties resolve to the lexicographically smallest (row, col).
GridCoord bmu(const SomGrid& som, std::span<const double> x);

/// One Kohonen step toward x with Gaussian neighbourhood around the BMU.
void som_update(SomGrid& som, std::span<const double> x, double round);

/// Cosine similarity; zero-norm inputs yield 0.
double cosine_similarity(const ParamVector& a, const ParamVector& b);

/// Scores rho_h = sim_h / (1 + dist_h) with sim_h = (1 + cos_h) / 2,
/// normalized so the weights sum to the client count.
std::vector<double> alphas_from_scores(std::span<const double> cosines, std::span<const double> distances);

struct AlphaResult {
  std::vector<double> alphas;
  std::vector<GridCoord> bmus;
  std::vector<double> distances;
  std::vector<double> cosines;
};

/// Trains the SOM on every client's projected delta (ascending client order),
/// then scores each client by its quantization distance and its cosine
/// similarity to the global model.
AlphaResult compute_alphas(SomGrid& som, std::span<const ParamVector> local_params, const ParamVector& global_params,
                           const Projector& projector, double round);

/// sum_h (alpha_h / H) * w_h, accumulated in client order.
ParamVector aggregate(std::span<const ParamVector> local_params, std::span<const double> alphas);

/// sum_h coeff_h * w_h, accumulated in client order.
ParamVector weighted_sum(std::span<const ParamVector> params, std::span<const double> coefficients);

nlohmann::json som_to_json(const SomGrid& som);
SomGrid som_from_json(const nlohmann::json& j);

}  // namespace fedmrl
