#include "fedmrl/som.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "fedmrl/errors.hpp"
#include "fedmrl/log.hpp"

namespace fedmrl {

Projector::Projector(std::size_t feature_dim, std::size_t param_count, std::uint64_t seed)
    : matrix_(feature_dim, param_count) {
  if (feature_dim == 0 || param_count == 0) throw ConfigError("projector dimensions must be positive");
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (double& v : matrix_.data) v = rng.normal(0.0, stddev);
}

std::vector<double> project(const Projector& p, const ParamVector& delta) {
  if (delta.size() != p.param_count()) {
    throw ConfigError("projection input length " + std::to_string(delta.size()) + " does not match " +
                      std::to_string(p.param_count()));
  }
  std::vector<double> out(p.feature_dim(), 0.0);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = p.matrix().row(r);
    double s = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) s += row[i] * delta[i];
    out[r] = s;
  }
  return out;
}

SomGrid SomGrid::random(std::size_t rows, std::size_t cols, std::size_t dim, Rng& rng) {
  if (rows == 0 || cols == 0 || dim == 0) throw ConfigError("SOM dimensions must be positive");
  SomGrid g;
  g.rows = rows;
  g.cols = cols;
  g.dim = dim;
  g.weights.resize(rows * cols * dim);
  for (double& w : g.weights) w = rng.normal(0.0, 0.1);
  return g;
}

double SomGrid::sigma_at(double round) const { return sigma0 * std::exp(-round / decay_rounds); }
double SomGrid::lr_at(double round) const { return lr0 * std::exp(-round / decay_rounds); }

namespace {

double dist_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

GridCoord bmu(const SomGrid& som, std::span<const double> x) {
  if (x.size() != som.dim) throw ConfigError("SOM input width mismatch");
  GridCoord best;
  double best_d = dist_sq(som.neuron(0, 0), x);
  for (std::size_t r = 0; r < som.rows; ++r) {
    for (std::size_t c = 0; c < som.cols; ++c) {
      const double d = dist_sq(som.neuron(r, c), x);
      if (d < best_d) {
        best_d = d;
        best = {r, c};
      }
    }
  }
  return best;
}

void som_update(SomGrid& som, std::span<const double> x, double round) {
  const GridCoord win = bmu(som, x);
  const double lr = som.lr_at(round);
  if (lr == 0.0) return;
  const double sigma = som.sigma_at(round);
  const double two_sigma_sq = 2.0 * sigma * sigma;
  for (std::size_t r = 0; r < som.rows; ++r) {
    for (std::size_t c = 0; c < som.cols; ++c) {
      const double dr = static_cast<double>(r) - static_cast<double>(win.row);
      const double dc = static_cast<double>(c) - static_cast<double>(win.col);
      const double influence = lr * std::exp(-(dr * dr + dc * dc) / two_sigma_sq);
      auto w = som.neuron(r, c);
      for (std::size_t k = 0; k < som.dim; ++k) w[k] = (1.0 - influence) * w[k] + influence * x[k];
    }
  }
}

double cosine_similarity(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw ConfigError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> alphas_from_scores(std::span<const double> cosines, std::span<const double> distances) {
  if (cosines.size() != distances.size() || cosines.empty()) throw ConfigError("score vectors must match");
  const std::size_t H = cosines.size();
  std::vector<double> rho(H);
  double total = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    const double sim = (1.0 + cosines[h]) / 2.0;
    rho[h] = sim / (1.0 + distances[h]);
    total += rho[h];
  }
  std::vector<double> alphas(H, 1.0);
  if (!(total > 0.0)) {
    warn("all aggregation scores are zero; falling back to uniform weights");
    return alphas;
  }
  for (std::size_t h = 0; h < H; ++h) alphas[h] = static_cast<double>(H) * rho[h] / total;
  return alphas;
}

AlphaResult compute_alphas(SomGrid& som, std::span<const ParamVector> local_params, const ParamVector& global_params,
                           const Projector& projector, double round) {
  const std::size_t H = local_params.size();
  if (H < 2) throw ConfigError("compute_alphas needs at least 2 clients");
  std::vector<std::vector<double>> features;
  features.reserve(H);
  for (const auto& w : local_params) {
    if (w.size() != global_params.size()) throw ConfigError("client parameter length mismatch");
    ParamVector delta(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) delta[i] = w[i] - global_params[i];
    features.push_back(project(projector, delta));
  }
  for (const auto& x : features) som_update(som, x, round);

  AlphaResult res;
  for (std::size_t h = 0; h < H; ++h) {
    const GridCoord g = bmu(som, features[h]);
    res.bmus.push_back(g);
    res.distances.push_back(std::sqrt(dist_sq(features[h], som.neuron(g))));
    auto is_zero = [](const ParamVector& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    if (is_zero(local_params[h]) || is_zero(global_params)) {
      warn("client " + std::to_string(h) + ": zero-norm parameters, cosine similarity taken as 0");
    }
    res.cosines.push_back(cosine_similarity(local_params[h], global_params));
  }
  res.alphas = alphas_from_scores(res.cosines, res.distances);
  return res;
}

ParamVector weighted_sum(std::span<const ParamVector> params, std::span<const double> coefficients) {
  if (params.empty() || params.size() != coefficients.size()) {
    throw ConfigError("weighted_sum needs one coefficient per parameter vector");
  }
  const std::size_t P = params.front().size();
  ParamVector out(P);
  for (std::size_t h = 0; h < params.size(); ++h) {
    if (params[h].size() != P) throw ConfigError("client parameter length mismatch");
    const double c = coefficients[h];
    for (std::size_t i = 0; i < P; ++i) out[i] += c * params[h][i];
  }
  return out;
}

ParamVector aggregate(std::span<const ParamVector> local_params, std::span<const double> alphas) {
  const std::size_t H = local_params.size();
  if (alphas.size() != H) throw ConfigError("aggregate needs one alpha per client");
  std::vector<double> coeff(H);
  for (std::size_t h = 0; h < H; ++h) coeff[h] = alphas[h] / static_cast<double>(H);
  return weighted_sum(local_params, coeff);
}

nlohmann::json som_to_json(const SomGrid& som) {
  return {{"rows", som.rows},   {"cols", som.cols},     {"dim", som.dim},
          {"sigma0", som.sigma0}, {"lr0", som.lr0}, {"decay_rounds", som.decay_rounds},
          {"weights", som.weights}};
}

SomGrid som_from_json(const nlohmann::json& j) {
  SomGrid g;
  g.rows = j.at("rows");
  g.cols = j.at("cols");
  g.dim = j.at("dim");
  g.sigma0 = j.at("sigma0");
  g.lr0 = j.at("lr0");
  g.decay_rounds = j.at("decay_rounds");
  g.weights = j.at("weights").get<std::vector<double>>();
  if (g.weights.size() != g.rows * g.cols * g.dim) throw ConfigError("SOM checkpoint has the wrong weight count");
  return g;
}

}  // namespace fedmrl
