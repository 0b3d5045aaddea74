#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedmrl/nn.hpp"
#include "fedmrl/rng.hpp"

namespace fedmrl {

/// Labeled samples of equal feature width, stored row-major.
class LabeledDataset {
 public:
  LabeledDataset(std::size_t class_count, std::size_t dim);

  void add(std::span<const double> features, std::size_t label);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t class_count() const noexcept { return class_count_; }

  std::span<const double> features(std::size_t i) const { return {features_.data() + i * dim_, dim_}; }
  std::size_t label(std::size_t i) const { return labels_[i]; }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }

  std::vector<std::size_t> class_counts() const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  Batch batch(std::span<const std::size_t> indices) const;
  Batch as_batch() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;

 private:
  std::size_t class_count_;
  std::size_t dim_;
  std::vector<double> features_;
  std::vector<std::size_t> labels_;
};

struct PartitionPlan {
  double eta = 1.0;
  std::size_t shards_per_class = 200;
  std::size_t client_count = 2;
  /// Preferred class per client; empty means round-robin h mod M.
  std::vector<std::size_t> preferred_class;
  std::uint64_t rng_seed = 0;
};

/// Source of the raw (pre-clip) weight for a client's non-preferred class.
/// The default draws from Normal(0.5, 1) on the plan's stream.
using ClassWeightSampler = std::function<double(Rng&)>;

/// Shard-based non-IID split. Each class is cut into contiguous shards;
/// clients take turns claiming one shard of a class drawn from their class
/// weights until every shard is owned. The weights are eta on the client's
/// preferred class and a fresh clipped Gaussian draw on every other class,
/// redrawn for each claim.
std::vector<LabeledDataset> partition(const LabeledDataset& dataset, const PartitionPlan& plan);
std::vector<LabeledDataset> partition(const LabeledDataset& dataset, const PartitionPlan& plan,
                                      const ClassWeightSampler& sampler);

/// Shannon entropy of the label distribution, in nats.
double client_entropy(const LabeledDataset& d);

double client_proportion(const LabeledDataset& d, std::size_t total_n);

struct ClientStats {
  double entropy = 0.0;
  double proportion = 0.0;
};

/// Isotropic unit-variance Gaussian per class. Class m is centered at
/// separation * e_m when dim >= M, otherwise at separation times the unit
/// vector at angle 2*pi*m/M in the first two coordinates.
LabeledDataset synth_gaussian_mixture(std::size_t class_count, std::size_t per_class,
                                      std::size_t dim, double separation, std::uint64_t seed);

/// Rows of "label,f1,f2,..." with no header.
LabeledDataset load_csv_dataset(const std::filesystem::path& path, std::size_t class_count);
void write_csv_dataset(const LabeledDataset& d, const std::filesystem::path& path);

struct TrainEvalSplit {
  LabeledDataset train;
  LabeledDataset eval;
};

/// Per-class split holding out round(eval_fraction * N_m) samples of each class.
TrainEvalSplit stratified_split(const LabeledDataset& d, double eval_fraction, Rng& rng);

}  // namespace fedmrl
