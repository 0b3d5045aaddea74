#include "fedmrl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "fedmrl/errors.hpp"
#include "fedmrl/log.hpp"

namespace fedmrl {

LabeledDataset::LabeledDataset(std::size_t class_count, std::size_t dim)
    : class_count_(class_count), dim_(dim) {
  if (class_count == 0) throw ConfigError("class count must be positive");
  if (dim == 0) throw ConfigError("feature dim must be positive");
}

void LabeledDataset::add(std::span<const double> features, std::size_t label) {
  if (features.size() != dim_) throw ConfigError("sample width does not match dataset dim");
  if (label >= class_count_) throw ConfigError("label out of range");
  features_.insert(features_.end(), features.begin(), features.end());
  labels_.push_back(label);
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_count_, 0);
  for (std::size_t y : labels_) ++counts[y];
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out(class_count_, dim_);
  out.features_.reserve(indices.size() * dim_);
  out.labels_.reserve(indices.size());
  for (std::size_t i : indices) out.add(features(i), labels_[i]);
  return out;
}

Batch LabeledDataset::batch(std::span<const std::size_t> indices) const {
  Batch b;
  b.features = Matrix(indices.size(), dim_);
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = features(indices[r]);
    std::copy(src.begin(), src.end(), b.features.row(r).begin());
    b.labels.push_back(labels_[indices[r]]);
  }
  return b;
}

Batch LabeledDataset::as_batch() const {
  Batch b;
  b.features = Matrix(size(), dim_);
  b.features.data = features_;
  b.labels = labels_;
  return b;
}

std::vector<LabeledDataset> partition(const LabeledDataset& dataset, const PartitionPlan& plan) {
  return partition(dataset, plan, [](Rng& rng) { return rng.normal(0.5, 1.0); });
}

std::vector<LabeledDataset> partition(const LabeledDataset& dataset, const PartitionPlan& plan,
                                      const ClassWeightSampler& sampler) {
  const std::size_t H = plan.client_count;
  const std::size_t M = dataset.class_count();
  if (H < 2) throw ConfigError("partition requires at least 2 clients");
  if (!(plan.eta >= 0.0 && plan.eta <= 1.0)) throw ConfigError("partition eta must lie in [0, 1]");
  if (plan.shards_per_class == 0) throw ConfigError("shards_per_class must be positive");
  if (dataset.empty()) throw InputError("cannot partition an empty dataset");

  std::vector<std::size_t> preferred = plan.preferred_class;
  if (preferred.empty()) {
    for (std::size_t h = 0; h < H; ++h) preferred.push_back(h % M);
  }
  if (preferred.size() != H) throw ConfigError("preferred_class must have one entry per client");
  for (std::size_t j : preferred) {
    if (j >= M) throw ConfigError("preferred class out of range");
  }

  // Sample indices grouped by label, original order preserved within a class.
  std::vector<std::vector<std::size_t>> by_class(M);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.label(i)].push_back(i);

  // shard_bounds[m][s] .. shard_bounds[m][s+1] delimit shard s of class m.
  std::vector<std::vector<std::size_t>> shard_bounds(M);
  std::vector<std::size_t> remaining(M, 0);
  std::size_t total_shards = 0;
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t n = by_class[m].size();
    if (n == 0) continue;
    std::size_t shards = plan.shards_per_class;
    if (n < shards) {
      warn("class " + std::to_string(m) + " has " + std::to_string(n) +
           " samples; reducing its shard count from " + std::to_string(shards));
      shards = n;
    }
    for (std::size_t s = 0; s <= shards; ++s) shard_bounds[m].push_back(s * n / shards);
    remaining[m] = shards;
    total_shards += shards;
  }
  if (total_shards < H) throw InputError("fewer shards than clients");

  Rng rng(plan.rng_seed);
  std::vector<std::vector<std::size_t>> owned(H);
  std::vector<std::size_t> next_shard(M, 0);
  std::vector<double> live(M);
  std::size_t unclaimed = total_shards;
  for (std::size_t turn = 0; unclaimed > 0; ++turn) {
    const std::size_t h = turn % H;
    // Fresh class weights for every claim: eta on the preferred class, a
    // clipped Gaussian draw on each other class. Exhausted classes drop out
    // and the weighted draw renormalizes over the rest; all-zero weights fall
    // back to uniform over the live classes.
    double live_sum = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      const double w = m == preferred[h] ? plan.eta : std::clamp(sampler(rng), 0.0, 1.0);
      live[m] = remaining[m] > 0 ? w : 0.0;
      live_sum += live[m];
    }
    if (!(live_sum > 0.0)) {
      for (std::size_t m = 0; m < M; ++m) live[m] = remaining[m] > 0 ? 1.0 : 0.0;
    }
    const std::size_t m = rng.weighted_index(live);
    const std::size_t s = next_shard[m]++;
    --remaining[m];
    --unclaimed;
    for (std::size_t k = shard_bounds[m][s]; k < shard_bounds[m][s + 1]; ++k) {
      owned[h].push_back(by_class[m][k]);
    }
  }

  std::vector<LabeledDataset> clients;
  clients.reserve(H);
  for (std::size_t h = 0; h < H; ++h) clients.push_back(dataset.subset(owned[h]));
  return clients;
}

double client_entropy(const LabeledDataset& d) {
  if (d.empty()) throw InputError("entropy of an empty dataset");
  const double n = static_cast<double>(d.size());
  double e = 0.0;
  for (std::size_t count : d.class_counts()) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / n;
    e -= p * std::log(p);
  }
  return e;
}

double client_proportion(const LabeledDataset& d, std::size_t total_n) {
  if (total_n == 0) throw InputError("total sample count must be positive");
  if (d.size() > total_n) throw InputError("client holds more samples than the federation total");
  return static_cast<double>(d.size()) / static_cast<double>(total_n);
}

LabeledDataset synth_gaussian_mixture(std::size_t class_count, std::size_t per_class,
                                      std::size_t dim, double separation, std::uint64_t seed) {
  if (class_count == 0 || per_class == 0 || dim == 0) {
    throw ConfigError("synthetic mixture arguments must be positive");
  }
  if (dim < class_count && dim < 2) throw ConfigError("need dim >= 2 when dim < class count");
  Rng rng(seed);
  LabeledDataset out(class_count, dim);
  std::vector<double> center(dim);
  std::vector<double> x(dim);
  for (std::size_t m = 0; m < class_count; ++m) {
    std::fill(center.begin(), center.end(), 0.0);
    if (dim >= class_count) {
      center[m] = separation;
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(class_count);
      center[0] = separation * std::cos(angle);
      center[1] = separation * std::sin(angle);
    }
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t k = 0; k < dim; ++k) x[k] = center[k] + rng.normal();
      out.add(x, m);
    }
  }
  return out;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

LabeledDataset load_csv_dataset(const std::filesystem::path& path, std::size_t class_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path.string());
  if (class_count == 0) throw ConfigError("class count must be positive");

  std::vector<std::size_t> labels;
  std::vector<double> features;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() < 2) throw ParseError("expected label followed by at least one feature", line_no);

    const auto label_text = trim(fields[0]);
    std::size_t label = 0;
    auto [lp, lec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (lec != std::errc() || lp != label_text.data() + label_text.size()) {
      throw ParseError("invalid label '" + std::string(label_text) + "'", line_no);
    }
    if (label >= class_count) {
      throw ValidationError("label " + std::to_string(label) + " is not below class count " +
                                std::to_string(class_count),
                            line_no);
    }
    const std::size_t width = fields.size() - 1;
    if (dim == 0) {
      dim = width;
    } else if (width != dim) {
      throw ValidationError("row has " + std::to_string(width) + " features, expected " + std::to_string(dim),
                            line_no);
    }
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const auto text = trim(fields[k]);
      double v = 0.0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v)) {
        throw ParseError("invalid feature value '" + std::string(text) + "'", line_no);
      }
      features.push_back(v);
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw InputError("dataset file " + path.string() + " has no rows");

  LabeledDataset out(class_count, dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.add(std::span<const double>(features.data() + i * dim, dim), labels[i]);
  }
  return out;
}

void write_csv_dataset(const LabeledDataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.label(i);
    for (double v : d.features(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing dataset file " + path.string());
}

TrainEvalSplit stratified_split(const LabeledDataset& d, double eval_fraction, Rng& rng) {
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("eval fraction must lie in [0, 1)");
  std::vector<std::vector<std::size_t>> by_class(d.class_count());
  for (std::size_t i = 0; i < d.size(); ++i) by_class[d.label(i)].push_back(i);

  std::vector<char> held(d.size(), 0);
  for (auto& idx : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    const auto k = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < k; ++j) held[idx[j]] = 1;
  }
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> eval_idx;
  for (std::size_t i = 0; i < d.size(); ++i) (held[i] ? eval_idx : train_idx).push_back(i);
  return {d.subset(train_idx), d.subset(eval_idx)};
}

}  // namespace fedmrl
