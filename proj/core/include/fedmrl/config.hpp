#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmrl/nn.hpp"
#include "fedmrl/qmix.hpp"

namespace fedmrl {

enum class Algorithm { kFedMrl, kFedAvg, kFedProx, kFedNova };

std::string_view to_string(Algorithm a);
/// Throws ConfigError for unknown names.
Algorithm parse_algorithm(std::string_view name);

struct DatasetSpec {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::string path;                  // csv only
  std::size_t classes = 3;
  std::size_t per_class = 600;
  std::size_t dim = 4;
  double separation = 3.0;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct SomConfig {
  std::size_t rows = 5;
  std::size_t cols = 5;
  std::size_t dim = 32;
  double sigma0 = 2.5;
  double lr0 = 0.5;
  /// 0 means "use the number of rounds".
  double decay_rounds = 0.0;

  friend bool operator==(const SomConfig&, const SomConfig&) = default;
};

struct ExperimentConfig {
  Algorithm algo = Algorithm::kFedAvg;
  std::uint64_t seed = 1;
  std::size_t clients = 5;
  std::size_t rounds = 30;
  double eval_fraction = 0.2;

  std::vector<std::size_t> hidden{16};
  Activation activation = Activation::kRelu;

  DatasetSpec data;
  double eta = 1.0;
  std::size_t shards_per_class = 200;

  double lr = 0.05;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 1;

  double lambda_fair = 1.0;
  double clamp_lo = 0.1;
  double clamp_hi = 10.0;

  double fedprox_mu = 0.1;

  RlConfig rl;
  ActionGrid grid;
  double epsilon_decay_fraction = 0.6;

  SomConfig som;

  /// Throws ConfigError naming the offending key path.
  void validate() const;

  std::vector<std::size_t> layer_sizes() const;
  RlConfig effective_rl() const;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Parses flat `key = value` lines (optionally grouped under `[section]`
/// headers, `#` comments). Overrides are applied after the text, so flags
/// beat file values and file values beat defaults. Unknown keys are rejected.
ExperimentConfig parse_config_text(std::string_view text, const ConfigOverrides& overrides = {});
ExperimentConfig parse_config_file(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// Canonical text form; parse_config_text(to_config_text(c)) == c.
std::string to_config_text(const ExperimentConfig& cfg);

/// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();

}  // namespace fedmrl
