#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedmrl/client.hpp"
#include "fedmrl/config.hpp"
#include "fedmrl/data.hpp"
#include "fedmrl/qmix.hpp"
#include "fedmrl/som.hpp"

namespace fedmrl {

struct RoundRecord {
  int round = 0;
  double global_acc = 0.0;
  double global_loss = 0.0;
  double reward = 0.0;
  std::vector<double> client_loss;
  std::vector<double> client_acc;
  std::vector<double> mu;
  std::vector<double> alpha;  // sums to H; baselines report H * N_h / N
  double loss_variance = 0.0;
  std::optional<double> f_bar;  // reference loss broadcast this round
  std::vector<GridCoord> bmus;  // fedmrl only
  std::optional<double> td_loss;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

/// Population variance.
double variance(std::span<const double> xs);

/// Everything the server holds between rounds plus the clients' private data.
struct Federation {
  ModelSpec model;
  ParamVector global;
  std::vector<LabeledDataset> clients;
  LabeledDataset eval;
  std::vector<ClientStats> stats;
  ClientConfig client_cfg;
  double lambda_fair = 0.0;
  double zeta = 0.7;
  std::uint64_t seed = 0;
  int round = 0;
  std::optional<double> f_bar;

  std::size_t client_count() const noexcept { return clients.size(); }
  std::size_t total_samples() const;

  /// Loads or synthesizes the dataset, holds out the stratified evaluation
  /// split, partitions the rest and initializes the global model.
  static Federation build(const ExperimentConfig& cfg);

  /// Per-client (entropy, proportion, accuracy, loss) for the current global
  /// model evaluated on each client's data.
  GlobalState observe_global_model() const;
};

/// Chooses proximal coefficients round by round.
class MuPolicy {
 public:
  virtual ~MuPolicy() = default;
  /// Coefficients for round `round`, given the state observed before it.
  virtual std::vector<double> begin_round(int round, const GlobalState& state) = 0;
  /// Feedback once the round's aggregated model has been evaluated.
  virtual void end_round(int round, double reward, const GlobalState& next_state, bool terminal) = 0;
  virtual std::optional<double> last_td_loss() const { return std::nullopt; }
  virtual nlohmann::json to_json() const = 0;
  virtual void load_json(const nlohmann::json& j) = 0;
};

class ConstantMuPolicy final : public MuPolicy {
 public:
  ConstantMuPolicy(std::size_t clients, double mu) : mus_(clients, mu) {}
  std::vector<double> begin_round(int, const GlobalState&) override { return mus_; }
  void end_round(int, double, const GlobalState&, bool) override {}
  nlohmann::json to_json() const override;
  void load_json(const nlohmann::json&) override {}

 private:
  std::vector<double> mus_;
};

class QmixMuPolicy final : public MuPolicy {
 public:
  QmixMuPolicy(std::size_t clients, std::size_t class_count, ActionGrid grid, RlConfig cfg, std::uint64_t seed);

  std::vector<double> begin_round(int round, const GlobalState& state) override;
  void end_round(int round, double reward, const GlobalState& next_state, bool terminal) override;
  std::optional<double> last_td_loss() const override { return controller_.last_td_loss(); }
  nlohmann::json to_json() const override;
  void load_json(const nlohmann::json& j) override;

  const QmixController& controller() const noexcept { return controller_; }

 private:
  std::size_t class_count_;
  QmixController controller_;
  GlobalState prev_state_;
  std::vector<double> next_mus_;
};

/// Produces the per-client aggregation weights (summing to H).
class AlphaPolicy {
 public:
  virtual ~AlphaPolicy() = default;
  virtual AlphaResult weights(std::span<const ParamVector> local_params, const ParamVector& global, int round) = 0;
  virtual nlohmann::json to_json() const = 0;
  virtual void load_json(const nlohmann::json& j) = 0;
};

class UniformAlphaPolicy final : public AlphaPolicy {
 public:
  AlphaResult weights(std::span<const ParamVector> local_params, const ParamVector& global, int round) override;
  nlohmann::json to_json() const override;
  void load_json(const nlohmann::json&) override {}
};

class SomAlphaPolicy final : public AlphaPolicy {
 public:
  SomAlphaPolicy(const SomConfig& cfg, std::size_t param_count, double default_decay, std::uint64_t seed);

  AlphaResult weights(std::span<const ParamVector> local_params, const ParamVector& global, int round) override;
  nlohmann::json to_json() const override;
  void load_json(const nlohmann::json& j) override;

  const SomGrid& grid() const noexcept { return som_; }

 private:
  SomGrid som_;
  Projector projector_;
};

/// Every client trains from the global model with coefficient mus[h].
std::vector<ClientReport> train_clients(const Federation& fed, std::span<const double> mus, double lambda_fair);

/// Baseline round: proximal coefficient `mu` for every client (0 = FedAvg),
/// no fairness term, aggregation weighted by |D^h| / |D|.
RoundRecord run_round_fedprox(Federation& fed, double mu);
RoundRecord run_round_fedavg(Federation& fed);

/// Normalized averaging: w <- w - tau_eff * sum_h p_h (w - w_h) / steps_h.
RoundRecord run_round_fednova(Federation& fed);

/// train (mu from policy, fairness against last round's mean loss) ->
/// SOM/cosine weighting -> aggregate -> evaluate -> reward -> controller.
RoundRecord run_round_fedmrl(Federation& fed, MuPolicy& mu_policy, AlphaPolicy& alpha_policy, bool terminal);

/// A configured run, stepped one round at a time.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);
  /// FedMRL with injected policies (used to stub the controller or SOM).
  Experiment(ExperimentConfig cfg, std::unique_ptr<MuPolicy> mu_policy, std::unique_ptr<AlphaPolicy> alpha_policy);

  bool finished() const noexcept { return records_.size() >= cfg_.rounds; }
  const RoundRecord& step();

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const Federation& federation() const noexcept { return fed_; }
  const std::vector<RoundRecord>& records() const noexcept { return records_; }
  const MuPolicy* mu_policy() const noexcept { return mu_policy_.get(); }
  const AlphaPolicy* alpha_policy() const noexcept { return alpha_policy_.get(); }

  /// JSON snapshot sufficient to continue the run bit-identically.
  nlohmann::json checkpoint() const;
  static Experiment resume(const nlohmann::json& checkpoint);

 private:
  ExperimentConfig cfg_;
  Federation fed_;
  std::unique_ptr<MuPolicy> mu_policy_;
  std::unique_ptr<AlphaPolicy> alpha_policy_;
  std::vector<RoundRecord> records_;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ParamVector final_params;
  Evaluation final_eval;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

/// Runs all rounds; `on_round` sees each record as soon as it exists so an
/// aborted run still leaves its prefix behind.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RoundCallback& on_round = {});
ExperimentResult run_experiment(Experiment& experiment, const RoundCallback& on_round = {});

/// sum_h (F_h - mean(F))^2.
double fairness_loss(std::span<const double> losses);

/// (F1, L_fair) for two clients whose losses sum to `total_loss`, F1 on an
/// even grid over [0, total_loss].
std::vector<std::pair<double, double>> fairness_landscape(double total_loss, std::size_t grid_n);

/// Gradient descent on fairness_loss over the losses themselves.
std::vector<double> fairness_descent_check(std::span<const double> initial_losses, std::size_t steps, double lr);

RoundRecord record_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const RoundRecord& r);

}  // namespace fedmrl
