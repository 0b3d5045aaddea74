#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedmrl/nn.hpp"
#include "fedmrl/rng.hpp"

namespace fedmrl {

/// Per-client observation: (entropy, proportion, accuracy, loss).
struct ClientState {
  double entropy = 0.0;
  double proportion = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;

  static constexpr std::size_t kWidth = 4;
  std::array<double, kWidth> to_array() const { return {entropy, proportion, accuracy, loss}; }

  friend bool operator==(const ClientState&, const ClientState&) = default;
};

struct GlobalState {
  std::vector<ClientState> per_client;

  std::size_t agent_count() const noexcept { return per_client.size(); }
  /// Client 4-vectors concatenated in client order.
  std::vector<double> flatten() const;

  friend bool operator==(const GlobalState&, const GlobalState&) = default;
};

/// Scales entropy by 1/ln M and squashes loss with x/(1+x) so every agent
/// input lies in a bounded range.
GlobalState normalize_state(const GlobalState& raw, std::size_t class_count);

/// Discrete proximal-coefficient levels an agent can choose from.
struct ActionGrid {
  std::vector<double> levels{1e-5, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0};

  std::size_t size() const noexcept { return levels.size(); }
  /// Throws ConfigError unless strictly ascending within [0, 1].
  void validate() const;
};

struct Transition {
  GlobalState state;
  std::vector<std::size_t> actions;
  double reward = 0.0;
  GlobalState next_state;
  bool done = false;
};

struct RlConfig {
  double gamma = 0.99;
  double zeta = 0.7;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  /// Number of decay events over which epsilon falls linearly to its floor.
  std::size_t epsilon_decay_rounds = 18;
  std::size_t replay_capacity = 500;
  std::size_t batch_size = 32;
  std::size_t target_sync_period = 20;
  double learning_rate = 0.01;
  double grad_clip = 10.0;
  std::vector<std::size_t> agent_hidden{64, 64};
  std::size_t mixer_embed = 32;

  void validate() const;
};

enum class MixerActivation { kTanh, kIdentity };

/// Monotonic mixing network. Hypernetworks conditioned on the global state
/// produce the weights that combine agent Q-values; the weights applied to
/// the Q-values pass through |.| so dQtot/dQ_i >= 0.
class Mixer {
 public:
  Mixer(std::size_t agents, std::size_t state_dim, std::size_t embed,
        MixerActivation activation = MixerActivation::kTanh);

  /// PyTorch-style uniform(+-1/sqrt(fan_in)) initialization.
  static Mixer initialized(std::size_t agents, std::size_t state_dim, std::size_t embed, Rng& rng);

  /// Linear mixer whose output is exactly the sum of agent Q-values, for
  /// comparison against the value-decomposition sum.
  static Mixer identity_diagnostic(std::size_t agents, std::size_t state_dim, std::size_t embed);

  std::size_t agents() const noexcept { return agents_; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  std::size_t embed() const noexcept { return embed_; }
  MixerActivation activation() const noexcept { return activation_; }

  const ParamVector& params() const noexcept { return params_; }
  ParamVector& params() noexcept { return params_; }
  void set_params(ParamVector p);

  double forward(std::span<const double> state, std::span<const double> agent_qs) const;

  struct Gradient {
    std::vector<double> d_agent_qs;
    ParamVector d_params;
  };
  /// Gradient of upstream * Qtot w.r.t. agent Q-values and mixer parameters.
  Gradient backward(std::span<const double> state, std::span<const double> agent_qs, double upstream) const;

  /// Hypernetwork blocks, in parameter order: layer-1 weights, layer-1 bias,
  /// layer-2 weights, state-value hidden layer, state-value output.
  struct Block {
    std::size_t offset = 0;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t bias_offset() const { return offset + in * out; }
    std::size_t size() const { return (in + 1) * out; }
  };
  const Block& hyper_w1() const noexcept { return hw1_; }
  const Block& hyper_b1() const noexcept { return hb1_; }
  const Block& hyper_w2() const noexcept { return hw2_; }
  const Block& value_hidden() const noexcept { return v1_; }
  const Block& value_out() const noexcept { return v2_; }

 private:
  struct Trace;
  Trace run(std::span<const double> state, std::span<const double> agent_qs) const;

  std::size_t agents_;
  std::size_t state_dim_;
  std::size_t embed_;
  MixerActivation activation_;
  Block hw1_, hb1_, hw2_, v1_, v2_;
  ParamVector params_;
};

/// Online and target copies of the agent networks and the mixer.
struct QmixNets {
  std::vector<DenseNet> agents;
  Mixer mixer;
  std::vector<DenseNet> target_agents;
  Mixer target_mixer;
  std::size_t update_count = 0;

  /// One agent net per client (4 -> hidden... -> action_count) plus mixer.
  static QmixNets create(std::size_t agent_count, std::size_t action_count, const RlConfig& cfg, Rng& rng);

  std::size_t agent_count() const noexcept { return agents.size(); }
  std::size_t action_count() const { return agents.front().output_dim(); }

  void sync_targets();
  /// Q-values of agent h for its slice of `state`.
  std::vector<double> agent_q_values(std::size_t h, const GlobalState& state) const;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  /// Uniform sampling with replacement.
  std::vector<Transition> sample(std::size_t n, Rng& rng) const;
  const std::deque<Transition>& items() const noexcept { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

/// r_t = e^(acc - zeta) - 1.
double reward(double accuracy, double zeta);

/// sum_t gamma^(t-1) r_t.
double discounted_return(std::span<const double> rewards, double gamma);

double vdn_qtot(std::span<const double> agent_qs);

double qmix_qtot(const QmixNets& nets, const GlobalState& state, std::span<const double> chosen_qs);

struct ActionSelection {
  std::vector<std::size_t> indices;
  std::vector<double> mus;
};

/// Epsilon-greedy per agent; greedy ties resolve to the lowest index.
ActionSelection select_actions(const QmixNets& nets, const GlobalState& state, const ActionGrid& grid,
                               double epsilon, Rng& rng);

/// One SGD step on the mean squared TD error against
/// y = r + gamma (1 - done) Qtot_target(s', per-agent greedy a'). Returns the
/// pre-update loss. Target copies are refreshed every target_sync_period updates.
double td_update(QmixNets& nets, std::span<const Transition> batch, const RlConfig& cfg);

/// Server-side controller that owns the networks, replay memory and the
/// exploration schedule across one federated run.
class QmixController {
 public:
  QmixController(std::size_t agent_count, ActionGrid grid, RlConfig cfg, std::uint64_t seed);

  /// Proximal coefficients for round `round_index`. Round 0 returns the
  /// lowest grid level for every agent and ignores the other arguments.
  /// Later rounds store (prev_state, prev_actions, reward, new_state), run
  /// one TD update once the buffer holds a full batch, decay epsilon and
  /// select the next joint action.
  std::vector<double> controller_round(const GlobalState& prev_state, std::span<const std::size_t> prev_actions,
                                       double reward, const GlobalState& new_state, int round_index,
                                       bool terminal = false);

  const std::vector<std::size_t>& last_actions() const noexcept { return last_actions_; }
  double epsilon() const;
  std::size_t decay_count() const noexcept { return decays_; }
  std::optional<double> last_td_loss() const noexcept { return last_td_loss_; }
  std::size_t updates_performed() const noexcept { return nets_.update_count; }

  const QmixNets& nets() const noexcept { return nets_; }
  const ReplayBuffer& replay() const noexcept { return replay_; }
  const ActionGrid& grid() const noexcept { return grid_; }
  const RlConfig& config() const noexcept { return cfg_; }

  /// Versioned JSON checkpoint of networks, replay memory and RNG state.
  nlohmann::json to_json() const;
  static QmixController from_json(const nlohmann::json& j);

 private:
  ActionGrid grid_;
  RlConfig cfg_;
  QmixNets nets_;
  ReplayBuffer replay_;
  Rng rng_;
  std::size_t decays_ = 0;
  std::vector<std::size_t> last_actions_;
  std::optional<double> last_td_loss_;
};

}  // namespace fedmrl
