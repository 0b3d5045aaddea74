#include "fedmrl/qmix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "fedmrl/errors.hpp"

namespace fedmrl {

std::vector<double> GlobalState::flatten() const {
  std::vector<double> out;
  out.reserve(per_client.size() * ClientState::kWidth);
  for (const auto& c : per_client) {
    const auto a = c.to_array();
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

GlobalState normalize_state(const GlobalState& raw, std::size_t class_count) {
  GlobalState out = raw;
  const double max_entropy = class_count > 1 ? std::log(static_cast<double>(class_count)) : 1.0;
  for (auto& c : out.per_client) {
    c.entropy /= max_entropy;
    c.loss = c.loss / (1.0 + c.loss);
  }
  return out;
}

void ActionGrid::validate() const {
  if (levels.empty()) throw ConfigError("action grid is empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] >= 0.0 && levels[i] <= 1.0)) throw ConfigError("action levels must lie in [0, 1]");
    if (i > 0 && !(levels[i] > levels[i - 1])) throw ConfigError("action levels must be strictly ascending");
  }
}

void RlConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("rl.gamma must lie in (0, 1]");
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw ConfigError("rl.zeta must lie in [0, 1]");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0) || !(epsilon_end >= 0.0 && epsilon_end <= epsilon_start)) {
    throw ConfigError("rl epsilon schedule requires 0 <= end <= start <= 1");
  }
  if (replay_capacity == 0) throw ConfigError("rl.replay_capacity must be positive");
  if (batch_size == 0) throw ConfigError("rl.batch must be positive");
  if (target_sync_period == 0) throw ConfigError("rl.target_sync must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("rl.lr must be positive");
  if (!(grad_clip > 0.0)) throw ConfigError("rl.grad_clip must be positive");
  if (mixer_embed == 0) throw ConfigError("rl.embed must be positive");
}

// --- Mixer ------------------------------------------------------------------

struct Mixer::Trace {
  std::vector<double> w1_raw;  // agents x embed
  std::vector<double> z;       // embed, pre-activation
  std::vector<double> hidden;  // embed
  std::vector<double> w2_raw;  // embed
  std::vector<double> v_hidden;
  double q_tot = 0.0;
};

Mixer::Mixer(std::size_t agents, std::size_t state_dim, std::size_t embed, MixerActivation activation)
    : agents_(agents), state_dim_(state_dim), embed_(embed), activation_(activation) {
  if (agents == 0 || state_dim == 0 || embed == 0) throw ConfigError("mixer dimensions must be positive");
  std::size_t offset = 0;
  auto block = [&](std::size_t in, std::size_t out) {
    Block b{offset, in, out};
    offset += b.size();
    return b;
  };
  hw1_ = block(state_dim, agents * embed);
  hb1_ = block(state_dim, embed);
  hw2_ = block(state_dim, embed);
  v1_ = block(state_dim, embed);
  v2_ = block(embed, 1);
  params_ = ParamVector(offset);
}

Mixer Mixer::initialized(std::size_t agents, std::size_t state_dim, std::size_t embed, Rng& rng) {
  Mixer m(agents, state_dim, embed);
  for (const Block* b : {&m.hw1_, &m.hb1_, &m.hw2_, &m.v1_, &m.v2_}) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(b->in));
    for (std::size_t i = 0; i < b->size(); ++i) {
      m.params_[b->offset + i] = (2.0 * rng.uniform01() - 1.0) * bound;
    }
  }
  return m;
}

Mixer Mixer::identity_diagnostic(std::size_t agents, std::size_t state_dim, std::size_t embed) {
  Mixer m(agents, state_dim, embed, MixerActivation::kIdentity);
  // Only bias paths are non-zero: W1[i][0] = 1 for every agent, W2 = e_0.
  for (std::size_t i = 0; i < agents; ++i) m.params_[m.hw1_.bias_offset() + i * embed] = 1.0;
  m.params_[m.hw2_.bias_offset()] = 1.0;
  return m;
}

void Mixer::set_params(ParamVector p) {
  if (p.size() != params_.size()) throw ConfigError("mixer parameter length mismatch");
  params_ = std::move(p);
}

namespace {

// y = W x + b for a hypernetwork block.
void affine(const ParamVector& p, const Mixer::Block& b, std::span<const double> x, std::vector<double>& y) {
  y.assign(b.out, 0.0);
  const double* w = p.view().data() + b.offset;
  const double* bias = p.view().data() + b.bias_offset();
  for (std::size_t o = 0; o < b.out; ++o) {
    double s = bias[o];
    const double* wr = w + o * b.in;
    for (std::size_t i = 0; i < b.in; ++i) s += wr[i] * x[i];
    y[o] = s;
  }
}

// Accumulates the gradient of a block given dL/dy.
void affine_grad(ParamVector& g, const Mixer::Block& b, std::span<const double> x, std::span<const double> dy) {
  double* gw = g.view().data() + b.offset;
  double* gb = g.view().data() + b.bias_offset();
  for (std::size_t o = 0; o < b.out; ++o) {
    if (dy[o] == 0.0) continue;
    gb[o] += dy[o];
    double* gwr = gw + o * b.in;
    for (std::size_t i = 0; i < b.in; ++i) gwr[i] += dy[o] * x[i];
  }
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

Mixer::Trace Mixer::run(std::span<const double> state, std::span<const double> agent_qs) const {
  if (state.size() != state_dim_) throw ConfigError("mixer state width mismatch");
  if (agent_qs.size() != agents_) throw ConfigError("mixer expects one Q-value per agent");
  Trace t;
  affine(params_, hw1_, state, t.w1_raw);
  std::vector<double> b1;
  affine(params_, hb1_, state, b1);
  t.z = b1;
  for (std::size_t i = 0; i < agents_; ++i) {
    for (std::size_t e = 0; e < embed_; ++e) t.z[e] += agent_qs[i] * std::abs(t.w1_raw[i * embed_ + e]);
  }
  t.hidden.resize(embed_);
  for (std::size_t e = 0; e < embed_; ++e) {
    t.hidden[e] = activation_ == MixerActivation::kTanh ? std::tanh(t.z[e]) : t.z[e];
  }
  affine(params_, hw2_, state, t.w2_raw);
  affine(params_, v1_, state, t.v_hidden);
  for (double& v : t.v_hidden) v = v > 0.0 ? v : 0.0;
  std::vector<double> b2;
  affine(params_, v2_, t.v_hidden, b2);
  double q = b2[0];
  for (std::size_t e = 0; e < embed_; ++e) q += t.hidden[e] * std::abs(t.w2_raw[e]);
  if (!std::isfinite(q)) throw DivergenceError("non-finite mixer output");
  t.q_tot = q;
  return t;
}

double Mixer::forward(std::span<const double> state, std::span<const double> agent_qs) const {
  return run(state, agent_qs).q_tot;
}

Mixer::Gradient Mixer::backward(std::span<const double> state, std::span<const double> agent_qs,
                                double upstream) const {
  const Trace t = run(state, agent_qs);
  Gradient g{std::vector<double>(agents_, 0.0), ParamVector(params_.size())};

  // Output: q = sum_e hidden_e |w2_e| + b2(state).
  std::vector<double> d_w2(embed_), d_z(embed_);
  for (std::size_t e = 0; e < embed_; ++e) {
    d_w2[e] = upstream * t.hidden[e] * sign_of(t.w2_raw[e]);
    const double d_hidden = upstream * std::abs(t.w2_raw[e]);
    const double slope = activation_ == MixerActivation::kTanh ? 1.0 - t.hidden[e] * t.hidden[e] : 1.0;
    d_z[e] = d_hidden * slope;
  }
  affine_grad(g.d_params, hw2_, state, d_w2);

  const std::vector<double> d_b2{upstream};
  affine_grad(g.d_params, v2_, t.v_hidden, d_b2);
  std::vector<double> d_v(embed_);
  const double* v2w = params_.view().data() + v2_.offset;
  for (std::size_t e = 0; e < embed_; ++e) d_v[e] = t.v_hidden[e] > 0.0 ? upstream * v2w[e] : 0.0;
  affine_grad(g.d_params, v1_, state, d_v);

  affine_grad(g.d_params, hb1_, state, d_z);
  std::vector<double> d_w1(agents_ * embed_);
  for (std::size_t i = 0; i < agents_; ++i) {
    double dq = 0.0;
    for (std::size_t e = 0; e < embed_; ++e) {
      const double raw = t.w1_raw[i * embed_ + e];
      dq += d_z[e] * std::abs(raw);
      d_w1[i * embed_ + e] = d_z[e] * agent_qs[i] * sign_of(raw);
    }
    g.d_agent_qs[i] = dq;
  }
  affine_grad(g.d_params, hw1_, state, d_w1);
  return g;
}

// --- Networks & replay ------------------------------------------------------

QmixNets QmixNets::create(std::size_t agent_count, std::size_t action_count, const RlConfig& cfg, Rng& rng) {
  if (agent_count == 0 || action_count == 0) throw ConfigError("QMIX needs at least one agent and action");
  std::vector<std::size_t> sizes{ClientState::kWidth};
  sizes.insert(sizes.end(), cfg.agent_hidden.begin(), cfg.agent_hidden.end());
  sizes.push_back(action_count);
  std::vector<DenseNet> agents;
  for (std::size_t h = 0; h < agent_count; ++h) {
    agents.push_back(DenseNet::initialized(sizes, Activation::kRelu, rng));
  }
  Mixer mixer = Mixer::initialized(agent_count, agent_count * ClientState::kWidth, cfg.mixer_embed, rng);
  return QmixNets{agents, mixer, agents, mixer, 0};
}

void QmixNets::sync_targets() {
  target_agents = agents;
  target_mixer = mixer;
}

std::vector<double> QmixNets::agent_q_values(std::size_t h, const GlobalState& state) const {
  Matrix input(1, ClientState::kWidth);
  const auto a = state.per_client.at(h).to_array();
  std::copy(a.begin(), a.end(), input.data.begin());
  const ForwardCache cache = propagate(agents[h], input);
  return cache.output().data;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw InputError("cannot sample from an empty replay buffer");
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng.uniform_index(items_.size())]);
  return out;
}

// --- Value functions --------------------------------------------------------

double reward(double accuracy, double zeta) { return std::exp(accuracy - zeta) - 1.0; }

double discounted_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

double vdn_qtot(std::span<const double> agent_qs) {
  double s = 0.0;
  for (double q : agent_qs) s += q;
  return s;
}

double qmix_qtot(const QmixNets& nets, const GlobalState& state, std::span<const double> chosen_qs) {
  if (chosen_qs.size() != nets.agent_count()) throw ConfigError("qmix_qtot expects one Q-value per agent");
  return nets.mixer.forward(state.flatten(), chosen_qs);
}

ActionSelection select_actions(const QmixNets& nets, const GlobalState& state, const ActionGrid& grid,
                               double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (grid.size() != nets.action_count()) throw ConfigError("action grid size does not match agent outputs");
  ActionSelection sel;
  for (std::size_t h = 0; h < nets.agent_count(); ++h) {
    std::size_t idx;
    // Consume the exploration draw only when epsilon is fractional so that
    // epsilon = 0 is a pure greedy readout.
    if (epsilon >= 1.0 || (epsilon > 0.0 && rng.uniform01() < epsilon)) {
      idx = rng.uniform_index(grid.size());
    } else {
      idx = argmax(nets.agent_q_values(h, state));
    }
    sel.indices.push_back(idx);
    sel.mus.push_back(grid.levels[idx]);
  }
  return sel;
}

double td_update(QmixNets& nets, std::span<const Transition> batch, const RlConfig& cfg) {
  if (batch.empty()) throw InputError("td_update needs a non-empty batch");
  const std::size_t H = nets.agent_count();
  const std::size_t A = nets.action_count();
  const std::size_t B = batch.size();
  constexpr std::size_t W = ClientState::kWidth;

  auto agent_inputs = [&](std::size_t h, bool next) {
    Matrix m(B, W);
    for (std::size_t b = 0; b < B; ++b) {
      const GlobalState& s = next ? batch[b].next_state : batch[b].state;
      if (s.agent_count() != H) throw ConfigError("transition state has the wrong agent count");
      const auto a = s.per_client[h].to_array();
      std::copy(a.begin(), a.end(), m.row(b).begin());
    }
    return m;
  };

  // Online agent Q-values for the taken actions.
  std::vector<ForwardCache> caches;
  std::vector<std::vector<double>> chosen(B, std::vector<double>(H));
  for (std::size_t h = 0; h < H; ++h) {
    caches.push_back(propagate(nets.agents[h], agent_inputs(h, false)));
    const Matrix& q = caches.back().output();
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t a = batch[b].actions.at(h);
      if (a >= A) throw ConfigError("transition action index out of range");
      chosen[b][h] = q(b, a);
    }
  }

  // Bootstrapped targets from the frozen copies.
  std::vector<double> targets(B);
  bool any_bootstrap = false;
  for (const auto& t : batch) any_bootstrap = any_bootstrap || (!t.done && cfg.gamma != 0.0);
  std::vector<std::vector<double>> next_qs(B, std::vector<double>(H, 0.0));
  if (any_bootstrap) {
    for (std::size_t h = 0; h < H; ++h) {
      const ForwardCache c = propagate(nets.target_agents[h], agent_inputs(h, true));
      for (std::size_t b = 0; b < B; ++b) {
        const auto row = c.output().row(b);
        next_qs[b][h] = row[argmax(row)];
      }
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    targets[b] = batch[b].reward;
    if (!batch[b].done && cfg.gamma != 0.0) {
      targets[b] += cfg.gamma * nets.target_mixer.forward(batch[b].next_state.flatten(), next_qs[b]);
    }
  }

  // Loss and gradients.
  double loss = 0.0;
  ParamVector mixer_grad(nets.mixer.params().size());
  std::vector<Matrix> d_out(H, Matrix(B, A));
  for (std::size_t b = 0; b < B; ++b) {
    const auto state = batch[b].state.flatten();
    const double q_tot = nets.mixer.forward(state, chosen[b]);
    const double err = q_tot - targets[b];
    loss += err * err;
    const Mixer::Gradient g = nets.mixer.backward(state, chosen[b], 2.0 * err / static_cast<double>(B));
    for (std::size_t i = 0; i < mixer_grad.size(); ++i) mixer_grad[i] += g.d_params[i];
    for (std::size_t h = 0; h < H; ++h) d_out[h](b, batch[b].actions[h]) += g.d_agent_qs[h];
  }
  loss /= static_cast<double>(B);
  if (!std::isfinite(loss)) throw DivergenceError("non-finite TD loss");

  std::vector<ParamVector> agent_grads;
  double norm_sq = 0.0;
  for (double v : mixer_grad) norm_sq += v * v;
  for (std::size_t h = 0; h < H; ++h) {
    agent_grads.push_back(backprop(nets.agents[h], caches[h], d_out[h]));
    for (double v : agent_grads.back()) norm_sq += v * v;
  }
  if (!std::isfinite(norm_sq)) throw DivergenceError("non-finite TD gradient");
  const double norm = std::sqrt(norm_sq);
  const double scale = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

  nets.mixer.set_params(sgd_step(nets.mixer.params(), mixer_grad, cfg.learning_rate * scale));
  for (std::size_t h = 0; h < H; ++h) {
    nets.agents[h].set_params(sgd_step(nets.agents[h].params(), agent_grads[h], cfg.learning_rate * scale));
  }
  ++nets.update_count;
  if (nets.update_count % cfg.target_sync_period == 0) nets.sync_targets();
  return loss;
}

// --- Controller -------------------------------------------------------------

QmixController::QmixController(std::size_t agent_count, ActionGrid grid, RlConfig cfg, std::uint64_t seed)
    : grid_(std::move(grid)),
      cfg_(std::move(cfg)),
      nets_([&] {
        grid_.validate();
        cfg_.validate();
        Rng init = make_stream(seed, "controller-init");
        return QmixNets::create(agent_count, grid_.size(), cfg_, init);
      }()),
      replay_(cfg_.replay_capacity),
      rng_(make_stream(seed, "controller")),
      last_actions_(agent_count, 0) {}

double QmixController::epsilon() const {
  if (cfg_.epsilon_decay_rounds == 0) return cfg_.epsilon_end;
  if (decays_ >= cfg_.epsilon_decay_rounds) return cfg_.epsilon_end;
  const double frac = static_cast<double>(decays_) / static_cast<double>(cfg_.epsilon_decay_rounds);
  return cfg_.epsilon_start - (cfg_.epsilon_start - cfg_.epsilon_end) * frac;
}

std::vector<double> QmixController::controller_round(const GlobalState& prev_state,
                                                     std::span<const std::size_t> prev_actions, double reward,
                                                     const GlobalState& new_state, int round_index, bool terminal) {
  if (round_index < 0) throw ConfigError("round index must be >= 0");
  const std::size_t H = nets_.agent_count();
  if (round_index == 0) {
    last_actions_.assign(H, 0);
    return std::vector<double>(H, grid_.levels.front());
  }
  if (prev_actions.size() != H) throw ConfigError("previous joint action has the wrong length");
  replay_.push(Transition{prev_state, {prev_actions.begin(), prev_actions.end()}, reward, new_state, terminal});
  if (replay_.size() >= cfg_.batch_size) {
    const auto batch = replay_.sample(cfg_.batch_size, rng_);
    last_td_loss_ = td_update(nets_, batch, cfg_);
  }
  ++decays_;
  const ActionSelection sel = select_actions(nets_, new_state, grid_, epsilon(), rng_);
  last_actions_ = sel.indices;
  return sel.mus;
}

// --- Checkpoint -------------------------------------------------------------

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::json state_to_json(const GlobalState& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : s.per_client) arr.push_back({c.entropy, c.proportion, c.accuracy, c.loss});
  return arr;
}

GlobalState state_from_json(const nlohmann::json& j) {
  GlobalState s;
  for (const auto& c : j) s.per_client.push_back({c.at(0), c.at(1), c.at(2), c.at(3)});
  return s;
}

nlohmann::json nets_to_json(const std::vector<DenseNet>& nets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& n : nets) arr.push_back(n.params().values());
  return arr;
}

void nets_from_json(std::vector<DenseNet>& nets, const nlohmann::json& j) {
  if (j.size() != nets.size()) throw ConfigError("checkpoint agent count mismatch");
  for (std::size_t h = 0; h < nets.size(); ++h) {
    nets[h].set_params(ParamVector(j.at(h).get<std::vector<double>>()));
  }
}

}  // namespace

nlohmann::json QmixController::to_json() const {
  nlohmann::json j;
  j["format"] = "fedmrl-qmix-controller";
  j["version"] = kCheckpointVersion;
  j["agents"] = nets_.agent_count();
  j["levels"] = grid_.levels;
  j["rl"] = {{"gamma", cfg_.gamma},
             {"zeta", cfg_.zeta},
             {"epsilon_start", cfg_.epsilon_start},
             {"epsilon_end", cfg_.epsilon_end},
             {"epsilon_decay_rounds", cfg_.epsilon_decay_rounds},
             {"replay_capacity", cfg_.replay_capacity},
             {"batch_size", cfg_.batch_size},
             {"target_sync_period", cfg_.target_sync_period},
             {"learning_rate", cfg_.learning_rate},
             {"grad_clip", cfg_.grad_clip},
             {"agent_hidden", cfg_.agent_hidden},
             {"mixer_embed", cfg_.mixer_embed}};
  j["agent_params"] = nets_to_json(nets_.agents);
  j["target_agent_params"] = nets_to_json(nets_.target_agents);
  j["mixer_params"] = nets_.mixer.params().values();
  j["target_mixer_params"] = nets_.target_mixer.params().values();
  j["update_count"] = nets_.update_count;
  j["decays"] = decays_;
  j["last_actions"] = last_actions_;
  j["last_td_loss"] = last_td_loss_ ? nlohmann::json(*last_td_loss_) : nlohmann::json(nullptr);
  j["rng"] = rng_.serialize();
  nlohmann::json replay = nlohmann::json::array();
  for (const auto& t : replay_.items()) {
    replay.push_back({{"state", state_to_json(t.state)},
                      {"actions", t.actions},
                      {"reward", t.reward},
                      {"next_state", state_to_json(t.next_state)},
                      {"done", t.done}});
  }
  j["replay"] = std::move(replay);
  return j;
}

QmixController QmixController::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "fedmrl-qmix-controller") throw ConfigError("not a controller checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw ConfigError("unsupported controller checkpoint version " + j.at("version").dump());
  }
  ActionGrid grid{j.at("levels").get<std::vector<double>>()};
  const auto& r = j.at("rl");
  RlConfig cfg;
  cfg.gamma = r.at("gamma");
  cfg.zeta = r.at("zeta");
  cfg.epsilon_start = r.at("epsilon_start");
  cfg.epsilon_end = r.at("epsilon_end");
  cfg.epsilon_decay_rounds = r.at("epsilon_decay_rounds");
  cfg.replay_capacity = r.at("replay_capacity");
  cfg.batch_size = r.at("batch_size");
  cfg.target_sync_period = r.at("target_sync_period");
  cfg.learning_rate = r.at("learning_rate");
  cfg.grad_clip = r.at("grad_clip");
  cfg.agent_hidden = r.at("agent_hidden").get<std::vector<std::size_t>>();
  cfg.mixer_embed = r.at("mixer_embed");

  QmixController c(j.at("agents").get<std::size_t>(), grid, cfg, 0);
  nets_from_json(c.nets_.agents, j.at("agent_params"));
  nets_from_json(c.nets_.target_agents, j.at("target_agent_params"));
  c.nets_.mixer.set_params(ParamVector(j.at("mixer_params").get<std::vector<double>>()));
  c.nets_.target_mixer.set_params(ParamVector(j.at("target_mixer_params").get<std::vector<double>>()));
  c.nets_.update_count = j.at("update_count");
  c.decays_ = j.at("decays");
  c.last_actions_ = j.at("last_actions").get<std::vector<std::size_t>>();
  if (!j.at("last_td_loss").is_null()) c.last_td_loss_ = j.at("last_td_loss").get<double>();
  c.rng_.deserialize(j.at("rng").get<std::string>());
  for (const auto& t : j.at("replay")) {
    c.replay_.push(Transition{state_from_json(t.at("state")), t.at("actions").get<std::vector<std::size_t>>(),
                              t.at("reward").get<double>(), state_from_json(t.at("next_state")),
                              t.at("done").get<bool>()});
  }
  return c;
}

}  // namespace fedmrl
