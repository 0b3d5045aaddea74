#include "fedmrl/orchestrator.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "fedmrl/errors.hpp"

namespace fedmrl {

double variance(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double v = 0.0;
  for (double x : xs) v += (x - mean) * (x - mean);
  return v / n;
}

// --- Federation ---------------------------------------------------------------

std::size_t Federation::total_samples() const {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  return n;
}

Federation Federation::build(const ExperimentConfig& cfg) {
  cfg.validate();
  LabeledDataset full = cfg.data.source == "csv"
                            ? load_csv_dataset(cfg.data.path, cfg.data.classes)
                            : synth_gaussian_mixture(cfg.data.classes, cfg.data.per_class, cfg.data.dim,
                                                     cfg.data.separation, derive_seed(cfg.seed, "data"));
  Rng split_rng = make_stream(cfg.seed, "split");
  TrainEvalSplit split = stratified_split(full, cfg.eval_fraction, split_rng);
  if (split.eval.empty()) throw InputError("evaluation split is empty; increase eval_fraction or the dataset size");

  PartitionPlan plan;
  plan.eta = cfg.eta;
  plan.shards_per_class = cfg.shards_per_class;
  plan.client_count = cfg.clients;
  plan.rng_seed = derive_seed(cfg.seed, "partition");
  std::vector<LabeledDataset> parts = partition(split.train, plan);

  ModelSpec model{cfg.layer_sizes(), cfg.activation};
  model.layer_sizes.front() = full.dim();
  Rng init_rng = make_stream(cfg.seed, "model-init");
  DenseNet net = DenseNet::initialized(model.layer_sizes, model.activation, init_rng);

  Federation fed{model, net.params(), std::move(parts), std::move(split.eval), {}, {}, 0.0, cfg.rl.zeta, cfg.seed, 0,
                 std::nullopt};
  fed.client_cfg.lr = cfg.lr;
  fed.client_cfg.batch_size = cfg.batch_size;
  fed.client_cfg.local_epochs = cfg.local_epochs;
  fed.client_cfg.scale_clamp = {cfg.clamp_lo, cfg.clamp_hi};
  fed.lambda_fair = cfg.lambda_fair;
  const std::size_t total = fed.total_samples();
  for (const auto& c : fed.clients) fed.stats.push_back({client_entropy(c), client_proportion(c, total)});
  return fed;
}

GlobalState Federation::observe_global_model() const {
  GlobalState s;
  for (std::size_t h = 0; h < clients.size(); ++h) {
    const Evaluation ev = evaluate(model, global, clients[h]);
    s.per_client.push_back({stats[h].entropy, stats[h].proportion, ev.accuracy, ev.loss});
  }
  return s;
}

// --- Policies -----------------------------------------------------------------

nlohmann::json ConstantMuPolicy::to_json() const { return {{"kind", "constant"}, {"mus", mus_}}; }

QmixMuPolicy::QmixMuPolicy(std::size_t clients, std::size_t class_count, ActionGrid grid, RlConfig cfg,
                           std::uint64_t seed)
    : class_count_(class_count), controller_(clients, std::move(grid), std::move(cfg), seed) {}

std::vector<double> QmixMuPolicy::begin_round(int round, const GlobalState& state) {
  if (round == 0) {
    prev_state_ = normalize_state(state, class_count_);
    next_mus_ = controller_.controller_round(prev_state_, {}, 0.0, prev_state_, 0);
  }
  return next_mus_;
}

void QmixMuPolicy::end_round(int round, double reward, const GlobalState& next_state, bool terminal) {
  const GlobalState normalized = normalize_state(next_state, class_count_);
  const std::vector<std::size_t> taken = controller_.last_actions();
  next_mus_ = controller_.controller_round(prev_state_, taken, reward, normalized, round + 1, terminal);
  prev_state_ = normalized;
}

namespace {

nlohmann::json state_json(const GlobalState& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : s.per_client) arr.push_back({c.entropy, c.proportion, c.accuracy, c.loss});
  return arr;
}

GlobalState state_from(const nlohmann::json& j) {
  GlobalState s;
  for (const auto& c : j) s.per_client.push_back({c.at(0), c.at(1), c.at(2), c.at(3)});
  return s;
}

}  // namespace

nlohmann::json QmixMuPolicy::to_json() const {
  return {{"kind", "qmix"},
          {"controller", controller_.to_json()},
          {"prev_state", state_json(prev_state_)},
          {"next_mus", next_mus_}};
}

void QmixMuPolicy::load_json(const nlohmann::json& j) {
  controller_ = QmixController::from_json(j.at("controller"));
  prev_state_ = state_from(j.at("prev_state"));
  next_mus_ = j.at("next_mus").get<std::vector<double>>();
}

AlphaResult UniformAlphaPolicy::weights(std::span<const ParamVector> local_params, const ParamVector&, int) {
  AlphaResult r;
  r.alphas.assign(local_params.size(), 1.0);
  return r;
}

nlohmann::json UniformAlphaPolicy::to_json() const { return {{"kind", "uniform"}}; }

SomAlphaPolicy::SomAlphaPolicy(const SomConfig& cfg, std::size_t param_count, double default_decay,
                               std::uint64_t seed)
    : som_([&] {
        Rng rng = make_stream(seed, "som");
        SomGrid g = SomGrid::random(cfg.rows, cfg.cols, cfg.dim, rng);
        g.sigma0 = cfg.sigma0;
        g.lr0 = cfg.lr0;
        g.decay_rounds = cfg.decay_rounds > 0.0 ? cfg.decay_rounds : default_decay;
        return g;
      }()),
      projector_(cfg.dim, param_count, derive_seed(seed, "projector")) {}

AlphaResult SomAlphaPolicy::weights(std::span<const ParamVector> local_params, const ParamVector& global, int round) {
  return compute_alphas(som_, local_params, global, projector_, static_cast<double>(round));
}

nlohmann::json SomAlphaPolicy::to_json() const { return {{"kind", "som"}, {"som", som_to_json(som_)}}; }

void SomAlphaPolicy::load_json(const nlohmann::json& j) {
  SomGrid g = som_from_json(j.at("som"));
  if (g.dim != projector_.feature_dim()) throw ConfigError("SOM checkpoint dimension mismatch");
  som_ = std::move(g);
}

// --- Rounds -------------------------------------------------------------------

std::vector<ClientReport> train_clients(const Federation& fed, std::span<const double> mus, double lambda_fair) {
  if (mus.size() != fed.client_count()) throw ConfigError("need one proximal coefficient per client");
  std::vector<ClientReport> reports;
  reports.reserve(fed.client_count());
  for (std::size_t h = 0; h < fed.client_count(); ++h) {
    ClientConfig cfg = fed.client_cfg;
    cfg.client_id = h;
    cfg.round = fed.round;
    reports.push_back(local_train(fed.model, fed.global, fed.clients[h], cfg, mus[h], fed.f_bar, lambda_fair, fed.seed));
  }
  return reports;
}

namespace {

std::vector<ParamVector> local_params_of(const std::vector<ClientReport>& reports) {
  std::vector<ParamVector> out;
  out.reserve(reports.size());
  for (const auto& r : reports) out.push_back(r.local_params);
  return out;
}

std::vector<double> size_weights(const std::vector<ClientReport>& reports) {
  std::size_t total = 0;
  for (const auto& r : reports) total += r.sample_count;
  std::vector<double> p;
  for (const auto& r : reports) p.push_back(static_cast<double>(r.sample_count) / static_cast<double>(total));
  return p;
}

// Installs the new global model, evaluates it and fills the shared fields of
// the record; advances the round and the broadcast reference loss.
RoundRecord finish_round(Federation& fed, ParamVector next_global, const std::vector<ClientReport>& reports,
                         std::vector<double> mus, std::vector<double> alphas) {
  RoundRecord rec;
  rec.round = fed.round;
  rec.f_bar = fed.f_bar;
  for (const auto& r : reports) {
    rec.client_loss.push_back(r.train_loss);
    rec.client_acc.push_back(r.train_acc);
  }
  rec.mu = std::move(mus);
  rec.alpha = std::move(alphas);
  rec.loss_variance = variance(rec.client_loss);

  if (!next_global.all_finite()) throw DivergenceError("aggregated model is non-finite", fed.round);
  fed.global = std::move(next_global);
  const Evaluation ev = evaluate(fed.model, fed.global, fed.eval);
  rec.global_acc = ev.accuracy;
  rec.global_loss = ev.loss;
  rec.reward = reward(ev.accuracy, fed.zeta);

  double mean_loss = 0.0;
  for (double l : rec.client_loss) mean_loss += l;
  fed.f_bar = mean_loss / static_cast<double>(rec.client_loss.size());
  ++fed.round;
  return rec;
}

}  // namespace

RoundRecord run_round_fedprox(Federation& fed, double mu) {
  const std::size_t H = fed.client_count();
  const std::vector<double> mus(H, mu);
  const auto reports = train_clients(fed, mus, 0.0);
  const auto p = size_weights(reports);
  ParamVector next = weighted_sum(local_params_of(reports), p);
  std::vector<double> alphas;
  for (double ph : p) alphas.push_back(ph * static_cast<double>(H));
  return finish_round(fed, std::move(next), reports, mus, std::move(alphas));
}

RoundRecord run_round_fedavg(Federation& fed) { return run_round_fedprox(fed, 0.0); }

RoundRecord run_round_fednova(Federation& fed) {
  const std::size_t H = fed.client_count();
  const auto reports = train_clients(fed, std::vector<double>(H, 0.0), 0.0);
  const auto p = size_weights(reports);
  double tau_eff = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    if (reports[h].steps_taken == 0) throw ConfigError("client " + std::to_string(h) + " took zero local steps");
    tau_eff += p[h] * static_cast<double>(reports[h].steps_taken);
  }
  const ParamVector& w = fed.global;
  ParamVector direction(w.size());
  for (std::size_t h = 0; h < H; ++h) {
    const double coeff = p[h] / static_cast<double>(reports[h].steps_taken);
    const ParamVector& local = reports[h].local_params;
    for (std::size_t i = 0; i < w.size(); ++i) direction[i] += coeff * (w[i] - local[i]);
  }
  ParamVector next = w;
  for (std::size_t i = 0; i < w.size(); ++i) next[i] -= tau_eff * direction[i];
  std::vector<double> alphas;
  for (double ph : p) alphas.push_back(ph * static_cast<double>(H));
  return finish_round(fed, std::move(next), reports, std::vector<double>(H, 0.0), std::move(alphas));
}

RoundRecord run_round_fedmrl(Federation& fed, MuPolicy& mu_policy, AlphaPolicy& alpha_policy, bool terminal) {
  const int t = fed.round;
  const GlobalState observed = t == 0 ? fed.observe_global_model() : GlobalState{};
  const std::vector<double> mus = mu_policy.begin_round(t, observed);
  const auto reports = train_clients(fed, mus, fed.lambda_fair);

  GlobalState next_state;
  for (std::size_t h = 0; h < reports.size(); ++h) {
    next_state.per_client.push_back(
        {fed.stats[h].entropy, fed.stats[h].proportion, reports[h].train_acc, reports[h].train_loss});
  }
  const auto locals = local_params_of(reports);
  AlphaResult weighting = alpha_policy.weights(locals, fed.global, t);
  ParamVector next = aggregate(locals, weighting.alphas);

  RoundRecord rec = finish_round(fed, std::move(next), reports, mus, weighting.alphas);
  rec.bmus = std::move(weighting.bmus);
  mu_policy.end_round(t, rec.reward, next_state, terminal);
  rec.td_loss = mu_policy.last_td_loss();
  return rec;
}

// --- Experiment ---------------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), fed_(Federation::build(cfg_)) {
  if (cfg_.algo == Algorithm::kFedMrl) {
    mu_policy_ = std::make_unique<QmixMuPolicy>(cfg_.clients, cfg_.data.classes, cfg_.grid, cfg_.effective_rl(),
                                                cfg_.seed);
    alpha_policy_ = std::make_unique<SomAlphaPolicy>(cfg_.som, fed_.model.param_count(),
                                                     static_cast<double>(cfg_.rounds), cfg_.seed);
  } else {
    fed_.lambda_fair = 0.0;
  }
}

Experiment::Experiment(ExperimentConfig cfg, std::unique_ptr<MuPolicy> mu_policy,
                       std::unique_ptr<AlphaPolicy> alpha_policy)
    : cfg_(std::move(cfg)),
      fed_(Federation::build(cfg_)),
      mu_policy_(std::move(mu_policy)),
      alpha_policy_(std::move(alpha_policy)) {
  if (cfg_.algo != Algorithm::kFedMrl) throw ConfigError("algo: injected policies require fedmrl");
  if (!mu_policy_ || !alpha_policy_) throw ConfigError("injected policies must be non-null");
}

const RoundRecord& Experiment::step() {
  if (finished()) throw ConfigError("experiment already ran all rounds");
  RoundRecord rec;
  switch (cfg_.algo) {
    case Algorithm::kFedAvg: rec = run_round_fedavg(fed_); break;
    case Algorithm::kFedProx: rec = run_round_fedprox(fed_, cfg_.fedprox_mu); break;
    case Algorithm::kFedNova: rec = run_round_fednova(fed_); break;
    case Algorithm::kFedMrl: {
      const bool terminal = static_cast<std::size_t>(fed_.round) + 1 == cfg_.rounds;
      rec = run_round_fedmrl(fed_, *mu_policy_, *alpha_policy_, terminal);
      break;
    }
  }
  records_.push_back(std::move(rec));
  return records_.back();
}

namespace {
constexpr int kExperimentCheckpointVersion = 1;
}

nlohmann::json Experiment::checkpoint() const {
  nlohmann::json j;
  j["format"] = "fedmrl-experiment";
  j["version"] = kExperimentCheckpointVersion;
  j["config"] = to_config_text(cfg_);
  j["round"] = fed_.round;
  j["global"] = fed_.global.values();
  j["f_bar"] = fed_.f_bar ? nlohmann::json(*fed_.f_bar) : nlohmann::json(nullptr);
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records_) recs.push_back(record_to_json(r));
  j["records"] = std::move(recs);
  j["mu_policy"] = mu_policy_ ? mu_policy_->to_json() : nlohmann::json(nullptr);
  j["alpha_policy"] = alpha_policy_ ? alpha_policy_->to_json() : nlohmann::json(nullptr);
  return j;
}

Experiment Experiment::resume(const nlohmann::json& j) {
  if (j.value("format", "") != "fedmrl-experiment") throw ConfigError("not an experiment checkpoint");
  if (j.at("version").get<int>() != kExperimentCheckpointVersion) {
    throw ConfigError("unsupported experiment checkpoint version " + j.at("version").dump());
  }
  const ExperimentConfig cfg = parse_config_text(j.at("config").get<std::string>());
  const auto& mj = j.at("mu_policy");
  const auto& aj = j.at("alpha_policy");
  Experiment e(cfg);
  if (cfg.algo == Algorithm::kFedMrl) {
    // Stubbed policies are restored as stubs.
    if (mj.at("kind") == "constant") {
      const auto mus = mj.at("mus").get<std::vector<double>>();
      e.mu_policy_ = std::make_unique<ConstantMuPolicy>(mus.size(), mus.empty() ? 0.0 : mus.front());
    }
    if (aj.at("kind") == "uniform") e.alpha_policy_ = std::make_unique<UniformAlphaPolicy>();
    e.fed_.lambda_fair = cfg.lambda_fair;
  }
  e.fed_.round = j.at("round").get<int>();
  e.fed_.global = ParamVector(j.at("global").get<std::vector<double>>());
  if (e.fed_.global.size() != e.fed_.model.param_count()) throw ConfigError("checkpoint global model has the wrong size");
  if (!j.at("f_bar").is_null()) e.fed_.f_bar = j.at("f_bar").get<double>();
  for (const auto& r : j.at("records")) e.records_.push_back(record_from_json(r));
  if (e.mu_policy_) e.mu_policy_->load_json(mj);
  if (e.alpha_policy_) e.alpha_policy_->load_json(aj);
  return e;
}

ExperimentResult run_experiment(Experiment& experiment, const RoundCallback& on_round) {
  while (!experiment.finished()) {
    const RoundRecord& rec = experiment.step();
    if (on_round) on_round(rec);
  }
  ExperimentResult result;
  result.records = experiment.records();
  result.final_params = experiment.federation().global;
  result.final_eval = evaluate(experiment.federation().model, result.final_params, experiment.federation().eval);
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RoundCallback& on_round) {
  Experiment experiment(cfg);
  return run_experiment(experiment, on_round);
}

// --- Fairness analysis --------------------------------------------------------

double fairness_loss(std::span<const double> losses) {
  // sum_h (F_h - mean)^2 == (1/H) sum_{i<j} (F_i - F_j)^2; the pairwise form
  // is exactly zero for equal losses.
  double s = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    for (std::size_t j = i + 1; j < losses.size(); ++j) s += (losses[i] - losses[j]) * (losses[i] - losses[j]);
  }
  return losses.empty() ? 0.0 : s / static_cast<double>(losses.size());
}

std::vector<std::pair<double, double>> fairness_landscape(double total_loss, std::size_t grid_n) {
  if (grid_n < 3) throw ConfigError("landscape grid needs at least 3 points");
  if (!(total_loss >= 0.0)) throw ConfigError("total loss must be >= 0");
  std::vector<std::pair<double, double>> out;
  out.reserve(grid_n);
  const double reference = total_loss / 2.0;
  for (std::size_t i = 0; i < grid_n; ++i) {
    const double f1 = total_loss * static_cast<double>(i) / static_cast<double>(grid_n - 1);
    const double f2 = total_loss - f1;
    out.emplace_back(f1, (f1 - reference) * (f1 - reference) + (f2 - reference) * (f2 - reference));
  }
  return out;
}

std::vector<double> fairness_descent_check(std::span<const double> initial_losses, std::size_t steps, double lr) {
  if (initial_losses.size() < 2) throw ConfigError("fairness descent needs at least 2 clients");
  std::vector<double> f(initial_losses.begin(), initial_losses.end());
  const double n = static_cast<double>(f.size());
  for (std::size_t s = 0; s < steps; ++s) {
    const double mean = std::accumulate(f.begin(), f.end(), 0.0) / n;
    // d/dF_j sum_h (F_h - mean)^2 = 2 (F_j - mean); the mean's own
    // derivative contributes sum_h (F_h - mean) = 0.
    for (double& x : f) x -= lr * 2.0 * (x - mean);
  }
  return f;
}

// --- Serialization ------------------------------------------------------------

nlohmann::json record_to_json(const RoundRecord& r) {
  nlohmann::json bmus = nlohmann::json::array();
  for (const auto& g : r.bmus) bmus.push_back({g.row, g.col});
  return {{"round", r.round},
          {"global_acc", r.global_acc},
          {"global_loss", r.global_loss},
          {"reward", r.reward},
          {"client_loss", r.client_loss},
          {"client_acc", r.client_acc},
          {"mu", r.mu},
          {"alpha", r.alpha},
          {"loss_variance", r.loss_variance},
          {"f_bar", r.f_bar ? nlohmann::json(*r.f_bar) : nlohmann::json(nullptr)},
          {"bmu", bmus},
          {"td_loss", r.td_loss ? nlohmann::json(*r.td_loss) : nlohmann::json(nullptr)}};
}

RoundRecord record_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round");
  r.global_acc = j.at("global_acc");
  r.global_loss = j.at("global_loss");
  r.reward = j.at("reward");
  r.client_loss = j.at("client_loss").get<std::vector<double>>();
  r.client_acc = j.at("client_acc").get<std::vector<double>>();
  r.mu = j.at("mu").get<std::vector<double>>();
  r.alpha = j.at("alpha").get<std::vector<double>>();
  r.loss_variance = j.at("loss_variance");
  if (!j.at("f_bar").is_null()) r.f_bar = j.at("f_bar").get<double>();
  for (const auto& g : j.at("bmu")) r.bmus.push_back({g.at(0), g.at(1)});
  if (!j.at("td_loss").is_null()) r.td_loss = j.at("td_loss").get<double>();
  return r;
}

}  // namespace fedmrl
