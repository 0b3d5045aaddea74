// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmrl/data.hpp"
#include "fedmrl/orchestrator.hpp"
#include "fedmrl/qmix.hpp"
#include "fedmrl/reporting.hpp"
#include "fedmrl/som.hpp"
#include "matrix_game.hpp"
#include "oracles.hpp"

using namespace fedmrl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Desk-scale comparative setup shared by several criteria.
ExperimentConfig comparative_config(Algorithm algo, std::uint64_t seed) {
  ExperimentConfig c;
  c.algo = algo;
  c.seed = seed;
  c.clients = 5;
  c.rounds = 30;
  c.eta = 1.0;
  c.data.classes = 3;
  c.data.per_class = 600;
  c.data.separation = 3.0;
  return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const double mus[] = {0.0, 0.1, 1.0};
  const double lambdas[] = {0.0, 1.0};
  double worst = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (double mu : mus) {
      for (double lambda : lambdas) {
        Rng rng(5000 + 31 * seed + static_cast<std::uint64_t>(n));
        const Activation act = (n % 2) ? Activation::kRelu : Activation::kTanh;
        const std::size_t in = 2 + rng.uniform_index(5), hid = 3 + rng.uniform_index(6), out = 2 + rng.uniform_index(4);
        DenseNet net = DenseNet::initialized({in, hid, out}, act, rng);
        const Batch b = testing::random_batch(4 + rng.uniform_index(12), in, out, rng);
        ObjectiveSpec spec;
        spec.mu = mu;
        spec.anchor = testing::random_params(net.params().size(), 0.5, rng);
        spec.lambda_fair = lambda;
        spec.f_bar = forward(net, b).loss + (rng.uniform01() - 0.5) * 0.6;
        spec.scale_clamp = {1e-9, 1e9};
        const auto lg = loss_and_grad(net, b, spec);
        worst = std::max(worst, testing::max_relative_error(lg.grad, testing::numeric_gradient(net, b, spec)));
        ++n;
      }
    }
  }
  return {n >= 20 && worst < 1e-5, "max rel err " + fmt("%.2e", worst) + " over " + std::to_string(n) + " configs"};
}

Outcome fairness_minimizer() {
  bool ok = true;
  const auto f = fairness_descent_check(std::vector<double>{1.0, 0.0}, 200, 0.1);
  const double descent_err = std::max(std::abs(f[0] - 0.5), std::abs(f[1] - 0.5));
  ok &= descent_err <= 1e-6;

  const fs::path path = fs::temp_directory_path() / "fedmrl_acceptance_landscape.csv";
  const double total = 1.7;
  emit_landscape(total, 101, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  double best_f1 = -1.0, best_l = INFINITY;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const double f1 = std::stod(line.substr(0, comma)), l = std::stod(line.substr(comma + 1));
    if (l < best_l) best_l = l, best_f1 = f1;
  }
  fs::remove(path);
  ok &= std::abs(best_f1 - total / 2.0) <= 1e-12;

  Rng rng(3);
  for (std::size_t H : {2u, 3u, 5u}) {
    for (int k = 0; k < 100; ++k) {
      const double v = rng.uniform01() * 3.0;
      ok &= fairness_loss(std::vector<double>(H, v)) == 0.0;
      std::vector<double> unequal(H, v);
      unequal[rng.uniform_index(H)] += 1e-3 + rng.uniform01();
      ok &= fairness_loss(unequal) > 0.0;
    }
  }
  return {ok, "descent err " + fmt("%.1e", descent_err) + ", landscape min at F1=" + fmt("%.4f", best_f1)};
}

Outcome qmix_monotonicity() {
  Rng rng(77);
  double worst = INFINITY;
  for (int probe = 0; probe < 1000; ++probe) {
    const std::size_t H = 2 + rng.uniform_index(9);
    const std::size_t embed = 4 + rng.uniform_index(29);
    Mixer m = Mixer::initialized(H, ClientState::kWidth * H, embed, rng);
    std::vector<double> state(ClientState::kWidth * H);
    for (double& v : state) v = rng.normal();
    std::vector<double> q(H);
    for (double& v : q) v = rng.normal(0.0, 3.0);
    auto bumped = q;
    bumped[rng.uniform_index(H)] += rng.uniform01() * 2.0;
    worst = std::min(worst, m.forward(state, bumped) - m.forward(state, q));
  }
  double vdn_err = 0.0;
  for (std::size_t H : {2u, 5u, 10u}) {
    const Mixer id = Mixer::identity_diagnostic(H, ClientState::kWidth * H, 32);
    for (int k = 0; k < 100; ++k) {
      std::vector<double> state(ClientState::kWidth * H), q(H);
      for (double& v : state) v = rng.normal();
      for (double& v : q) v = rng.normal(0.0, 3.0);
      vdn_err = std::max(vdn_err, std::abs(id.forward(state, q) - vdn_qtot(q)));
    }
  }
  return {worst >= -1e-9 && vdn_err <= 1e-9,
          "min dQ_tot " + fmt("%.2e", worst) + ", identity-vs-VDN " + fmt("%.1e", vdn_err)};
}

Outcome matrix_game() {
  const testing::Payoff payoff{{{4, 10, 2}, {1, 2, 0}, {2, 4, 1}}};
  const auto best = testing::best_joint_action(payoff);
  int solved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    if (testing::train_matrix_game(payoff, seed, 5000).greedy == best) ++solved;
  }
  return {solved >= 4, std::to_string(solved) + "/5 seeds greedy-optimal after 5000 steps"};
}

Outcome reward_anchors() {
  bool ok = true;
  for (double z : {0.0, 0.3, 0.7, 1.0}) ok &= reward(z, z) == 0.0;
  const double err = std::abs(reward(1.0, 0.0) - (std::numbers::e - 1.0));
  ok &= err <= 1e-12;
  double prev = -INFINITY;
  for (int i = 0; i < 100; ++i) {
    const double r = reward(static_cast<double>(i) / 99.0, 0.7);
    ok &= r > prev;
    prev = r;
  }
  return {ok, "|r(1,0) - (e-1)| = " + fmt("%.1e", err)};
}

Outcome equivalence_chain() {
  // 100 per class, 20% held out, 20 shards per class: three clients of 80.
  auto base = [](Algorithm a) {
    ExperimentConfig c;
    c.algo = a;
    c.seed = 21;
    c.clients = 3;
    c.rounds = 5;
    c.data.per_class = 100;
    c.shards_per_class = 20;
    return c;
  };
  auto globals = [](Experiment& e) {
    std::vector<ParamVector> g;
    while (!e.finished()) {
      e.step();
      g.push_back(e.federation().global);
    }
    return g;
  };
  auto mrl_cfg = base(Algorithm::kFedMrl);
  mrl_cfg.lambda_fair = 0.0;
  Experiment mrl(mrl_cfg, std::make_unique<ConstantMuPolicy>(3, 0.0), std::make_unique<UniformAlphaPolicy>());
  auto prox_cfg = base(Algorithm::kFedProx);
  prox_cfg.fedprox_mu = 0.0;
  Experiment prox(prox_cfg);
  Experiment avg(base(Algorithm::kFedAvg));
  const auto a = globals(mrl), b = globals(prox), c = globals(avg);
  const bool ok = c.size() == 5 && a == c && b == c;
  return {ok, ok ? "5 rounds bit-identical" : "globals differ"};
}

// Forwards to the SOM weighting and keeps the client models it saw.
class RecordingAlphaPolicy final : public AlphaPolicy {
 public:
  explicit RecordingAlphaPolicy(std::unique_ptr<AlphaPolicy> inner) : inner_(std::move(inner)) {}
  AlphaResult weights(std::span<const ParamVector> local_params, const ParamVector& global, int round) override {
    last_locals.assign(local_params.begin(), local_params.end());
    return inner_->weights(local_params, global, round);
  }
  nlohmann::json to_json() const override { return inner_->to_json(); }
  void load_json(const nlohmann::json& j) override { inner_->load_json(j); }

  std::vector<ParamVector> last_locals;

 private:
  std::unique_ptr<AlphaPolicy> inner_;
};

Outcome aggregation_invariants() {
  bool ok = true;
  double worst_sum = 0.0, worst_hull = 0.0;
  int rounds = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto cfg = comparative_config(Algorithm::kFedMrl, seed);
    cfg.rounds = 15;
    const Federation probe = Federation::build(cfg);
    auto recorder = std::make_unique<RecordingAlphaPolicy>(std::make_unique<SomAlphaPolicy>(
        cfg.som, probe.model.param_count(), static_cast<double>(cfg.rounds), cfg.seed));
    RecordingAlphaPolicy* rec_view = recorder.get();
    Experiment e(cfg,
                 std::make_unique<QmixMuPolicy>(cfg.clients, cfg.data.classes, cfg.grid, cfg.effective_rl(), cfg.seed),
                 std::move(recorder));
    while (!e.finished()) {
      const RoundRecord& r = e.step();
      ++rounds;
      double sum = 0.0;
      for (double a : r.alpha) {
        ok &= a >= 0.0;
        sum += a;
      }
      worst_sum = std::max(worst_sum, std::abs(sum - static_cast<double>(cfg.clients)));
      const ParamVector& g = e.federation().global;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& w : rec_view->last_locals) lo = std::min(lo, w[i]), hi = std::max(hi, w[i]);
        worst_hull = std::max({worst_hull, lo - g[i], g[i] - hi});
      }
    }
  }
  ok &= worst_sum <= 1e-9;
  // Rounding in the weighted sum can land an ulp outside a degenerate hull.
  ok &= worst_hull <= 1e-12;

  double nova_gap = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.clients = 3;
    c.data.per_class = 100;
    c.shards_per_class = 20;
    Federation a = Federation::build(c);
    Federation b = a;
    for (int t = 0; t < 5; ++t) {
      run_round_fedavg(a);
      run_round_fednova(b);
      for (std::size_t i = 0; i < a.global.size(); ++i) nova_gap = std::max(nova_gap, std::abs(a.global[i] - b.global[i]));
      b.global = a.global;
      b.f_bar = a.f_bar;
    }
  }
  ok &= nova_gap <= 1e-12;
  return {ok, std::to_string(rounds) + " FedMRL rounds, |sum alpha - H| " + fmt("%.1e", worst_sum) + ", hull excess " +
                  fmt("%.1e", std::max(worst_hull, 0.0)) + ", FedNova-FedAvg " + fmt("%.1e", nova_gap)};
}

Outcome partitioner() {
  bool ok = true;
  const LabeledDataset d = synth_gaussian_mixture(3, 600, 4, 3.0, 99);
  auto key = [](const LabeledDataset& ds, std::size_t i) {
    std::vector<double> r{static_cast<double>(ds.label(i))};
    r.insert(r.end(), ds.features(i).begin(), ds.features(i).end());
    return r;
  };
  std::vector<std::vector<double>> expected;
  for (std::size_t i = 0; i < d.size(); ++i) expected.push_back(key(d, i));
  std::sort(expected.begin(), expected.end());

  int modal_failures = 0;
  std::size_t modal_checks = 0;
  for (double eta : {0.0, 0.5, 1.0}) {
    for (std::size_t H : {2u, 5u, 10u}) {
      std::vector<int> modal_hits(H, 0);
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto parts = partition(d, PartitionPlan{eta, 200, H, {}, seed});
        std::vector<std::vector<double>> got;
        for (const auto& p : parts) {
          for (std::size_t i = 0; i < p.size(); ++i) got.push_back(key(p, i));
        }
        std::sort(got.begin(), got.end());
        ok &= got == expected;
        if (eta == 1.0) {
          for (std::size_t h = 0; h < H; ++h) {
            const auto counts = parts[h].class_counts();
            const std::size_t pref = h % 3;
            bool modal = true;
            for (std::size_t m = 0; m < counts.size(); ++m) modal &= m == pref || counts[m] < counts[pref];
            if (modal) ++modal_hits[h];
          }
        }
      }
      if (eta == 1.0) {
        for (int hits : modal_hits) {
          ++modal_checks;
          if (hits < 4) ++modal_failures;
        }
      }
    }
  }
  ok &= modal_failures == 0;
  return {ok, "45 exact unions; preferred class modal in >=4/5 seeds for " +
                  std::to_string(modal_checks - static_cast<std::size_t>(modal_failures)) + "/" +
                  std::to_string(modal_checks) + " clients"};
}

Outcome comparative_run() {
  double acc_mrl = 0.0, acc_avg = 0.0;
  int lower_variance = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto mrl_cfg = comparative_config(Algorithm::kFedMrl, seed);
    mrl_cfg.lambda_fair = 1.0;
    const auto mrl = run_experiment(mrl_cfg);
    const auto avg = run_experiment(comparative_config(Algorithm::kFedAvg, seed));
    acc_mrl += mrl.final_eval.accuracy / 5.0;
    acc_avg += avg.final_eval.accuracy / 5.0;
    if (mrl.records.back().loss_variance < avg.records.back().loss_variance) ++lower_variance;
  }
  const bool ok = acc_mrl >= acc_avg - 0.01 && lower_variance >= 4;
  return {ok, "mean ACC FedMRL " + fmt("%.4f", acc_mrl) + " vs FedAvg " + fmt("%.4f", acc_avg) +
                  ", lower loss variance in " + std::to_string(lower_variance) + "/5 seeds"};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "fedmrl_acceptance_determinism";
  fs::remove_all(root);
  bool ok = true;
  for (Algorithm algo : {Algorithm::kFedMrl, Algorithm::kFedAvg, Algorithm::kFedProx, Algorithm::kFedNova}) {
    auto cfg = comparative_config(algo, 42);
    cfg.rounds = 10;
    std::string bytes[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path dir = root / (std::string(to_string(algo)) + "_" + std::to_string(k));
      Experiment e(cfg);
      run_to_directory(e, dir);
      std::ifstream in(dir / "metrics.csv", std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      bytes[k] = ss.str();
    }
    ok &= !bytes[0].empty() && bytes[0] == bytes[1];
  }
  fs::remove_all(root);
  return {ok, ok ? "metrics.csv byte-identical for all four algorithms" : "metrics.csv differs"};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // <= 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "gradient oracle", 10.0, gradient_oracle},
      {2, "fairness minimizer", 1.0, fairness_minimizer},
      {3, "mixer monotonicity", 30.0, qmix_monotonicity},
      {4, "cooperative matrix game", 120.0, matrix_game},
      {5, "reward anchor points", 0.0, reward_anchors},
      {6, "equivalence chain", 60.0, equivalence_chain},
      {7, "aggregation invariants", 0.0, aggregation_invariants},
      {8, "partitioner exactness", 0.0, partitioner},
      {9, "comparative run", 600.0, comparative_run},
      {10, "determinism", 0.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0.0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += " (over the " + fmt("%.0f", c.limit_s) + " s budget)";
    }
    if (!o.pass) ++failed;
    std::printf("%s  %2d %-24s %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
