#include <benchmark/benchmark.h>

#include <vector>

#include "fedmrl/client.hpp"
#include "fedmrl/data.hpp"
#include "fedmrl/orchestrator.hpp"
#include "fedmrl/qmix.hpp"
#include "fedmrl/som.hpp"

using namespace fedmrl;

namespace {

ExperimentConfig bench_config(Algorithm algo) {
  ExperimentConfig c;
  c.algo = algo;
  c.rounds = 1000;  // never reached; rounds are stepped by hand
  return c;
}

void BM_LossAndGrad(benchmark::State& state) {
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  DenseNet net = DenseNet::initialized({4, 16, 3}, Activation::kRelu, rng);
  const auto data = synth_gaussian_mixture(3, batch_size, 4, 3.0, 2);
  const Batch b = data.as_batch();
  ObjectiveSpec spec;
  spec.mu = 0.1;
  spec.anchor = net.params();
  spec.lambda_fair = 1.0;
  spec.f_bar = 0.8;
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(net, b, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b.size()));
}
BENCHMARK(BM_LossAndGrad)->Arg(11)->Arg(32)->Arg(128);

void BM_LocalEpoch(benchmark::State& state) {
  const ModelSpec model{{4, 16, 3}, Activation::kRelu};
  Rng rng(3);
  const ParamVector global = DenseNet::initialized(model.layer_sizes, model.activation, rng).params();
  const auto data = synth_gaussian_mixture(3, 100, 4, 3.0, 4);
  ClientConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(local_train(model, global, data, cfg, 0.1, 0.8, 1.0, 5));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.size()));
}
BENCHMARK(BM_LocalEpoch);

void BM_Partition(benchmark::State& state) {
  const auto data = synth_gaussian_mixture(3, 600, 4, 3.0, 6);
  const PartitionPlan plan{1.0, 200, static_cast<std::size_t>(state.range(0)), {}, 7};
  for (auto _ : state) benchmark::DoNotOptimize(partition(data, plan));
}
BENCHMARK(BM_Partition)->Arg(5)->Arg(20);

void BM_MixerForwardBackward(benchmark::State& state) {
  const auto H = static_cast<std::size_t>(state.range(0));
  Rng rng(8);
  const Mixer m = Mixer::initialized(H, ClientState::kWidth * H, 32, rng);
  std::vector<double> s(ClientState::kWidth * H), q(H);
  for (double& v : s) v = rng.normal();
  for (double& v : q) v = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.forward(s, q));
    benchmark::DoNotOptimize(m.backward(s, q, 1.0));
  }
}
BENCHMARK(BM_MixerForwardBackward)->Arg(5)->Arg(20);

void BM_TdUpdate(benchmark::State& state) {
  const std::size_t H = 5;
  RlConfig cfg;
  Rng rng(9);
  QmixNets nets = QmixNets::create(H, 10, cfg, rng);
  std::vector<Transition> batch;
  for (std::size_t k = 0; k < cfg.batch_size; ++k) {
    GlobalState s, s2;
    std::vector<std::size_t> actions;
    for (std::size_t h = 0; h < H; ++h) {
      s.per_client.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()});
      s2.per_client.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()});
      actions.push_back(rng.uniform_index(10));
    }
    batch.push_back({s, actions, rng.normal(), s2, false});
  }
  for (auto _ : state) benchmark::DoNotOptimize(td_update(nets, batch, cfg));
}
BENCHMARK(BM_TdUpdate);

void BM_SomAlphas(benchmark::State& state) {
  const auto P = static_cast<std::size_t>(state.range(0));
  Rng rng(10);
  SomGrid som = SomGrid::random(5, 5, 32, rng);
  const Projector proj(32, P, 11);
  ParamVector global(P);
  for (double& v : global) v = rng.normal();
  std::vector<ParamVector> locals(5, global);
  for (auto& w : locals) {
    for (double& v : w) v += rng.normal(0.0, 0.1);
  }
  int round = 0;
  for (auto _ : state) benchmark::DoNotOptimize(compute_alphas(som, locals, global, proj, round++ % 30));
}
BENCHMARK(BM_SomAlphas)->Arg(131)->Arg(10000);

void BM_Round(benchmark::State& state) {
  const auto algo = static_cast<Algorithm>(state.range(0));
  Experiment e(bench_config(algo));
  for (auto _ : state) benchmark::DoNotOptimize(e.step());
  state.SetLabel(std::string(to_string(algo)));
}
BENCHMARK(BM_Round)
    ->Arg(static_cast<int>(Algorithm::kFedAvg))
    ->Arg(static_cast<int>(Algorithm::kFedNova))
    ->Arg(static_cast<int>(Algorithm::kFedMrl))
    ->Iterations(200);

}  // namespace

BENCHMARK_MAIN();
