#include <benchmark/benchmark.h>

#include <memory>

#include "doda/harness.hpp"

using namespace doda;

namespace {

net::NetworkParams bench_net() {
  Rng rng(1);
  return net::init_params({9, 32, 32}, rng);
}

StateVector bench_state() {
  return StateVector(std::vector<double>{0.3, 0.5, 0.2, 0.4, 0.6, 0.1, 1.0, 1.0, 1.0});
}

void BM_Forward(benchmark::State& state) {
  const auto p = bench_net();
  const auto s = bench_state();
  for (auto _ : state) benchmark::DoNotOptimize(net::forward(p, s));
}
BENCHMARK(BM_Forward);

void BM_ForwardMasked(benchmark::State& state) {
  const auto p = bench_net();
  const auto s = bench_state();
  Rng rng(2);
  const auto mask = net::sample_mask(0.2, p.sizes(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(net::forward(p, s, mask));
}
BENCHMARK(BM_ForwardMasked);

void BM_Select(benchmark::State& state) {
  const auto p = bench_net();
  const auto s = bench_state();
  safety::DodaConfig cfg;
  cfg.mode = safety::all_modes()[static_cast<std::size_t>(state.range(0))];
  safety::SelectionStreams streams(3);
  for (auto _ : state) benchmark::DoNotOptimize(safety::doda_select(p, s, cfg, streams));
  state.SetLabel(std::string(safety::to_string(cfg.mode)));
}
BENCHMARK(BM_Select)->DenseRange(0, 5);

void BM_Backward(benchmark::State& state) {
  const auto p = bench_net();
  const auto s = bench_state();
  std::vector<net::NetInput> batch(64, net::NetInput{&s, nullptr});
  auto head = [](std::size_t, const net::ForwardOutput& out) {
    net::OutputGradient g;
    g.loss = out.value;
    g.d_value = 1.0;
    return g;
  };
  for (auto _ : state) benchmark::DoNotOptimize(net::backward(p, batch, head));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Backward);

void BM_Gae(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> r(n, -0.01), v(n, -0.2);
  for (auto _ : state) benchmark::DoNotOptimize(ppo::compute_gae(r, v, 0.0, 0.99, 0.95));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Gae)->Arg(64)->Arg(4096);

void BM_ConflictDetection(benchmark::State& state) {
  Rng rng(4);
  std::vector<sim::Traffic> traffic;
  for (int i = 0; i < state.range(0); ++i) {
    traffic.push_back({i, {rng.uniform(0, 60), rng.uniform(0, 60)}});
  }
  for (auto _ : state) benchmark::DoNotOptimize(sim::detect_conflicts(traffic, 3.0, 0.0));
}
BENCHMARK(BM_ConflictDetection)->Arg(10)->Arg(40)->Arg(200);

void BM_Episode(benchmark::State& state) {
  const auto p = bench_net();
  const auto airspace = std::make_shared<const sim::Airspace>(
      sim::build_case(sim::CaseId::D, sim::default_geometry()));
  safety::DodaConfig cfg;
  cfg.mode = safety::all_modes()[static_cast<std::size_t>(state.range(0))];
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        harness::evaluate_episode(airspace, sim::SimConfig{}, p, cfg, seed, seed + 1));
    ++seed;
  }
  state.SetLabel(std::string(safety::to_string(cfg.mode)));
}
BENCHMARK(BM_Episode)->Arg(0)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
