// OpenMP item fan-out against the serial reference, on the synthetic backend.
#include <benchmark/benchmark.h>

#include <omp.h>

#include "pda/harness.hpp"
#include "pda/synthetic_backend.hpp"

namespace {

using namespace pda;

SyntheticBackend& backend() {
  static SyntheticBackend b([] {
    SyntheticVlmConfig c;
    c.candidate_answers = {"cat", "dog"};
    c.correct_label = "cat";
    c.seed = 11;
    return c;
  }());
  return b;
}

const std::vector<Query>& queries() {
  static const std::vector<Query> q = [] {
    std::vector<Query> out;
    for (int i = 0; i < 64; ++i) {
      out.push_back(Query{"b" + std::to_string(i), "img/" + std::to_string(i), "Which animal is shown?",
                          StructuredTask{CandidateSet({"cat", "dog"})}, {"cat"}, i % 2 == 0});
    }
    return out;
  }();
  return q;
}

VariantConfig config_for(int variant) {
  auto c = VariantConfig::defaults(static_cast<Variant>(variant));
  c.n_paraphrases = 5;
  return c;
}

void BM_evaluate_serial(benchmark::State& state) {
  auto config = config_for(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto r = evaluate_serial(queries(), config, AgentBackends::uniform(backend()));
    benchmark::DoNotOptimize(r.metrics.accuracy);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(queries().size()));
  state.SetLabel(std::string(to_string(config.variant)));
}

void BM_evaluate_parallel(benchmark::State& state) {
  auto config = config_for(static_cast<int>(state.range(0)));
  const int threads = static_cast<int>(state.range(1));
  for (auto _ : state) {
    auto r = evaluate(queries(), config, AgentBackends::uniform(backend()), EvalOptions{threads, ScoringMode::exact, {}});
    benchmark::DoNotOptimize(r.metrics.accuracy);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(queries().size()));
  state.SetLabel(std::string(to_string(config.variant)) + " x" + std::to_string(threads));
}

void thread_counts(benchmark::internal::Benchmark* b) {
  const int max_threads = std::max(2, omp_get_max_threads());
  for (int v : {static_cast<int>(Variant::full), static_cast<int>(Variant::pv)}) {
    for (int t = 1; t <= max_threads; t *= 2) b->Args({v, t});
  }
}

}  // namespace

BENCHMARK(BM_evaluate_serial)->Arg(static_cast<int>(Variant::full))->Arg(static_cast<int>(Variant::pv))->Unit(benchmark::kMillisecond);
BENCHMARK(BM_evaluate_parallel)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
