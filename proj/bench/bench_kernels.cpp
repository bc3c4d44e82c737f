#include <benchmark/benchmark.h>

#include <omp.h>

#include "rationale/kernels.hpp"
#include "rationale/model.hpp"
#include "rationale/synthetic.hpp"

using namespace rationale;

namespace {

struct Fixture {
  corpus::SyntheticCorpus corpus;
  model::Model model;
  std::vector<kernels::BatchItem> items;

  Fixture(int docs, int hidden) {
    corpus::SyntheticSpec spec;
    spec.documents = docs * 2;
    spec.annotated = 0;
    corpus = corpus::generate_synthetic(spec);
    model = model::make_model(corpus.embeddings.weights, spec.aspects, hidden, model::Mode::Short, 1);
    items = kernels::items_of(corpus.train);
    items.resize(static_cast<std::size_t>(docs));
  }
};

void run_gradients(benchmark::State& state, kernels::Execution exec) {
  Fixture f(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  kernels::Objective obj;
  kernels::Workspace ws;
  auto grads = model::Gradients::zeros_like(f.model);
  for (auto _ : state) {
    auto loss = kernels::batch_gradients(f.model, f.items, obj, model::GradientScope{}, exec, ws, grads);
    benchmark::DoNotOptimize(loss.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = exec == kernels::Execution::Serial ? 1 : omp_get_max_threads();
}

void run_loss(benchmark::State& state, kernels::Execution exec) {
  Fixture f(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  kernels::Objective obj;
  kernels::Workspace ws;
  for (auto _ : state) {
    auto loss = kernels::batch_loss(f.model, f.items, obj, exec, ws);
    benchmark::DoNotOptimize(loss.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GradientsSerial(benchmark::State& s) { run_gradients(s, kernels::Execution::Serial); }
void BM_GradientsParallel(benchmark::State& s) { run_gradients(s, kernels::Execution::Parallel); }
void BM_LossSerial(benchmark::State& s) { run_loss(s, kernels::Execution::Serial); }
void BM_LossParallel(benchmark::State& s) { run_loss(s, kernels::Execution::Parallel); }

}  // namespace

// Args: documents per batch, hidden size.
BENCHMARK(BM_GradientsSerial)->Args({64, 16})->Args({256, 16})->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientsParallel)->Args({64, 16})->Args({256, 16})->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossSerial)->Args({256, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossParallel)->Args({256, 16})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
