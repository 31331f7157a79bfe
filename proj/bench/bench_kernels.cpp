// Serial reference vs OpenMP kernels. Arg 0 selects serial, 1 parallel.

#include <benchmark/benchmark.h>

#include "gdsrec/eval.hpp"
#include "gdsrec/synthetic.hpp"
#include "gdsrec/train.hpp"

using namespace gdsrec;

namespace {

struct Fixture {
  DatasetBundle bundle;
  DecentralizedGraph graph;
  ModelParams params;

  Fixture() {
    SyntheticSpec spec;
    spec.users = 400;
    spec.items = 500;
    spec.density = 0.08;
    spec.trust_probability = 0.02;
    spec.seed = 3;
    const auto data = make_synthetic(spec);
    bundle = split_dataset(data.ratings, data.trust, 0.8, 1);
    graph = build_graph(bundle, 1);
    params = ModelParams::initialized({bundle.num_users, bundle.num_items, 64}, 1);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Exec exec_of(const benchmark::State& state) { return state.range(0) ? Exec::parallel : Exec::serial; }

void BM_BuildGraph(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(build_graph(f.bundle, 1, exec_of(state)));
}

void BM_Gradient(benchmark::State& state) {
  const auto& f = fixture();
  const auto sample = EpochSample::draw(f.graph, 10, 1, 0, Exec::parallel);
  const ModelContext ctx{f.params, f.graph, f.bundle, VariantFlags{}, sample};
  auto grads = ParamBuffer::zeros(f.params.layout());
  GradientEngine engine(f.params.layout(), 16);
  const std::span<const RatingRecord> batch(f.bundle.train.data(), 128);
  for (auto _ : state)
    benchmark::DoNotOptimize(engine.compute(ctx, batch, Task::rating, 4, grads, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * 128);
}

void BM_RmsProp(benchmark::State& state) {
  const auto& f = fixture();
  auto params = f.params;
  auto grads = ParamBuffer::zeros(params.layout());
  for (auto& g : grads.tables) g = 1e-3;
  for (auto& g : grads.dense) g = 1e-3;
  RmsProp opt(params.layout());
  for (auto _ : state) opt.step(params, grads, 1e-6, exec_of(state));
}

void BM_Evaluate(benchmark::State& state) {
  const auto& f = fixture();
  EvalOptions o;
  o.exec = exec_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(f.params, f.graph, f.bundle, {}, f.bundle.test, o));
}

}  // namespace

BENCHMARK(BM_BuildGraph)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RmsProp)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Evaluate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
