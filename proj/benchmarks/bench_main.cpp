// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "scalabl/adapters.hpp"
#include "scalabl/datakit.hpp"
#include "scalabl/evalkit.hpp"
#include "scalabl/linalg.hpp"
#include "scalabl/netzoo.hpp"
#include "scalabl/ops.hpp"
#include "scalabl/rng.hpp"
#include "scalabl/trainer.hpp"

namespace {

using namespace scalabl;

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RngStream rng(0, 0);
  const Tensor a = standard_normal(rng, {n, n}), b = standard_normal(rng, {n, n});
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_PhiloxNormal(benchmark::State& state) {
  RngStream rng(0, 0);
  for (auto _ : state) benchmark::DoNotOptimize(standard_normal(rng, {1024}));
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_PhiloxNormal);

void BM_SvdInit(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  RngStream rng(0, 0);
  for (auto _ : state) benchmark::DoNotOptimize(scalabl_init(d, d, 8, 0.02, rng));
}
BENCHMARK(BM_SvdInit)->Arg(32)->Arg(256);

void BM_AdapterForward(benchmark::State& state) {
  const auto variant = static_cast<Variant>(state.range(0));
  RngStream rng(0, 0);
  MethodSpec spec;
  spec.variant = variant;
  spec.rank = 8;
  AdapterLayer layer("l", {64, 64}, spec, rng);
  const Tensor x = standard_normal(rng, {128, 64}), w0 = standard_normal(rng, {64, 64});
  for (auto _ : state) {
    Tape tape;
    const Var y = layer.forward(tape, tape.constant(x), tape.constant(w0), layer.sample_noise(rng, 128));
    benchmark::DoNotOptimize(y.value());
  }
  state.SetLabel(to_string(variant));
}
BENCHMARK(BM_AdapterForward)
    ->Arg(static_cast<int>(Variant::MLE))
    ->Arg(static_cast<int>(Variant::BLOB))
    ->Arg(static_cast<int>(Variant::SCALABL));

Splits bench_data() {
  SynthSpec s;
  s.train_size = 64;
  s.test_size = 256;
  return synth_classification(s);
}

void BM_ElboStep(benchmark::State& state) {
  const Splits data = bench_data();
  MethodSpec spec;
  spec.variant = static_cast<Variant>(state.range(0));
  Model model(HostConfig{}, spec, 0);
  RngStream rng(0, 0);
  const Batch batch = make_batch(data.train, 0, 32);
  for (auto _ : state) {
    for (Parameter* p : model.trainable_parameters()) p->zero_grad();
    benchmark::DoNotOptimize(elbo_step(model, batch, 0.1, rng));
  }
  state.SetLabel(to_string(spec.variant));
}
BENCHMARK(BM_ElboStep)
    ->Arg(static_cast<int>(Variant::MLE))
    ->Arg(static_cast<int>(Variant::BLOB))
    ->Arg(static_cast<int>(Variant::SCALABL));

void BM_PredictBma(benchmark::State& state) {
  const Splits data = bench_data();
  Model model(HostConfig{}, MethodSpec{}, 0);
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(predict_bma(model, data.test_id, n, 0));
}
BENCHMARK(BM_PredictBma)->Arg(1)->Arg(10);

void BM_Ece(benchmark::State& state) {
  RngStream rng(0, 0);
  const Tensor probs = softmax_rows(standard_normal(rng, {4096, 4}));
  std::vector<int> labels(4096);
  for (auto& l : labels) l = static_cast<int>(rng.below(4));
  for (auto _ : state) benchmark::DoNotOptimize(ece(probs, labels));
}
BENCHMARK(BM_Ece);

}  // namespace

BENCHMARK_MAIN();
