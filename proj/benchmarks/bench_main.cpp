#include <benchmark/benchmark.h>

#include "mmcoord/gradients.hpp"
#include "mmcoord/random.hpp"
#include "mmcoord/retrieval.hpp"

using namespace mmcoord;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

RandomInstance instance(std::int64_t batch, std::int64_t dim) {
  RandomInstanceSpec spec;
  spec.batch = static_cast<std::size_t>(batch);
  spec.dim = static_cast<std::size_t>(dim);
  spec.hidden = spec.dim;
  spec.min_input_dim = 32;
  spec.max_input_dim = 64;
  spec.missing_rate = 0.1;
  return random_instance(spec);
}

void BM_Encode(benchmark::State& state) {
  const auto inst = instance(state.range(0), state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode(inst.model.encoders[0], inst.batch.inputs[0], inst.batch.presence[0]));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encode)->Args({128, 256})->Args({512, 256});

void BM_LossForward(benchmark::State& state) {
  const auto inst = instance(state.range(0), 128);
  LossConfig config;
  config.family = state.range(1) ? LossFamily::pcmr : LossFamily::pcmc;
  for (auto _ : state) benchmark::DoNotOptimize(total_loss(inst.batch, inst.model, config).value);
}
BENCHMARK(BM_LossForward)->Args({128, 0})->Args({128, 1});

void BM_LossAndGrad(benchmark::State& state) {
  const auto inst = instance(state.range(0), 128);
  LossConfig config;
  config.family = state.range(1) ? LossFamily::pcmr : LossFamily::pcmc;
  for (auto _ : state) benchmark::DoNotOptimize(grad_total_loss(inst.model, inst.batch, config).loss.value);
}
BENCHMARK(BM_LossAndGrad)->Args({128, 0})->Args({128, 1});

void BM_RecallAtK(benchmark::State& state) {
  const auto n = state.range(0);
  const Matrix db = gaussian(n, 128, 1);
  const Matrix queries = gaussian(n, 128, 2);
  PositiveSet pos;
  for (std::int64_t i = 0; i < n; ++i) pos.sets.push_back({static_cast<std::size_t>(i)});
  for (auto _ : state) benchmark::DoNotOptimize(recall_at_k(queries, db, pos, 5));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_RecallAtK)->Arg(1000)->Arg(4000);

}  // namespace

BENCHMARK_MAIN();
