// SPDX-License-Identifier: Apache-2.0
// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <vector>

#include "echo/cells.hpp"
#include "echo/tasks.hpp"
#include "echo/tensor.hpp"
#include "echo/training.hpp"

namespace {

using echo::Exec;

void BM_Matmul(benchmark::State& state, Exec exec) {
  const auto n = static_cast<std::size_t>(state.range(0));
  echo::Rng rng(1);
  const echo::Matrix a = echo::rand_init(rng, n, n, echo::InitScheme::xavier_uniform);
  const echo::Matrix b = echo::rand_init(rng, n, n, echo::InitScheme::xavier_uniform);
  for (auto _ : state) benchmark::DoNotOptimize(echo::matmul(a, b, exec));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_BatchGradients(benchmark::State& state, Exec exec) {
  echo::DistractorSpec spec;
  spec.seed = 3;
  const echo::Dataset data = echo::gen_distractor(spec, 64);
  echo::ModelConfig cfg;
  cfg.hidden_size = static_cast<std::size_t>(state.range(0));
  cfg = echo::config_for_variant(cfg, echo::Variant::echo);
  const echo::Model model = echo::Model::create(cfg, 5);
  std::vector<const echo::Sample*> batch;
  for (const auto& s : data.samples) batch.push_back(&s);
  echo::set_default_exec(exec);
  for (auto _ : state) benchmark::DoNotOptimize(echo::batch_gradients(model, batch, true, 11, 16));
  echo::set_default_exec(Exec::parallel);
}

}  // namespace

BENCHMARK_CAPTURE(BM_Matmul, serial, Exec::serial)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_Matmul, parallel, Exec::parallel)->Arg(64)->Arg(256);
BENCHMARK_CAPTURE(BM_BatchGradients, serial, Exec::serial)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_BatchGradients, parallel, Exec::parallel)
    ->Arg(32)
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
