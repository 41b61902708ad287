// Copyright 2026 The stan-mtl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Batch loss kernels: per-sample reference vs chunked serial vs OpenMP.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <algorithm>
#include <memory>
#include <vector>

#include "stan/data_core.hpp"
#include "stan/model.hpp"
#include "stan/reference.hpp"
#include "stan/synthgen.hpp"

namespace stan {
namespace {

struct Fixture {
  Dataset ds;
  PseudoLabels pseudo;
  std::vector<double> gamma;
  std::vector<std::size_t> rows;
  std::unique_ptr<Model> model;
  LossSpec spec;

  Fixture(Architecture arch, std::size_t batch) {
    GeneratorConfig g = default_generator_config();
    g.num_users = 400;
    g.days = 20;
    ds = generate(g).dataset;
    pseudo = compute_pseudo_labels(ds);
    gamma.assign(ds.user_ids->size() * ds.num_tasks(), 0.5);
    rows = all_rows(ds);
    rows.resize(std::min(batch, rows.size()));
    ModelConfig m;
    m.arch = arch;
    m.num_tasks = ds.num_tasks();
    m.user_vocab = ds.user_vocab;
    m.item_vocab = ds.item_vocab;
    m.user_dim = 16;
    m.item_dim = 16;
    m.backbone.expert_hidden = {64};
    m.backbone.expert_dim = 32;
    model = std::make_unique<Model>(m, 1);
    if (is_stan(arch)) {
      spec.mode = WeightMode::kGamma;
      spec.gamma = gamma;
      spec.pseudo = &pseudo;
    } else {
      spec.eta.assign(ds.num_tasks(), 1.0);
    }
  }
  Batch batch() const { return Batch{&ds, rows, nullptr}; }
};

Fixture& fixture(Architecture arch) {
  static Fixture stan_fx(Architecture::kStan, 1024);
  static Fixture shared_fx(Architecture::kSharedBottom, 1024);
  return arch == Architecture::kStan ? stan_fx : shared_fx;
}

Architecture arch_of(const benchmark::State& state) {
  return state.range(0) ? Architecture::kStan : Architecture::kSharedBottom;
}

void BM_ReferenceLoss(benchmark::State& state) {
  Fixture& f = fixture(arch_of(state));
  for (auto _ : state) benchmark::DoNotOptimize(reference::batch_loss(*f.model, f.batch(), f.spec).total);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.rows.size()));
}

void BM_LossSerial(benchmark::State& state) {
  Fixture& f = fixture(arch_of(state));
  for (auto _ : state)
    benchmark::DoNotOptimize(loss_and_gradient(*f.model, f.batch(), f.spec, nullptr, Exec::kSerial).total);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.rows.size()));
}

void BM_LossGradSerial(benchmark::State& state) {
  Fixture& f = fixture(arch_of(state));
  Gradients g = f.model->params().zeros_like();
  Workspace ws;
  for (auto _ : state) {
    g.zero();
    benchmark::DoNotOptimize(loss_and_gradient(*f.model, f.batch(), f.spec, &g, Exec::kSerial, &ws).total);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.rows.size()));
}

void BM_LossGradParallel(benchmark::State& state) {
  Fixture& f = fixture(arch_of(state));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  Gradients g = f.model->params().zeros_like();
  Workspace ws;
  for (auto _ : state) {
    g.zero();
    benchmark::DoNotOptimize(loss_and_gradient(*f.model, f.batch(), f.spec, &g, Exec::kParallel, &ws).total);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.rows.size()));
}

BENCHMARK(BM_ReferenceLoss)->ArgName("stan")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossSerial)->ArgName("stan")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossGradSerial)->ArgName("stan")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossGradParallel)
    ->ArgNames({"stan", "threads"})
    ->ArgsProduct({{0, 1}, {1, 2, 4}})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

}  // namespace
}  // namespace stan

BENCHMARK_MAIN();
