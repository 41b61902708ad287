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

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "stan/layers.hpp"

namespace stan {

enum class Architecture {
  kSingleMlp,
  kSharedBottom,
  kMmoe,
  kPle,
  kPleStage,
  kStan,
  kStanNoBeta,
};

std::string_view architecture_name(Architecture a);
// Throws ConfigError for unknown names.
Architecture parse_architecture(std::string_view name);

inline bool is_stan(Architecture a) { return a == Architecture::kStan || a == Architecture::kStanNoBeta; }

struct BackboneConfig {
  int layers = 1;            // stacked CGC layers (ple / ple_stage / stan)
  int specific_experts = 1;  // per task
  int shared_experts = 1;
  std::vector<Index> expert_hidden{32};
  Index expert_dim = 16;
  std::vector<Index> tower_hidden{};
};

// Expert layout every architecture reduces to.
struct Topology {
  int layers = 1;
  int specific = 1;
  int shared = 1;
};

Topology topology_for(Architecture arch, const BackboneConfig& cfg);

// Stack of CGC layers followed by per-task towers:
//   single_mlp    1 layer, 1 specific expert per task, no shared experts
//   shared_bottom 1 layer, 1 shared expert
//   mmoe          1 layer, shared experts only, per-task gates
//   ple / stan    L layers with specific + shared experts
// A task that sees exactly one expert has no gate (weight fixed at 1).
class Backbone {
 public:
  struct Gate {
    bool present = false;
    ParamStore::Id weight = 0;  // in x visible
    std::vector<int> visible;   // expert indices within the layer
  };

  struct Layer {
    Index in = 0;
    std::vector<Mlp> experts;  // task-major specific experts, then shared
    std::vector<Gate> task_gates;
    Gate shared_gate;          // feeds the next layer's shared experts
    bool has_shared_output = false;
  };

  struct LayerCache {
    std::vector<Matrix> inputs;  // K task inputs, then the shared input
    std::vector<Mlp::Cache> expert_caches;
    std::vector<Matrix> expert_out;
    std::vector<Matrix> gate_weights;  // K task gates, then shared gate (if any)
  };

  struct Cache {
    std::vector<LayerCache> layers;
    std::vector<Matrix> tower_in;
    std::vector<Mlp::Cache> tower_caches;
  };

  Backbone() = default;
  Backbone(ParamStore& ps, const std::string& prefix, Index input_dim, std::size_t num_tasks,
           Topology topo, const BackboneConfig& cfg);

  void init(ParamStore& ps, Rng& rng) const;

  // x: batch x input_dim. Returns tower logits, batch x K.
  Matrix forward(const ParamStore& ps, const Matrix& x, Cache* cache) const;
  // Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const ParamStore& ps, const Cache& cache, const Matrix& dlogits,
                  Gradients& grad) const;

  // Gated representation g^k of the last layer for one task (batch x e).
  static Matrix gated_sum(const Matrix& weights, const std::vector<Matrix>& expert_out,
                          const std::vector<int>& visible);

  std::size_t num_tasks() const { return num_tasks_; }
  Index input_dim() const { return input_dim_; }
  const Topology& topology() const { return topo_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<Mlp>& towers() const { return towers_; }

 private:
  std::size_t num_tasks_ = 0;
  Index input_dim_ = 0;
  Topology topo_;
  std::vector<Layer> layers_;
  std::vector<Mlp> towers_;
};

}  // namespace stan
