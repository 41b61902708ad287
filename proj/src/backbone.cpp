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

#include "stan/backbone.hpp"

#include <cmath>

#include "stan/error.hpp"

namespace stan {

namespace {

constexpr std::string_view kArchNames[] = {"single_mlp", "shared_bottom", "mmoe", "ple",
                                           "ple_stage",  "stan",          "stan_no_beta"};

Backbone::Gate make_gate(ParamStore& ps, const std::string& name, Index in, std::vector<int> visible) {
  Backbone::Gate g;
  g.visible = std::move(visible);
  if (g.visible.size() > 1) {
    g.present = true;
    g.weight = ps.add(name, in, static_cast<Index>(g.visible.size()));
  }
  return g;
}

Matrix gate_weights(const ParamStore& ps, const Backbone::Gate& gate, const Matrix& in) {
  if (!gate.present) return Matrix::Ones(in.rows(), 1);
  Matrix w = in * ps.value(gate.weight);
  softmax_rows(w);
  return w;
}

}  // namespace

std::string_view architecture_name(Architecture a) { return kArchNames[static_cast<int>(a)]; }

Architecture parse_architecture(std::string_view name) {
  for (int i = 0; i < static_cast<int>(std::size(kArchNames)); ++i)
    if (kArchNames[i] == name) return static_cast<Architecture>(i);
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

Topology topology_for(Architecture arch, const BackboneConfig& cfg) {
  switch (arch) {
    case Architecture::kSingleMlp: return {1, 1, 0};
    case Architecture::kSharedBottom: return {1, 0, 1};
    case Architecture::kMmoe: return {1, 0, std::max(cfg.shared_experts, 1)};
    case Architecture::kPle:
    case Architecture::kPleStage:
    case Architecture::kStan:
    case Architecture::kStanNoBeta: return {cfg.layers, cfg.specific_experts, cfg.shared_experts};
  }
  throw ConfigError("unknown architecture");
}

Backbone::Backbone(ParamStore& ps, const std::string& prefix, Index input_dim,
                   std::size_t num_tasks, Topology topo, const BackboneConfig& cfg)
    : num_tasks_(num_tasks), input_dim_(input_dim), topo_(topo) {
  if (topo.layers < 1 || topo.specific < 0 || topo.shared < 0 || topo.specific + topo.shared < 1)
    throw ConfigError("backbone needs >= 1 layer and >= 1 expert per task");
  if (cfg.expert_dim <= 0 || cfg.expert_dim > 1024) throw ConfigError("expert_dim must be in [1, 1024]");
  const int k = static_cast<int>(num_tasks);
  Index in = input_dim;
  for (int l = 0; l < topo.layers; ++l) {
    Layer layer;
    layer.in = in;
    const std::string lp = prefix + ".cgc" + std::to_string(l);
    for (int t = 0; t < k; ++t)
      for (int e = 0; e < topo.specific; ++e)
        layer.experts.emplace_back(ps, lp + ".task" + std::to_string(t) + ".expert" + std::to_string(e),
                                   in, cfg.expert_hidden, cfg.expert_dim, true);
    for (int e = 0; e < topo.shared; ++e)
      layer.experts.emplace_back(ps, lp + ".shared.expert" + std::to_string(e), in, cfg.expert_hidden,
                                 cfg.expert_dim, true);
    const int shared_base = k * topo.specific;
    for (int t = 0; t < k; ++t) {
      std::vector<int> vis;
      for (int e = 0; e < topo.specific; ++e) vis.push_back(t * topo.specific + e);
      for (int e = 0; e < topo.shared; ++e) vis.push_back(shared_base + e);
      layer.task_gates.push_back(make_gate(ps, lp + ".task" + std::to_string(t) + ".gate", in, vis));
    }
    layer.has_shared_output = l + 1 < topo.layers && topo.shared > 0;
    if (layer.has_shared_output) {
      std::vector<int> vis(layer.experts.size());
      for (std::size_t e = 0; e < vis.size(); ++e) vis[e] = static_cast<int>(e);
      layer.shared_gate = make_gate(ps, lp + ".shared.gate", in, vis);
    }
    layers_.push_back(std::move(layer));
    in = cfg.expert_dim;
  }
  for (int t = 0; t < k; ++t)
    towers_.emplace_back(ps, prefix + ".tower" + std::to_string(t), cfg.expert_dim, cfg.tower_hidden, 1,
                         false);
}

void Backbone::init(ParamStore& ps, Rng& rng) const {
  for (const auto& layer : layers_) {
    for (const auto& e : layer.experts) e.init(ps, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (const auto& g : layer.task_gates)
      if (g.present) ps.init_uniform(g.weight, bound, rng);
    if (layer.shared_gate.present) ps.init_uniform(layer.shared_gate.weight, bound, rng);
  }
  for (const auto& t : towers_) t.init(ps, rng);
}

Matrix Backbone::gated_sum(const Matrix& weights, const std::vector<Matrix>& expert_out,
                           const std::vector<int>& visible) {
  Matrix out = Matrix::Zero(weights.rows(), expert_out[visible[0]].cols());
  for (std::size_t j = 0; j < visible.size(); ++j)
    out += weights.col(static_cast<Index>(j)).asDiagonal() * expert_out[visible[j]];
  return out;
}

Matrix Backbone::forward(const ParamStore& ps, const Matrix& x, Cache* cache) const {
  if (x.cols() != input_dim_) throw ShapeError("backbone input width mismatch");
  const std::size_t k = num_tasks_;
  const int shared_base = static_cast<int>(k) * topo_.specific;
  std::vector<Matrix> inputs(k + 1, x);
  if (cache) cache->layers.assign(layers_.size(), {});

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    LayerCache local;
    LayerCache& lc = cache ? cache->layers[l] : local;
    lc.expert_caches.assign(layer.experts.size(), {});
    lc.expert_out.clear();
    for (std::size_t e = 0; e < layer.experts.size(); ++e) {
      const int owner = static_cast<int>(e) < shared_base ? static_cast<int>(e) / topo_.specific
                                                          : static_cast<int>(k);
      lc.expert_out.push_back(layer.experts[e].forward(ps, inputs[owner], cache ? &lc.expert_caches[e] : nullptr));
    }
    std::vector<Matrix> next(k + 1);
    lc.gate_weights.clear();
    for (std::size_t t = 0; t < k; ++t) {
      Matrix w = gate_weights(ps, layer.task_gates[t], inputs[t]);
      next[t] = gated_sum(w, lc.expert_out, layer.task_gates[t].visible);
      lc.gate_weights.push_back(std::move(w));
    }
    if (layer.has_shared_output) {
      Matrix w = gate_weights(ps, layer.shared_gate, inputs[k]);
      next[k] = gated_sum(w, lc.expert_out, layer.shared_gate.visible);
      lc.gate_weights.push_back(std::move(w));
    }
    if (cache) lc.inputs = std::move(inputs);
    inputs = std::move(next);
  }

  Matrix logits(x.rows(), static_cast<Index>(k));
  if (cache) {
    cache->tower_in.assign(inputs.begin(), inputs.begin() + static_cast<std::ptrdiff_t>(k));
    cache->tower_caches.assign(k, {});
  }
  for (std::size_t t = 0; t < k; ++t)
    logits.col(static_cast<Index>(t)) =
        towers_[t].forward(ps, inputs[t], cache ? &cache->tower_caches[t] : nullptr).col(0);
  return logits;
}

Matrix Backbone::backward(const ParamStore& ps, const Cache& cache, const Matrix& dlogits,
                          Gradients& grad) const {
  const std::size_t k = num_tasks_;
  const int shared_base = static_cast<int>(k) * topo_.specific;
  std::vector<Matrix> d_out(k + 1);
  for (std::size_t t = 0; t < k; ++t)
    d_out[t] = towers_[t].backward(ps, cache.tower_caches[t], dlogits.col(static_cast<Index>(t)), grad);

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const LayerCache& lc = cache.layers[l];
    const Index batch = lc.inputs[0].rows();
    std::vector<Matrix> d_expert(layer.experts.size(), Matrix::Zero(batch, lc.expert_out[0].cols()));
    std::vector<Matrix> d_in(k + 1, Matrix::Zero(batch, layer.in));

    auto gate_backward = [&](const Gate& gate, const Matrix& w, const Matrix& dg, std::size_t input) {
      Matrix dw(batch, static_cast<Index>(gate.visible.size()));
      for (std::size_t j = 0; j < gate.visible.size(); ++j) {
        const Matrix& eo = lc.expert_out[gate.visible[j]];
        d_expert[gate.visible[j]] += w.col(static_cast<Index>(j)).asDiagonal() * dg;
        dw.col(static_cast<Index>(j)) = eo.cwiseProduct(dg).rowwise().sum();
      }
      if (!gate.present) return;
      const Matrix dz = softmax_rows_backward(w, dw);
      grad.g[gate.weight].noalias() += lc.inputs[input].transpose() * dz;
      d_in[input].noalias() += dz * ps.value(gate.weight).transpose();
    };

    for (std::size_t t = 0; t < k; ++t)
      if (d_out[t].size() > 0) gate_backward(layer.task_gates[t], lc.gate_weights[t], d_out[t], t);
    if (layer.has_shared_output && d_out[k].size() > 0)
      gate_backward(layer.shared_gate, lc.gate_weights[k], d_out[k], k);

    for (std::size_t e = 0; e < layer.experts.size(); ++e) {
      const std::size_t owner = static_cast<int>(e) < shared_base
                                    ? static_cast<std::size_t>(static_cast<int>(e) / topo_.specific)
                                    : k;
      d_in[owner] += layer.experts[e].backward(ps, lc.expert_caches[e], d_expert[e], grad);
    }
    d_out = std::move(d_in);
  }
  Matrix dx = d_out[0];
  for (std::size_t i = 1; i <= k; ++i) dx += d_out[i];
  return dx;
}

}  // namespace stan
