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

#include "stan/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "stan/error.hpp"

namespace stan {

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

std::size_t num_chunks(std::size_t rows) { return (rows + kChunkRows - 1) / kChunkRows; }

void add_parts(LossParts& into, const LossParts& from) {
  for (std::size_t t = 0; t < into.bce.size(); ++t) {
    into.bce[t] += from.bce[t];
    into.weighted_bce[t] += from.weighted_bce[t];
    into.preference[t] += from.preference[t];
  }
  into.preference_used += from.preference_used;
  into.samples += from.samples;
  into.total += from.total;
}

LossParts zero_parts(std::size_t k) {
  LossParts p;
  p.bce.assign(k, 0.0);
  p.weighted_bce.assign(k, 0.0);
  p.preference.assign(k, 0.0);
  return p;
}

Stage stage_of(const Model& model, const Batch& batch, const InteractionRecord& r) {
  if (!model.uses_stage_feature()) return Stage::kNew;
  if (!batch.user_stage) throw ConfigError("ple_stage needs per-user stage assignments");
  return (*batch.user_stage)[r.user];
}

Matrix embed_chunk(const Model& model, const Batch& batch, std::size_t begin, std::size_t end) {
  Matrix x(static_cast<Index>(end - begin), model.input_dim());
  for (std::size_t i = begin; i < end; ++i) {
    const auto& r = batch.ds->records[batch.rows[i]];
    model.embed(r, stage_of(model, batch, r), x.row(static_cast<Index>(i - begin)));
  }
  return x;
}

void scatter_input_grad(const Model& model, const Batch& batch, std::size_t begin, const Matrix& dx,
                        Gradients& grad) {
  const Index d2 = model.config().user_dim, d4 = model.config().item_dim;
  for (Index i = 0; i < dx.rows(); ++i) {
    const auto& r = batch.ds->records[batch.rows[begin + static_cast<std::size_t>(i)]];
    Index off = 0;
    for (std::size_t s = 0; s < r.user_features.size(); ++s, off += d2)
      grad.g[model.user_tables()[s]].row(r.user_features[s]) += dx.row(i).segment(off, d2);
    if (auto st = model.stage_table()) {
      grad.g[*st].row(static_cast<Index>(stage_of(model, batch, r))) += dx.row(i).segment(off, d2);
      off += d2;
    }
    for (std::size_t s = 0; s < r.item_features.size(); ++s, off += d4)
      grad.g[model.item_tables()[s]].row(r.item_features[s]) += dx.row(i).segment(off, d4);
  }
}

void run_chunk(const Model& model, const Batch& batch, std::size_t begin, std::size_t end,
               const LossSpec& spec, Gradients* grad, LossParts& parts) {
  const ParamStore& ps = model.params();
  const std::size_t k = model.num_tasks();
  const auto rows = static_cast<Index>(end - begin);
  const bool want_pref = model.has_preference() &&
                         (spec.pseudo != nullptr || spec.mode == WeightMode::kPreference);
  if (spec.mode == WeightMode::kPreference && !model.has_preference())
    throw ConfigError("preference weighting needs a STAN model");

  const Matrix x = embed_chunk(model, batch, begin, end);
  Backbone::Cache cache;
  const Matrix logits = model.backbone().forward(ps, x, grad ? &cache : nullptr);

  std::vector<PreferenceNet::Cache> pcache(want_pref ? end - begin : 0);
  std::vector<Matrix> u_mats(pcache.size());
  for (std::size_t i = 0; i < pcache.size(); ++i) {
    u_mats[i] = model.user_matrix(batch.ds->records[batch.rows[begin + i]]);
    model.preference().forward(ps, u_mats[i], pcache[i]);
  }

  Matrix dlogits = Matrix::Zero(rows, static_cast<Index>(k));
  std::vector<double> dy(k);
  for (Index i = 0; i < rows; ++i) {
    const std::size_t rec = batch.rows[begin + static_cast<std::size_t>(i)];
    const auto& r = batch.ds->records[rec];
    for (std::size_t t = 0; t < k; ++t) {
      const double y_hat = sigmoid(logits(i, static_cast<Index>(t)));
      double w = 1.0;
      switch (spec.mode) {
        case WeightMode::kFixed: w = spec.eta.empty() ? 1.0 : spec.eta[t]; break;
        case WeightMode::kGamma: w = spec.gamma[static_cast<std::size_t>(r.user) * k + t]; break;
        case WeightMode::kPreference: w = pcache[static_cast<std::size_t>(i)].y[t]; break;
      }
      const double l = bce(y_hat, r.labels[t]);
      parts.bce[t] += l;
      parts.weighted_bce[t] += w * l;
      if (y_hat > kClampLo && y_hat < kClampHi)
        dlogits(i, static_cast<Index>(t)) = w * (y_hat - static_cast<double>(r.labels[t]));
    }
  }
  parts.samples += static_cast<std::size_t>(rows);

  if (grad) {
    const Matrix dx = model.backbone().backward(ps, cache, dlogits, *grad);
    scatter_input_grad(model, batch, begin, dx, *grad);
  }

  if (spec.pseudo && model.has_preference()) {
    const Index d2 = model.config().user_dim;
    for (std::size_t i = 0; i < pcache.size(); ++i) {
      const std::size_t rec = batch.rows[begin + i];
      if (!spec.pseudo->usable(rec)) continue;
      ++parts.preference_used;
      for (std::size_t t = 0; t < k; ++t) {
        const double d = spec.pseudo->at(rec, t) - pcache[i].y[t];
        parts.preference[t] += d * d;
        dy[t] = -2.0 * d;
      }
      if (!grad) continue;
      const Matrix du = model.preference().backward(ps, pcache[i], dy, *grad);
      const auto& r = batch.ds->records[rec];
      for (std::size_t s = 0; s < r.user_features.size(); ++s)
        grad->g[model.preference_tables()[s]].row(r.user_features[s]) += du.row(static_cast<Index>(s)).head(d2);
    }
  }
  double total = 0.0;
  for (std::size_t t = 0; t < k; ++t) total += parts.weighted_bce[t] + parts.preference[t];
  parts.total = total;
}

// Exceptions must not escape an OpenMP region; the first one is rethrown.
template <typename Fn>
void for_chunks(std::size_t chunks, Exec exec, Fn&& fn) {
  const auto n = static_cast<std::int64_t>(chunks);
  if (exec == Exec::kSerial) {
    for (std::int64_t c = 0; c < n; ++c) fn(static_cast<std::size_t>(c));
    return;
  }
  std::exception_ptr error;
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < n; ++c) {
    try {
      fn(static_cast<std::size_t>(c));
    } catch (...) {
#pragma omp critical(stan_chunk_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

RowVector embed_input(std::span<const std::uint32_t> user_ids, std::span<const std::uint32_t> item_ids,
                      std::span<const Matrix> user_tables, std::span<const Matrix> item_tables) {
  if (user_ids.size() != user_tables.size() || item_ids.size() != item_tables.size())
    throw ShapeError("embed_input: slot count mismatch");
  Index width = 0;
  for (const auto& t : user_tables) width += t.cols();
  for (const auto& t : item_tables) width += t.cols();
  RowVector x(width);
  Index off = 0;
  auto put = [&](std::uint32_t id, const Matrix& table) {
    if (id >= table.rows())
      throw LookupError("feature index " + std::to_string(id) + " outside table of " +
                        std::to_string(table.rows()) + " rows");
    x.segment(off, table.cols()) = table.row(id);
    off += table.cols();
  };
  for (std::size_t s = 0; s < user_ids.size(); ++s) put(user_ids[s], user_tables[s]);
  for (std::size_t s = 0; s < item_ids.size(); ++s) put(item_ids[s], item_tables[s]);
  return x;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.num_tasks == 0) throw ConfigError("model needs at least one task");
  if (cfg.user_dim <= 0 || cfg.item_dim <= 0) throw ConfigError("embedding dims must be positive");
  for (std::size_t s = 0; s < cfg.user_vocab.size(); ++s)
    user_tables_.push_back(params_.add("emb.user" + std::to_string(s), cfg.user_vocab[s], cfg.user_dim));
  if (cfg.arch == Architecture::kPleStage) stage_table_ = params_.add("emb.stage", kNumStages, cfg.user_dim);
  for (std::size_t s = 0; s < cfg.item_vocab.size(); ++s)
    item_tables_.push_back(params_.add("emb.item" + std::to_string(s), cfg.item_vocab[s], cfg.item_dim));

  const Index user_slots = static_cast<Index>(cfg.user_vocab.size()) + (stage_table_ ? 1 : 0);
  const Index input_dim = user_slots * cfg.user_dim + static_cast<Index>(cfg.item_vocab.size()) * cfg.item_dim;
  backbone_ = Backbone(params_, "backbone", input_dim, cfg.num_tasks, topology_for(cfg.arch, cfg.backbone),
                       cfg.backbone);

  if (is_stan(cfg.arch)) {
    if (cfg.user_vocab.empty()) throw ConfigError("the preference net needs user features");
    if (cfg.preference_shares_embeddings) {
      pref_tables_ = user_tables_;
    } else {
      for (std::size_t s = 0; s < cfg.user_vocab.size(); ++s)
        pref_tables_.push_back(params_.add("pref.emb.user" + std::to_string(s), cfg.user_vocab[s], cfg.user_dim));
    }
    preference_.emplace(params_, "pref", static_cast<Index>(cfg.user_vocab.size()), cfg.user_dim,
                        cfg.num_tasks, cfg.attention_axis);
  }

  Rng rng = keyed_stream(seed, {tag(StreamTag::kInit)});
  auto init_table = [&](ParamStore::Id id) {
    params_.init_uniform(id, 1.0 / std::sqrt(static_cast<double>(params_.value(id).cols())), rng);
  };
  for (auto id : user_tables_) init_table(id);
  if (stage_table_) init_table(*stage_table_);
  for (auto id : item_tables_) init_table(id);
  backbone_.init(params_, rng);
  if (preference_) {
    if (!cfg.preference_shares_embeddings)
      for (auto id : pref_tables_) init_table(id);
    preference_->init(params_, rng);
  }
}

void Model::embed(const InteractionRecord& r, Stage stage, Eigen::Ref<RowVector> out) const {
  if (r.user_features.size() != user_tables_.size() || r.item_features.size() != item_tables_.size())
    throw ShapeError("record feature slots do not match the model");
  Index off = 0;
  auto put = [&](std::uint32_t id, ParamStore::Id table) {
    const Matrix& t = params_.value(table);
    if (id >= t.rows()) throw LookupError("feature index " + std::to_string(id) + " out of vocab");
    out.segment(off, t.cols()) = t.row(id);
    off += t.cols();
  };
  for (std::size_t s = 0; s < user_tables_.size(); ++s) put(r.user_features[s], user_tables_[s]);
  if (stage_table_) put(static_cast<std::uint32_t>(stage), *stage_table_);
  for (std::size_t s = 0; s < item_tables_.size(); ++s) put(r.item_features[s], item_tables_[s]);
}

Matrix Model::user_matrix(const InteractionRecord& r) const {
  Matrix u(static_cast<Index>(pref_tables_.size()), cfg_.user_dim);
  for (std::size_t s = 0; s < pref_tables_.size(); ++s) {
    const Matrix& t = params_.value(pref_tables_[s]);
    if (r.user_features[s] >= t.rows()) throw LookupError("user feature index out of vocab");
    u.row(static_cast<Index>(s)) = t.row(r.user_features[s]);
  }
  return u;
}

double bce(double y_hat, int y) {
  const double p = std::clamp(y_hat, kClampLo, kClampHi);
  return y ? -std::log(p) : -std::log(1.0 - p);
}

double total_loss(std::span<const double> task_losses, std::span<const double> pref_losses,
                  std::span<const double> gamma) {
  if (task_losses.size() != pref_losses.size() || task_losses.size() != gamma.size())
    throw ShapeError("total_loss: per-task lengths differ");
  double total = 0.0;
  for (std::size_t k = 0; k < gamma.size(); ++k) total += gamma[k] * task_losses[k] + pref_losses[k];
  return total;
}

LossParts loss_and_gradient(const Model& model, const Batch& batch, const LossSpec& spec,
                            Gradients* grad, Exec exec, Workspace* ws) {
  const std::size_t k = model.num_tasks();
  if (spec.mode == WeightMode::kFixed && !spec.eta.empty() && spec.eta.size() != k)
    throw ShapeError("eta needs one weight per task");
  const std::size_t chunks = num_chunks(batch.rows.size());
  std::vector<LossParts> parts(chunks, zero_parts(k));

  Workspace local;
  Workspace& w = ws ? *ws : local;
  if (grad) {
    if (w.chunk_grads.size() < chunks) w.chunk_grads.resize(chunks, model.params().zeros_like());
    for (std::size_t c = 0; c < chunks; ++c) w.chunk_grads[c].zero();
  }
  for_chunks(chunks, exec, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t end = std::min(begin + kChunkRows, batch.rows.size());
    run_chunk(model, batch, begin, end, spec, grad ? &w.chunk_grads[c] : nullptr, parts[c]);
  });

  LossParts out = zero_parts(k);
  for (std::size_t c = 0; c < chunks; ++c) {
    add_parts(out, parts[c]);
    if (grad) grad->add(w.chunk_grads[c]);
  }
  return out;
}

Matrix predict(const Model& model, const Batch& batch, Exec exec) {
  const std::size_t k = model.num_tasks();
  Matrix out(static_cast<Index>(batch.rows.size()), static_cast<Index>(k));
  for_chunks(num_chunks(batch.rows.size()), exec, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t end = std::min(begin + kChunkRows, batch.rows.size());
    const Matrix logits = model.backbone().forward(model.params(), embed_chunk(model, batch, begin, end), nullptr);
    for (Index i = 0; i < logits.rows(); ++i)
      for (Index t = 0; t < logits.cols(); ++t)
        out(static_cast<Index>(begin) + i, t) = sigmoid(logits(i, t));
  });
  return out;
}

Matrix predict_preference(const Model& model, const Batch& batch, Exec exec) {
  if (!model.has_preference()) throw ConfigError("model has no preference net");
  const std::size_t k = model.num_tasks();
  Matrix out(static_cast<Index>(batch.rows.size()), static_cast<Index>(k));
  for_chunks(num_chunks(batch.rows.size()), exec, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows;
    const std::size_t end = std::min(begin + kChunkRows, batch.rows.size());
    PreferenceNet::Cache cache;
    for (std::size_t i = begin; i < end; ++i) {
      model.preference().forward(model.params(), model.user_matrix(batch.ds->records[batch.rows[i]]), cache);
      for (std::size_t t = 0; t < k; ++t) out(static_cast<Index>(i), static_cast<Index>(t)) = cache.y[t];
    }
  });
  return out;
}

Matrix preference_embeddings(const Model& model, const Batch& batch) {
  if (!model.has_preference()) throw ConfigError("model has no preference net");
  const auto& pn = model.preference();
  const Index per_task = pn.d1() * pn.d2();
  Matrix out(static_cast<Index>(batch.rows.size()), per_task * static_cast<Index>(model.num_tasks()));
  PreferenceNet::Cache cache;
  for (std::size_t i = 0; i < batch.rows.size(); ++i) {
    pn.forward(model.params(), model.user_matrix(batch.ds->records[batch.rows[i]]), cache);
    for (std::size_t t = 0; t < model.num_tasks(); ++t)
      out.row(static_cast<Index>(i)).segment(static_cast<Index>(t) * per_task, per_task) =
          Eigen::Map<const RowVector>(cache.s[t].data(), per_task);
  }
  return out;
}

std::vector<std::size_t> all_rows(const Dataset& ds) {
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace stan
