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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stan/backbone.hpp"
#include "stan/data_core.hpp"
#include "stan/preference_net.hpp"

namespace stan {

struct ModelConfig {
  Architecture arch = Architecture::kStan;
  std::size_t num_tasks = 3;
  std::vector<std::uint32_t> user_vocab;
  std::vector<std::uint32_t> item_vocab;
  Index user_dim = 8;  // d2
  Index item_dim = 8;  // d4
  BackboneConfig backbone;
  AttentionAxis attention_axis = AttentionAxis::kFeature;
  // When false the preference net owns its own user embedding tables.
  bool preference_shares_embeddings = false;
};

// Concatenates the user-slot rows then the item-slot rows, i.e. the
// row-major vectorisation of U then V. Throws LookupError on an index
// outside its table.
RowVector embed_input(std::span<const std::uint32_t> user_ids, std::span<const std::uint32_t> item_ids,
                      std::span<const Matrix> user_tables, std::span<const Matrix> item_tables);

// Embedding tables + backbone (+ preference net for the STAN variants).
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Backbone& backbone() const { return backbone_; }
  bool has_preference() const { return preference_.has_value(); }
  const PreferenceNet& preference() const { return *preference_; }
  std::size_t num_tasks() const { return cfg_.num_tasks; }
  Index input_dim() const { return backbone_.input_dim(); }
  bool uses_stage_feature() const { return cfg_.arch == Architecture::kPleStage; }

  // Backbone input row for one record; `stage` is only read by ple_stage.
  void embed(const InteractionRecord& r, Stage stage, Eigen::Ref<RowVector> out) const;
  // d1 x d2 user feature matrix seen by the preference net.
  Matrix user_matrix(const InteractionRecord& r) const;

  // Parameter ids of the embedding tables (for gradient scatter).
  const std::vector<ParamStore::Id>& user_tables() const { return user_tables_; }
  const std::vector<ParamStore::Id>& item_tables() const { return item_tables_; }
  const std::vector<ParamStore::Id>& preference_tables() const { return pref_tables_; }
  std::optional<ParamStore::Id> stage_table() const { return stage_table_; }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::vector<ParamStore::Id> user_tables_, item_tables_, pref_tables_;
  std::optional<ParamStore::Id> stage_table_;
  Backbone backbone_;
  std::optional<PreferenceNet> preference_;
};

enum class Exec { kSerial, kParallel };

// Records of one batch.
struct Batch {
  const Dataset* ds = nullptr;
  std::span<const std::size_t> rows;
  const std::vector<Stage>* user_stage = nullptr;  // indexed by user id; ple_stage only
};

// How each (sample, task) BCE term is weighted.
enum class WeightMode {
  kFixed,       // eta^k
  kGamma,       // gamma[user][task]
  kPreference,  // the sample's own y~^k, held constant
};

struct LossSpec {
  WeightMode mode = WeightMode::kFixed;
  std::vector<double> eta;
  std::span<const double> gamma;           // user-major [user][task]
  const PseudoLabels* pseudo = nullptr;    // aligned with Batch::ds; enables the preference loss
};

struct LossParts {
  std::vector<double> bce;           // per task, unweighted sum
  std::vector<double> weighted_bce;  // per task, sum of weight * bce
  std::vector<double> preference;    // per task, masked squared error sum
  std::size_t preference_used = 0;   // records contributing to the preference loss
  std::size_t samples = 0;
  double total = 0.0;
};

// Binary cross entropy with the prediction clamped to [1e-7, 1 - 1e-7].
double bce(double y_hat, int y);

// Sum over k of (gamma^k * L_t^k + L_s^k). Throws ShapeError on length mismatch.
double total_loss(std::span<const double> task_losses, std::span<const double> pref_losses,
                  std::span<const double> gamma);

// Reusable per-chunk buffers for the batched kernels.
struct Workspace {
  std::vector<Gradients> chunk_grads;
};

inline constexpr std::size_t kChunkRows = 128;

// Loss of one batch and, if `grad` is non-null, its gradient (accumulated
// into a zeroed `grad`). The batch is cut into fixed chunks of kChunkRows
// which are reduced in chunk order, so serial and parallel execution give
// bit-identical results.
LossParts loss_and_gradient(const Model& model, const Batch& batch, const LossSpec& spec,
                            Gradients* grad, Exec exec = Exec::kParallel, Workspace* ws = nullptr);

// Backbone predictions y^ (rows x K).
Matrix predict(const Model& model, const Batch& batch, Exec exec = Exec::kParallel);
// Preference predictions y~ (rows x K). Requires a STAN model.
Matrix predict_preference(const Model& model, const Batch& batch, Exec exec = Exec::kParallel);
// Flattened s^k of every task, concatenated (rows x K*d1*d2).
Matrix preference_embeddings(const Model& model, const Batch& batch);

// All record indices of a dataset, in order.
std::vector<std::size_t> all_rows(const Dataset& ds);

}  // namespace stan
