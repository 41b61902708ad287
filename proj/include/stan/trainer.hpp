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
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "stan/data_core.hpp"
#include "stan/evalkit.hpp"
#include "stan/model.hpp"
#include "stan/stage_tracker.hpp"
#include "stan/tensor.hpp"

namespace stan {

// When gamma is redrawn from the posteriors.
enum class GammaSchedule { kPerEpoch, kPerBatch };

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 2048;
  int epochs = 10;
  int patience = 3;  // epochs without validation improvement before stopping
  std::uint64_t seed = 42;
  std::vector<double> eta;  // fixed task weights for the baselines; empty = all 1
  GammaMode gamma_mode = GammaMode::kSampled;
  GammaSchedule gamma_schedule = GammaSchedule::kPerEpoch;
  PseudoLabelOptions pseudo;
  int ndcg_k = 5;
  Exec exec = Exec::kParallel;
  std::string log_path;  // line-delimited JSON; empty disables

  // Throws ConfigError on non-positive hyperparameters or eta given to STAN.
  void validate(Architecture arch, std::size_t num_tasks) const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // total objective per sample
  std::vector<double> train_bce;  // per task, per sample
  std::vector<double> train_preference;  // per task, per usable sample
  std::vector<std::optional<double>> valid_auc;
  double mean_valid_auc = 0.0;
  bool improved = false;
};

struct TrainState {
  int epoch = 0;  // completed epochs
  Adam adam;
  PosteriorStore posteriors;
  std::vector<double> gamma;  // last drawn, user-major
  int best_epoch = -1;
  double best_valid_auc = -std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  std::vector<Matrix> best_params;
  std::vector<EpochLog> history;
};

// Runs the joint optimisation of one model. Shuffling and gamma draws are
// keyed by (seed, epoch), so a run resumed from a checkpoint follows the
// same trajectory as an uninterrupted one.
class Trainer {
 public:
  Trainer(Model& model, const Dataset& train, const Dataset& valid, TrainConfig cfg,
          std::vector<Stage> user_stage = {});

  const TrainConfig& config() const { return cfg_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const PseudoLabels& pseudo_labels() const { return pseudo_; }

  // One pass over the shuffled training set, then validation.
  EpochLog run_epoch();
  bool finished() const;
  // Epochs until `finished`, then loads the best snapshot into the model.
  void fit();
  void restore_best();

  // Checkpoint of the full training state (model, optimiser, snapshot).
  void save(const std::string& dir, const std::string& config_hash) const;
  // Loads a checkpoint written by `save` for the same model configuration.
  void load(const std::string& dir);

  // Refreshes the posteriors from the current preference predictions on
  // the training set (STAN only).
  void refresh_posteriors();

 private:
  LossSpec loss_spec(std::span<const double> gamma) const;
  void log_epoch(const EpochLog& log) const;

  Model& model_;
  const Dataset& train_;
  const Dataset& valid_;
  TrainConfig cfg_;
  std::vector<Stage> user_stage_;
  PseudoLabels pseudo_;
  TrainState state_;
};

}  // namespace stan
