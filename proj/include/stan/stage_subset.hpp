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
#include <vector>

#include "stan/data_core.hpp"
#include "stan/evalkit.hpp"
#include "stan/model.hpp"
#include "stan/trainer.hpp"

namespace stan {

struct StageSubsetEntry {
  Stage stage = Stage::kNew;
  std::size_t train_records = 0;
  std::size_t test_records = 0;
  MetricReport stage_model;  // model trained on this stage only, in-stage test records
  MetricReport full_model;   // full-data model on the same records
};

struct StageSubsetResult {
  MetricReport full;  // full-data model on the whole test split
  std::vector<StageSubsetEntry> stages;
  std::vector<std::string> warnings;
};

// Trains one model per rule stage on that stage's users and compares it,
// on the stage's test records, with a model trained on all users. Stages
// with an empty train, validation or test subset are skipped with a warning.
// `user_stage` is indexed by user id.
StageSubsetResult stage_subset_eval(const Splits& splits, const std::vector<Stage>& user_stage,
                                    const ModelConfig& model_cfg, const TrainConfig& train_cfg);

std::string stage_subset_csv(const StageSubsetResult& r);
std::string format_stage_subset(const StageSubsetResult& r);

}  // namespace stan
