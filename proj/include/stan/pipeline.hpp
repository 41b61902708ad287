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

#include <ostream>
#include <string>
#include <vector>

#include "stan/config.hpp"
#include "stan/data_core.hpp"
#include "stan/evalkit.hpp"

namespace stan {

// Reads an interaction CSV. Columns user_id, item_id and timestamp are
// required; uf<N> / if<N> are user / item features; every other column is
// a task label, in file order.
Dataset load_dataset(const std::string& path, const std::string& staytime_col = "", int staytime_bins = 2);

// Output locations under the configured directory.
std::string data_dir(const ExperimentConfig& cfg);
std::string model_dir(const ExperimentConfig& cfg, const std::string& arch);
std::string metrics_path(const ExperimentConfig& cfg, const std::string& arch);

// Subcommands. Progress lines go to `log`; outputs go under cfg.out with a
// manifest.json recording the config hash.
void run_generate(const ExperimentConfig& cfg, std::ostream& log);
void run_train(const ExperimentConfig& cfg, std::ostream& log);
MetricReport run_evaluate(const ExperimentConfig& cfg, std::ostream& log);
std::string run_report(const ExperimentConfig& cfg, std::ostream& log);
void run_export_embeddings(const ExperimentConfig& cfg, std::ostream& log);
void run_stage_subset(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace stan
