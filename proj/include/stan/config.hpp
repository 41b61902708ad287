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

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stan/data_core.hpp"
#include "stan/model.hpp"
#include "stan/synthgen.hpp"
#include "stan/trainer.hpp"

namespace stan {

// Every setting of an experiment, resolved to concrete values. Sources are
// applied in order: built-in defaults, config file, STAN_* environment
// variables, command-line flags.
struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string out = "runs";

  GeneratorConfig gen = default_generator_config();
  double gen_stay_probability = 0.98;
  // Per-stage rate overrides; empty keeps the built-in profile.
  std::array<std::vector<double>, kNumStages> gen_rates;

  std::string dataset;  // empty: <out>/data/interactions.csv
  SplitFractions split;
  std::string staytime_col;
  int staytime_bins = 2;

  Architecture arch = Architecture::kStan;
  Index embedding_dim = 128;
  BackboneConfig backbone{1, 1, 1, {64}, 32, {}};
  AttentionAxis attention_axis = AttentionAxis::kFeature;
  bool share_preference_embeddings = false;

  TrainConfig train;

  int k = 5;
  std::string base_arch = "shared_bottom";
  std::vector<std::string> report_archs;  // empty: every evaluated architecture
  std::size_t export_users_per_stage = 1000;

  // Parses `key=value`; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Lines of `key = value`; '#' starts a comment.
  void load_file(const std::string& path);
  // STAN_<KEY> with dots as underscores, e.g. STAN_TRAIN_LR.
  void apply_environment();
  // Recomputes derived settings (stage profiles) and validates.
  void finalize();

  // Canonical sorted `key=value` listing, and its hash without `out`.
  std::string canonical() const;
  std::string hash() const;

  std::string dataset_path() const;
  ModelConfig model_config(const Dataset& ds) const;
  TrainConfig train_config() const;
};

std::string env_name(const std::string& key);

}  // namespace stan
