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
#include <string>
#include <vector>

#include "stan/data_core.hpp"

namespace stan {

// Behaviour of users while in one lifecycle stage.
struct StageProfile {
  Stage stage = Stage::kNew;
  std::vector<double> rates;        // per task, strictly inside (0, 1)
  std::vector<int> feature_shift;   // per user feature slot
};

// Daily stage-transition probabilities, rows indexed by the current stage.
struct TransitionMatrix {
  std::array<std::array<double, kNumStages>, kNumStages> p{};

  static TransitionMatrix identity();
  // Self-transition `stay`, remaining mass spread evenly.
  static TransitionMatrix sticky(double stay);
  void validate() const;
};

struct GeneratorConfig {
  std::size_t num_users = 2000;
  int days = 30;
  int sessions_per_user_day = 2;
  std::uint64_t seed = 1;
  std::vector<std::string> task_names{"ctr", "staytime", "cvr"};
  std::size_t user_slots = 3;
  std::size_t item_slots = 2;
  std::uint32_t user_vocab = 16;
  std::uint32_t item_vocab = 32;
  // Static per-user jitter added to every user feature value.
  std::uint32_t user_feature_spread = 4;
  std::uint32_t num_items = 400;
  // Stddev of per-(item, task) logit offsets. Zero keeps labels purely
  // stage-driven: y ~ Bernoulli(rate of current stage).
  double item_effect_scale = 0.0;
  std::int64_t start_timestamp = 1'650'000'000;
  std::array<double, kNumStages> initial_stage{0.25, 0.25, 0.25, 0.25};
  std::array<StageProfile, kNumStages> profiles;
  TransitionMatrix transitions;

  std::size_t num_tasks() const { return task_names.size(); }
  void validate() const;
};

// Defaults for K tasks ordered (CTR, staytime, CVR, ...): New has the lowest
// CTR, Wander the lowest staytime, Stick the lowest CVR, Loyal the highest on
// all. The numbers are synthetic.
GeneratorConfig default_generator_config();
std::array<StageProfile, kNumStages> default_profiles(std::size_t num_tasks, std::size_t user_slots,
                                                      std::uint32_t user_feature_spread);

struct StageTruthRow {
  std::uint32_t user = 0;
  int day = 0;
  Stage stage = Stage::kNew;
};

struct GeneratedData {
  Dataset dataset;
  std::vector<StageTruthRow> truth;  // ordered by (user, day)
};

GeneratedData generate(const GeneratorConfig& cfg);

// Lookup of the true stage by (user index, day).
class StageTruth {
 public:
  StageTruth(const std::vector<StageTruthRow>& rows, std::size_t num_users, int days);
  Stage at(std::uint32_t user, int day) const;
  bool contains(std::uint32_t user, int day) const;
  int days() const { return days_; }

 private:
  int days_;
  std::size_t num_users_;
  std::vector<std::int8_t> table_;
};

int day_of(const GeneratorConfig& cfg, std::int64_t timestamp);

// Probability of y=1 for a session in `stage` with `item`, task `task`.
double session_rate(const GeneratorConfig& cfg, Stage stage, std::uint32_t item, std::size_t task);

// Rate expected over uniformly drawn items (equals the profile rate when
// item_effect_scale == 0).
double expected_stage_rate(const GeneratorConfig& cfg, Stage stage, std::size_t task);

struct StageRateRow {
  Stage stage = Stage::kNew;
  std::size_t task = 0;
  std::size_t sessions = 0;
  std::size_t positives = 0;
  bool absent = false;
  double empirical = 0.0;
  double configured = 0.0;
  double abs_deviation = 0.0;
  double std_error = 0.0;
  bool flagged = false;  // deviation beyond 3 binomial standard errors
};

struct StageRateReport {
  std::vector<StageRateRow> rows;  // stage-major, task-minor
  std::size_t flagged_count() const;
};

StageRateReport validate_statistics(const Dataset& ds, const std::vector<StageTruthRow>& truth,
                                    const GeneratorConfig& cfg);

void write_truth_csv(const Dataset& ds, const std::vector<StageTruthRow>& truth,
                     const std::string& path);
// Reads a truth CSV, mapping user ids through `ds`.
std::vector<StageTruthRow> read_truth_csv(const Dataset& ds, const std::string& path);
std::string format_rate_report_csv(const StageRateReport& report,
                                   const std::vector<std::string>& task_names);

}  // namespace stan
