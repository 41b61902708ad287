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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stan {

// Lifecycle stage of a user.
enum class Stage : std::uint8_t { kNew = 0, kWander = 1, kStick = 2, kLoyal = 3 };

inline constexpr int kNumStages = 4;

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

enum class SplitTag : std::uint8_t { kTrain, kValid, kTest, kAll };

std::string_view split_name(SplitTag s);

// One (user, item, labels, timestamp) training instance. User and item ids
// are dense indices into the owning Dataset's id tables.
struct InteractionRecord {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  std::int64_t timestamp = 0;
  std::vector<std::uint32_t> user_features;
  std::vector<std::uint32_t> item_features;
  std::vector<std::uint8_t> labels;
  std::optional<double> raw_staytime;
};

struct Dataset {
  // Sorted by (user, timestamp); ties keep file order.
  std::vector<InteractionRecord> records;
  std::vector<std::string> task_names;
  std::vector<std::uint32_t> user_vocab;  // one cardinality per user feature slot
  std::vector<std::uint32_t> item_vocab;
  std::shared_ptr<const std::vector<std::string>> user_ids;
  std::shared_ptr<const std::vector<std::string>> item_ids;
  SplitTag split = SplitTag::kAll;

  std::size_t num_tasks() const { return task_names.size(); }
  std::size_t user_slots() const { return user_vocab.size(); }
  std::size_t item_slots() const { return item_vocab.size(); }
  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  // Distinct users present in `records` (m).
  std::size_t num_users() const;

  const std::string& user_name(std::uint32_t u) const { return (*user_ids)[u]; }

  // Half-open [begin, end) record ranges, one per distinct user, in record order.
  std::vector<std::pair<std::size_t, std::size_t>> user_ranges() const;

  // Throws ValidationError if any record breaks the label/vocab/order invariants.
  void validate() const;

  // Same metadata, records filtered by `keep` (order preserved).
  template <typename Pred>
  Dataset filter(Pred keep) const {
    Dataset out = empty_like();
    for (const auto& r : records)
      if (keep(r)) out.records.push_back(r);
    return out;
  }

  Dataset empty_like() const;
};

// Column mapping for CSV ingestion. `label_cols` names the K task columns in
// task order. If `staytime_col` names one of them, that column holds raw
// nonnegative seconds and is turned into a label by equal-frequency binning.
struct CsvSchema {
  std::string user_col = "user_id";
  std::string item_col = "item_id";
  std::string timestamp_col = "timestamp";
  std::vector<std::string> label_cols;
  std::vector<std::string> user_feature_cols;
  std::vector<std::string> item_feature_cols;
  std::string staytime_col;
  int staytime_bins = 2;
};

// Schema matching the files written by write_dataset_csv.
CsvSchema default_schema(std::size_t user_slots, std::size_t item_slots,
                         const std::vector<std::string>& task_names);

// Categorical feature values are indexed per slot in order of first
// appearance. Throws SchemaError / ValidationError.
Dataset ingest_csv(const std::string& path, const CsvSchema& schema);

// Writes the records with raw categorical indices, in the default schema.
void write_dataset_csv(const Dataset& ds, const std::string& path);

struct Binning {
  std::vector<int> bins;
  bool degenerate = false;  // fewer distinct values than bins
};

Binning equal_frequency_bin(std::span<const double> values, int num_bins);

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct Splits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

Splits chronological_split(const Dataset& ds, const SplitFractions& fractions);

enum class HistorylessPolicy { kExclude, kGlobalMean };

struct PseudoLabelOptions {
  std::optional<int> window_days;  // nullopt = all prior history
  HistorylessPolicy historyless = HistorylessPolicy::kExclude;
};

// Per-record running-mean targets, row-major [record][task].
struct PseudoLabels {
  std::size_t num_tasks = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> has_history;

  double at(std::size_t record, std::size_t task) const {
    return values[record * num_tasks + task];
  }
  // Whether the record contributes to the preference loss.
  bool usable(std::size_t record) const { return has_history[record] != 0; }
};

PseudoLabels compute_pseudo_labels(const Dataset& ds, const PseudoLabelOptions& opts = {});

struct UserAggregate {
  std::uint32_t user = 0;
  std::vector<double> mean_labels;
  std::size_t record_count = 0;
};

std::vector<UserAggregate> compute_user_aggregates(const Dataset& ds);

// Task indices used by the rule cascade, in (CTR, staytime, CVR) roles.
using StageTaskOrder = std::array<int, 3>;

inline constexpr StageTaskOrder kDefaultStageOrder{0, 1, 2};

// Medians of the three role tasks over the given aggregates.
std::array<double, 3> stage_medians(std::span<const UserAggregate> aggs,
                                    const StageTaskOrder& order = kDefaultStageOrder);

Stage assign_rule_stage(const UserAggregate& agg, const std::array<double, 3>& medians,
                        const StageTaskOrder& order = kDefaultStageOrder);

// Stage of every user id (indexed by user), from train-split aggregates.
// Users without train records get `fallback`.
std::vector<Stage> rule_stages_for_users(const Dataset& train, std::size_t num_user_ids,
                                         const StageTaskOrder& order = kDefaultStageOrder,
                                         Stage fallback = Stage::kNew);

void write_pseudo_labels_csv(const Dataset& ds, const PseudoLabels& labels,
                             const std::string& path);
void write_aggregates_csv(const Dataset& ds, std::span<const UserAggregate> aggs,
                          const std::string& path);

}  // namespace stan
