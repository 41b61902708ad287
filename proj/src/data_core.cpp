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

#include "stan/data_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <unordered_map>

#include "stan/csv.hpp"
#include "stan/error.hpp"

namespace stan {

namespace {

constexpr std::int64_t kSecondsPerDay = 86400;

// First-appearance indexing of string values.
class Indexer {
 public:
  std::uint32_t operator()(const std::string& s) {
    auto [it, inserted] = index_.try_emplace(s, static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.push_back(s);
    return it->second;
  }
  std::uint32_t size() const { return static_cast<std::uint32_t>(names_.size()); }
  std::vector<std::string> take() { return std::move(names_); }

 private:
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> names_;
};

int require_column(const csv::Table& t, const std::string& name) {
  int c = t.column(name);
  if (c < 0) throw SchemaError("missing column '" + name + "'");
  return c;
}

void sort_by_user_time(std::vector<InteractionRecord>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const InteractionRecord& a, const InteractionRecord& b) {
                     if (a.user != b.user) return a.user < b.user;
                     return a.timestamp < b.timestamp;
                   });
}

}  // namespace

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kNew: return "New";
    case Stage::kWander: return "Wander";
    case Stage::kStick: return "Stick";
    case Stage::kLoyal: return "Loyal";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (int i = 0; i < kNumStages; ++i)
    if (stage_name(static_cast<Stage>(i)) == name) return static_cast<Stage>(i);
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

std::string_view split_name(SplitTag s) {
  switch (s) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kValid: return "valid";
    case SplitTag::kTest: return "test";
    case SplitTag::kAll: return "all";
  }
  return "?";
}

std::size_t Dataset::num_users() const { return user_ranges().size(); }

std::vector<std::pair<std::size_t, std::size_t>> Dataset::user_ranges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= records.size(); ++i) {
    if (i == records.size() || records[i].user != records[begin].user) {
      out.emplace_back(begin, i);
      begin = i;
    }
  }
  if (records.empty()) out.clear();
  return out;
}

Dataset Dataset::empty_like() const {
  Dataset out;
  out.task_names = task_names;
  out.user_vocab = user_vocab;
  out.item_vocab = item_vocab;
  out.user_ids = user_ids;
  out.item_ids = item_ids;
  out.split = split;
  return out;
}

void Dataset::validate() const {
  const std::size_t k = num_tasks();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto where = [&] { return "record " + std::to_string(i) + ": "; };
    if (r.labels.size() != k) throw ValidationError(where() + "label count != K");
    for (auto y : r.labels)
      if (y > 1) throw ValidationError(where() + "label not in {0,1}");
    if (r.timestamp < 0) throw ValidationError(where() + "negative timestamp");
    if (r.user_features.size() != user_vocab.size() || r.item_features.size() != item_vocab.size())
      throw ValidationError(where() + "feature slot count mismatch");
    for (std::size_t s = 0; s < r.user_features.size(); ++s)
      if (r.user_features[s] >= user_vocab[s]) throw ValidationError(where() + "user feature out of vocab");
    for (std::size_t s = 0; s < r.item_features.size(); ++s)
      if (r.item_features[s] >= item_vocab[s]) throw ValidationError(where() + "item feature out of vocab");
    if (i > 0) {
      const auto& p = records[i - 1];
      if (p.user > r.user || (p.user == r.user && p.timestamp > r.timestamp))
        throw ValidationError(where() + "records not ordered by (user, timestamp)");
    }
  }
}

CsvSchema default_schema(std::size_t user_slots, std::size_t item_slots,
                         const std::vector<std::string>& task_names) {
  CsvSchema s;
  for (std::size_t i = 0; i < user_slots; ++i) s.user_feature_cols.push_back("uf" + std::to_string(i));
  for (std::size_t i = 0; i < item_slots; ++i) s.item_feature_cols.push_back("if" + std::to_string(i));
  s.label_cols = task_names;
  return s;
}

Dataset ingest_csv(const std::string& path, const CsvSchema& schema) {
  const csv::Table table = csv::read_file(path);
  if (schema.label_cols.empty()) throw SchemaError("schema names no label columns");

  const int c_user = require_column(table, schema.user_col);
  const int c_item = require_column(table, schema.item_col);
  const int c_ts = require_column(table, schema.timestamp_col);
  std::vector<int> c_labels, c_uf, c_if;
  int stay_task = -1;
  for (std::size_t k = 0; k < schema.label_cols.size(); ++k) {
    c_labels.push_back(require_column(table, schema.label_cols[k]));
    if (!schema.staytime_col.empty() && schema.label_cols[k] == schema.staytime_col)
      stay_task = static_cast<int>(k);
  }
  if (!schema.staytime_col.empty() && stay_task < 0)
    throw SchemaError("staytime column '" + schema.staytime_col + "' is not a label column");
  for (const auto& c : schema.user_feature_cols) c_uf.push_back(require_column(table, c));
  for (const auto& c : schema.item_feature_cols) c_if.push_back(require_column(table, c));

  Indexer users, items;
  std::vector<Indexer> uf_index(c_uf.size()), if_index(c_if.size());
  std::vector<double> staytimes;

  Dataset ds;
  ds.task_names = schema.label_cols;
  ds.records.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    InteractionRecord r;
    r.user = users(row[c_user]);
    r.item = items(row[c_item]);
    r.timestamp = csv::parse_int(row[c_ts], "timestamp");
    if (r.timestamp < 0) throw ValidationError("negative timestamp");
    for (std::size_t s = 0; s < c_uf.size(); ++s) r.user_features.push_back(uf_index[s](row[c_uf[s]]));
    for (std::size_t s = 0; s < c_if.size(); ++s) r.item_features.push_back(if_index[s](row[c_if[s]]));
    r.labels.resize(c_labels.size(), 0);
    for (std::size_t k = 0; k < c_labels.size(); ++k) {
      if (static_cast<int>(k) == stay_task) {
        double v = csv::parse_double(row[c_labels[k]], "staytime");
        if (!(v >= 0.0)) throw ValidationError("negative staytime");
        r.raw_staytime = v;
        staytimes.push_back(v);
        continue;
      }
      long long y = csv::parse_int(row[c_labels[k]], schema.label_cols[k]);
      if (y != 0 && y != 1)
        throw ValidationError("label '" + schema.label_cols[k] + "' = " + std::to_string(y) +
                              " is not in {0,1}");
      r.labels[k] = static_cast<std::uint8_t>(y);
    }
    ds.records.push_back(std::move(r));
  }

  if (stay_task >= 0 && !staytimes.empty()) {
    Binning b = equal_frequency_bin(staytimes, schema.staytime_bins);
    if (b.degenerate) std::cerr << "warning: staytime binning degenerate\n";
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      if (b.bins[i] > 1)
        throw ValidationError("binned staytime label " + std::to_string(b.bins[i]) +
                              " is not in {0,1}; use 2 bins");
      ds.records[i].labels[stay_task] = static_cast<std::uint8_t>(b.bins[i]);
    }
  }

  for (auto& ix : uf_index) ds.user_vocab.push_back(std::max<std::uint32_t>(ix.size(), 1));
  for (auto& ix : if_index) ds.item_vocab.push_back(std::max<std::uint32_t>(ix.size(), 1));
  ds.user_ids = std::make_shared<const std::vector<std::string>>(users.take());
  ds.item_ids = std::make_shared<const std::vector<std::string>>(items.take());
  sort_by_user_time(ds.records);
  ds.validate();
  return ds;
}

void write_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "user_id,item_id,timestamp";
  for (std::size_t s = 0; s < ds.user_slots(); ++s) out << ",uf" << s;
  for (std::size_t s = 0; s < ds.item_slots(); ++s) out << ",if" << s;
  for (const auto& t : ds.task_names) out << ',' << csv::quote(t);
  out << '\n';
  for (const auto& r : ds.records) {
    out << csv::quote(ds.user_name(r.user)) << ',' << csv::quote((*ds.item_ids)[r.item]) << ','
        << r.timestamp;
    for (auto f : r.user_features) out << ',' << f;
    for (auto f : r.item_features) out << ',' << f;
    for (auto y : r.labels) out << ',' << static_cast<int>(y);
    out << '\n';
  }
}

Binning equal_frequency_bin(std::span<const double> values, int num_bins) {
  if (values.empty()) throw ValidationError("equal_frequency_bin: empty input");
  if (num_bins < 2) throw ValidationError("equal_frequency_bin: need at least 2 bins");
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::size_t distinct = 0;
  for (std::size_t r = 0; r < n; ++r)
    if (r == 0 || values[order[r]] != values[order[r - 1]]) ++distinct;

  Binning out;
  out.bins.assign(n, 0);
  out.degenerate = distinct < static_cast<std::size_t>(num_bins);
  int current = 0;
  std::size_t dense = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const bool starts_run = r == 0 || values[order[r]] != values[order[r - 1]];
    if (starts_run) {
      // A run of equal values takes the bin of its first rank.
      current = out.degenerate
                    ? static_cast<int>(dense++)
                    : static_cast<int>((r * static_cast<std::size_t>(num_bins)) / n);
    }
    out.bins[order[r]] = current;
  }
  return out;
}

Splits chronological_split(const Dataset& ds, const SplitFractions& f) {
  if (!(f.train > 0 && f.valid > 0 && f.test > 0) ||
      std::abs(f.train + f.valid + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be positive and sum to 1");
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.records[a].timestamp < ds.records[b].timestamp;
  });
  auto ts_at = [&](std::size_t r) { return ds.records[order[r]].timestamp; };
  auto advance_past_ties = [&](std::size_t cut) {
    while (cut > 0 && cut < n && ts_at(cut) == ts_at(cut - 1)) ++cut;
    return cut;
  };
  std::size_t cut1 = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train));
  std::size_t cut2 = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (f.train + f.valid)));
  cut1 = advance_past_ties(std::min(cut1, n));
  cut2 = advance_past_ties(std::clamp(cut2, cut1, n));

  std::vector<SplitTag> tag(n);
  for (std::size_t r = 0; r < n; ++r)
    tag[order[r]] = r < cut1 ? SplitTag::kTrain : (r < cut2 ? SplitTag::kValid : SplitTag::kTest);

  Splits out{ds.empty_like(), ds.empty_like(), ds.empty_like()};
  out.train.split = SplitTag::kTrain;
  out.valid.split = SplitTag::kValid;
  out.test.split = SplitTag::kTest;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = tag[i] == SplitTag::kTrain ? out.train
                   : tag[i] == SplitTag::kValid ? out.valid
                                                : out.test;
    dst.records.push_back(ds.records[i]);
  }
  if (out.train.empty() || out.valid.empty() || out.test.empty())
    throw ConfigError("chronological split leaves a split empty (train=" +
                      std::to_string(out.train.size()) + ", valid=" + std::to_string(out.valid.size()) +
                      ", test=" + std::to_string(out.test.size()) + ")");
  return out;
}

PseudoLabels compute_pseudo_labels(const Dataset& ds, const PseudoLabelOptions& opts) {
  const std::size_t k = ds.num_tasks();
  PseudoLabels out;
  out.num_tasks = k;
  out.values.assign(ds.size() * k, 0.0);
  out.has_history.assign(ds.size(), 0);

  std::vector<double> global_mean(k, 0.0);
  if (opts.historyless == HistorylessPolicy::kGlobalMean && !ds.empty()) {
    for (const auto& r : ds.records)
      for (std::size_t t = 0; t < k; ++t) global_mean[t] += r.labels[t];
    for (auto& g : global_mean) g /= static_cast<double>(ds.size());
  }
  const std::int64_t window =
      opts.window_days ? static_cast<std::int64_t>(*opts.window_days) * kSecondsPerDay : -1;

  std::vector<double> prefix;  // [pos][task] running label sums within a user
  for (auto [begin, end] : ds.user_ranges()) {
    const std::size_t len = end - begin;
    prefix.assign((len + 1) * k, 0.0);
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t t = 0; t < k; ++t)
        prefix[(j + 1) * k + t] = prefix[j * k + t] + ds.records[begin + j].labels[t];

    std::size_t lo = 0;     // first in-window position
    std::size_t strict = 0; // first position with timestamp >= current
    for (std::size_t j = 0; j < len; ++j) {
      const std::int64_t ts = ds.records[begin + j].timestamp;
      while (strict < j && ds.records[begin + strict].timestamp < ts) ++strict;
      if (window >= 0)
        while (lo < strict && ds.records[begin + lo].timestamp < ts - window) ++lo;
      const std::size_t count = strict > lo ? strict - lo : 0;
      const std::size_t rec = begin + j;
      if (count == 0) {
        if (opts.historyless == HistorylessPolicy::kGlobalMean) {
          for (std::size_t t = 0; t < k; ++t) out.values[rec * k + t] = global_mean[t];
          out.has_history[rec] = 1;
        }
        continue;
      }
      out.has_history[rec] = 1;
      for (std::size_t t = 0; t < k; ++t)
        out.values[rec * k + t] =
            (prefix[strict * k + t] - prefix[lo * k + t]) / static_cast<double>(count);
    }
  }
  return out;
}

std::vector<UserAggregate> compute_user_aggregates(const Dataset& ds) {
  const std::size_t k = ds.num_tasks();
  std::vector<UserAggregate> out;
  for (auto [begin, end] : ds.user_ranges()) {
    UserAggregate a;
    a.user = ds.records[begin].user;
    a.record_count = end - begin;
    a.mean_labels.assign(k, 0.0);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t t = 0; t < k; ++t) a.mean_labels[t] += ds.records[i].labels[t];
    for (auto& m : a.mean_labels) m /= static_cast<double>(a.record_count);
    out.push_back(std::move(a));
  }
  return out;
}

namespace {

void check_order(std::size_t num_tasks, const StageTaskOrder& order) {
  if (num_tasks < 3) throw ConfigError("rule stages need K >= 3 (CTR, staytime, CVR)");
  for (int t : order)
    if (t < 0 || static_cast<std::size_t>(t) >= num_tasks)
      throw ConfigError("rule stage task order refers to a missing task");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::array<double, 3> stage_medians(std::span<const UserAggregate> aggs,
                                    const StageTaskOrder& order) {
  if (aggs.empty()) throw ValidationError("stage_medians: no aggregates");
  check_order(aggs.front().mean_labels.size(), order);
  std::array<double, 3> out{};
  for (int role = 0; role < 3; ++role) {
    std::vector<double> v;
    v.reserve(aggs.size());
    for (const auto& a : aggs) v.push_back(a.mean_labels[order[role]]);
    out[role] = median(std::move(v));
  }
  return out;
}

Stage assign_rule_stage(const UserAggregate& agg, const std::array<double, 3>& medians,
                        const StageTaskOrder& order) {
  check_order(agg.mean_labels.size(), order);
  if (agg.mean_labels[order[0]] < medians[0]) return Stage::kNew;
  if (agg.mean_labels[order[1]] < medians[1]) return Stage::kWander;
  if (agg.mean_labels[order[2]] < medians[2]) return Stage::kStick;
  return Stage::kLoyal;
}

std::vector<Stage> rule_stages_for_users(const Dataset& train, std::size_t num_user_ids,
                                         const StageTaskOrder& order, Stage fallback) {
  std::vector<Stage> out(num_user_ids, fallback);
  const auto aggs = compute_user_aggregates(train);
  if (aggs.empty()) return out;
  const auto med = stage_medians(aggs, order);
  for (const auto& a : aggs) out[a.user] = assign_rule_stage(a, med, order);
  return out;
}

void write_pseudo_labels_csv(const Dataset& ds, const PseudoLabels& labels,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "user_id,timestamp,task,value,has_history\n";
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t t = 0; t < ds.num_tasks(); ++t)
      out << csv::quote(ds.user_name(ds.records[i].user)) << ',' << ds.records[i].timestamp << ','
          << csv::quote(ds.task_names[t]) << ',' << csv::fmt_exact(labels.at(i, t)) << ','
          << static_cast<int>(labels.has_history[i]) << '\n';
}

void write_aggregates_csv(const Dataset& ds, std::span<const UserAggregate> aggs,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "user_id,task,value\n";
  for (const auto& a : aggs)
    for (std::size_t t = 0; t < a.mean_labels.size(); ++t)
      out << csv::quote(ds.user_name(a.user)) << ',' << csv::quote(ds.task_names[t]) << ','
          << csv::fmt_exact(a.mean_labels[t]) << '\n';
}

}  // namespace stan
