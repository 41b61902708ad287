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
#include <string>
#include <vector>

#include "stan/data_core.hpp"
#include "stan/model.hpp"

namespace stan {

// Fraction of (positive, negative) pairs ordered correctly, ties counting
// one half. Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// NDCG@k with binary gain and 1/log2(rank+1) discount; items ranked by
// descending score, ties in original order. nullopt when the group has no
// positive label (undefined ideal DCG).
std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                int k);

// Relative improvement in percent. AUC is measured above the 0.5 floor.
double relaimpr_auc(double measured, double base);
double relaimpr_ndcg(double measured, double base);

struct ScoredGroup {
  std::string key;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

struct NdcgSummary {
  double mean = 0.0;
  std::size_t groups_used = 0;
  std::size_t groups_excluded = 0;
};

NdcgSummary mean_ndcg(std::span<const ScoredGroup> groups, int k, Exec exec = Exec::kParallel);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

struct TaskMetrics {
  std::string task;
  std::optional<double> auc;  // nullopt: single-class labels
  double ndcg = 0.0;
  std::size_t ndcg_groups = 0;
  std::size_t ndcg_excluded = 0;
  std::optional<double> relaimpr_auc;
  std::optional<double> relaimpr_ndcg;
};

struct MetricReport {
  std::string arch;
  std::string dataset;
  std::string split = "test";
  std::uint64_t seed = 0;
  int k = 5;
  std::vector<TaskMetrics> tasks;

  // Mean AUC over tasks where it is defined.
  double mean_auc() const;
};

// Per-task AUC and per-user NDCG@k of `predictions` (rows aligned with
// `rows` of `ds`).
MetricReport evaluate_predictions(const Dataset& ds, std::span<const std::size_t> rows,
                                  const Matrix& predictions, int k);

// Fills the RelaImpr fields of `measured` against `base` (matching tasks).
void apply_relaimpr(MetricReport& measured, const MetricReport& base);

std::string metric_report_csv(const MetricReport& r);
MetricReport read_metric_report_csv(const std::string& path);

// Text grid with one block per task (AUC, RelaImpr, NDCG@k, RelaImpr) and one
// column per architecture, RelaImpr against `base_arch`.
std::string format_comparison(std::vector<MetricReport> reports, const std::string& base_arch);

}  // namespace stan
