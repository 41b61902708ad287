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

#include "stan/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "stan/csv.hpp"
#include "stan/error.hpp"

namespace stan {

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the number of correctly ordered pairs, so ties stay integral.
  std::int64_t twice_correct = 0, neg_below = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    twice_correct += pos * (2 * neg_below + neg);
    neg_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auc needs both positive and negative labels");
  return static_cast<double>(twice_correct) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::optional<double> ndcg_at_k(std::span<const double> scores, std::span<const std::uint8_t> labels, int k) {
  if (scores.size() != labels.size()) throw ShapeError("ndcg: scores and labels differ in length");
  if (k < 1) throw ValidationError("ndcg: k must be >= 1");
  const std::size_t positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y != 0; }));
  if (positives == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), scores.size());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    const double discount = 1.0 / std::log2(static_cast<double>(i) + 2.0);
    if (labels[order[i]]) dcg += discount;
    if (i < positives) idcg += discount;
  }
  return dcg / idcg;
}

double relaimpr_auc(double measured, double base) {
  if (!(base > 0.5)) throw UndefinedMetricError("RelaImpr(AUC) needs a base AUC above 0.5");
  return ((measured - 0.5) / (base - 0.5) - 1.0) * 100.0;
}

double relaimpr_ndcg(double measured, double base) {
  if (!(base > 0.0)) throw UndefinedMetricError("RelaImpr(NDCG) needs a positive base NDCG");
  return (measured / base - 1.0) * 100.0;
}

NdcgSummary mean_ndcg(std::span<const ScoredGroup> groups, int k, Exec exec) {
  std::vector<std::optional<double>> per(groups.size());
  const auto n = static_cast<std::int64_t>(groups.size());
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t g = 0; g < n; ++g)
      per[static_cast<std::size_t>(g)] = ndcg_at_k(groups[static_cast<std::size_t>(g)].scores, groups[static_cast<std::size_t>(g)].labels, k);
  } else {
    for (std::int64_t g = 0; g < n; ++g)
      per[static_cast<std::size_t>(g)] = ndcg_at_k(groups[static_cast<std::size_t>(g)].scores, groups[static_cast<std::size_t>(g)].labels, k);
  }
  NdcgSummary s;
  double sum = 0.0;
  for (const auto& v : per) {
    if (v) {
      sum += *v;
      ++s.groups_used;
    } else {
      ++s.groups_excluded;
    }
  }
  s.mean = s.groups_used ? sum / static_cast<double>(s.groups_used) : 0.0;
  return s;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t m = i; m < j; ++m) ranks[order[m]] = r;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("spearman: need two equal-length samples");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedMetricError("spearman: constant sample");
  return sab / std::sqrt(saa * sbb);
}

double MetricReport::mean_auc() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& t : tasks)
    if (t.auc) {
      sum += *t.auc;
      ++n;
    }
  return n ? sum / n : 0.0;
}

MetricReport evaluate_predictions(const Dataset& ds, std::span<const std::size_t> rows,
                                  const Matrix& predictions, int k) {
  if (static_cast<std::size_t>(predictions.rows()) != rows.size() ||
      static_cast<std::size_t>(predictions.cols()) != ds.num_tasks())
    throw ShapeError("predictions do not match the evaluated rows");
  MetricReport rep;
  rep.k = k;
  rep.split = std::string(split_name(ds.split));
  const std::size_t kt = ds.num_tasks();
  rep.tasks.resize(kt);
  // Tasks are independent; each writes only its own slot.
  const auto n_tasks = static_cast<std::int64_t>(kt);
  std::vector<std::exception_ptr> errors(kt);
#pragma omp parallel for schedule(static)
  for (std::int64_t ti = 0; ti < n_tasks; ++ti) {
    const auto t = static_cast<std::size_t>(ti);
    try {
      TaskMetrics& m = rep.tasks[t];
      m.task = ds.task_names[t];
      std::vector<double> scores(rows.size());
      std::vector<std::uint8_t> labels(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        scores[i] = predictions(static_cast<Index>(i), static_cast<Index>(t));
        labels[i] = ds.records[rows[i]].labels[t];
      }
      try {
        m.auc = auc(scores, labels);
      } catch (const UndefinedMetricError&) {
        m.auc.reset();
      }
      std::vector<ScoredGroup> groups;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = ds.records[rows[i]];
        if (groups.empty() || i == 0 || ds.records[rows[i - 1]].user != r.user)
          groups.push_back({ds.user_name(r.user), {}, {}});
        groups.back().scores.push_back(scores[i]);
        groups.back().labels.push_back(labels[i]);
      }
      const NdcgSummary s = mean_ndcg(groups, k, Exec::kSerial);
      m.ndcg = s.mean;
      m.ndcg_groups = s.groups_used;
      m.ndcg_excluded = s.groups_excluded;
    } catch (...) {
      errors[t] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rep;
}

void apply_relaimpr(MetricReport& measured, const MetricReport& base) {
  for (auto& t : measured.tasks) {
    auto it = std::find_if(base.tasks.begin(), base.tasks.end(), [&](const TaskMetrics& b) { return b.task == t.task; });
    if (it == base.tasks.end()) continue;
    t.relaimpr_auc.reset();
    t.relaimpr_ndcg.reset();
    if (t.auc && it->auc && *it->auc > 0.5) t.relaimpr_auc = relaimpr_auc(*t.auc, *it->auc);
    if (it->ndcg > 0.0) t.relaimpr_ndcg = relaimpr_ndcg(t.ndcg, it->ndcg);
  }
}

std::string metric_report_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "arch,dataset,split,seed,k,task,auc,ndcg,ndcg_groups,ndcg_excluded,relaimpr_auc,relaimpr_ndcg\n";
  for (const auto& t : r.tasks) {
    out << r.arch << ',' << csv::quote(r.dataset) << ',' << r.split << ',' << r.seed << ',' << r.k << ','
        << csv::quote(t.task) << ',' << (t.auc ? csv::fmt_exact(*t.auc) : "") << ',' << csv::fmt_exact(t.ndcg)
        << ',' << t.ndcg_groups << ',' << t.ndcg_excluded << ','
        << (t.relaimpr_auc ? csv::fmt_exact(*t.relaimpr_auc) : "") << ','
        << (t.relaimpr_ndcg ? csv::fmt_exact(*t.relaimpr_ndcg) : "") << '\n';
  }
  return out.str();
}

MetricReport read_metric_report_csv(const std::string& path) {
  const csv::Table t = csv::read_file(path);
  for (const char* c : {"arch", "dataset", "split", "seed", "k", "task", "auc", "ndcg", "ndcg_groups", "ndcg_excluded"})
    if (t.column(c) < 0) throw SchemaError(path + ": missing column " + c);
  MetricReport r;
  for (const auto& row : t.rows) {
    r.arch = row[t.column("arch")];
    r.dataset = row[t.column("dataset")];
    r.split = row[t.column("split")];
    r.seed = static_cast<std::uint64_t>(csv::parse_int(row[t.column("seed")], "seed"));
    r.k = static_cast<int>(csv::parse_int(row[t.column("k")], "k"));
    TaskMetrics m;
    m.task = row[t.column("task")];
    if (!row[t.column("auc")].empty()) m.auc = csv::parse_double(row[t.column("auc")], "auc");
    m.ndcg = csv::parse_double(row[t.column("ndcg")], "ndcg");
    m.ndcg_groups = static_cast<std::size_t>(csv::parse_int(row[t.column("ndcg_groups")], "ndcg_groups"));
    m.ndcg_excluded = static_cast<std::size_t>(csv::parse_int(row[t.column("ndcg_excluded")], "ndcg_excluded"));
    for (auto [name, field] : {std::pair{"relaimpr_auc", &m.relaimpr_auc}, std::pair{"relaimpr_ndcg", &m.relaimpr_ndcg}}) {
      const int c = t.column(name);
      if (c >= 0 && !row[c].empty()) *field = csv::parse_double(row[c], name);
    }
    r.tasks.push_back(std::move(m));
  }
  return r;
}

std::string format_comparison(std::vector<MetricReport> reports, const std::string& base_arch) {
  const MetricReport* base = nullptr;
  for (const auto& r : reports)
    if (r.arch == base_arch) base = &r;
  if (base) {
    const MetricReport b = *base;
    for (auto& r : reports) apply_relaimpr(r, b);
  }
  std::ostringstream out;
  const int k = reports.empty() ? 0 : reports.front().k;
  const std::string ndcg_label = "NDCG@" + std::to_string(k);
  auto cell = [](const std::string& s) {
    std::string c = s;
    if (c.size() < 14) c.insert(0, 14 - c.size(), ' ');
    return c;
  };
  out << "RelaImpr base: " << (base ? base_arch : std::string("(none)")) << '\n';
  out << cell("Label") << cell("Metric");
  for (const auto& r : reports) out << cell(r.arch);
  out << '\n';
  if (reports.empty()) return out.str();
  for (const auto& task : reports.front().tasks) {
    auto find = [&](const MetricReport& r) -> const TaskMetrics* {
      for (const auto& t : r.tasks)
        if (t.task == task.task) return &t;
      return nullptr;
    };
    auto row = [&](const std::string& label, const std::string& metric, auto getter) {
      out << cell(label) << cell(metric);
      for (const auto& r : reports) {
        const TaskMetrics* t = find(r);
        out << cell(t ? getter(*t, r) : std::string("n/a"));
      }
      out << '\n';
    };
    row(task.task, "AUC", [](const TaskMetrics& t, const MetricReport&) {
      return t.auc ? csv::fmt_fixed(*t.auc, 4) : std::string("n/a");
    });
    row("", "RelaImpr", [&](const TaskMetrics& t, const MetricReport& r) {
      if (r.arch == base_arch) return std::string("-");
      return t.relaimpr_auc ? csv::fmt_fixed(*t.relaimpr_auc, 2) + "%" : std::string("n/a");
    });
    row("", ndcg_label, [](const TaskMetrics& t, const MetricReport&) { return csv::fmt_fixed(t.ndcg, 4); });
    row("", "RelaImpr", [&](const TaskMetrics& t, const MetricReport& r) {
      if (r.arch == base_arch) return std::string("-");
      return t.relaimpr_ndcg ? csv::fmt_fixed(*t.relaimpr_ndcg, 2) + "%" : std::string("n/a");
    });
  }
  return out.str();
}

}  // namespace stan
