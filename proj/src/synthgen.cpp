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

#include "stan/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "stan/csv.hpp"
#include "stan/error.hpp"
#include "stan/rng.hpp"

namespace stan {

namespace {

constexpr std::int64_t kDay = 86400;

std::string user_label(std::size_t u) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "u%06zu", u);
  return buf;
}

std::uint32_t item_feature(std::uint32_t item, std::size_t slot, std::uint32_t vocab) {
  if (slot == 0) return item % vocab;
  return static_cast<std::uint32_t>(splitmix64((static_cast<std::uint64_t>(item) << 8) | slot) % vocab);
}

double item_offset(const GeneratorConfig& cfg, std::uint32_t item, std::size_t task) {
  if (cfg.item_effect_scale == 0.0) return 0.0;
  Rng rng = keyed_stream(cfg.seed, {tag(StreamTag::kGenerator), 0xffff'ffffULL, item, task});
  std::normal_distribution<double> n(0.0, cfg.item_effect_scale);
  return n(rng);
}

int sample_stage(Rng& rng, const std::array<double, kNumStages>& probs) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng), acc = 0.0;
  for (int s = 0; s < kNumStages; ++s) {
    acc += probs[s];
    if (x < acc) return s;
  }
  return kNumStages - 1;
}

}  // namespace

TransitionMatrix TransitionMatrix::identity() {
  TransitionMatrix t;
  for (int i = 0; i < kNumStages; ++i) t.p[i][i] = 1.0;
  return t;
}

TransitionMatrix TransitionMatrix::sticky(double stay) {
  TransitionMatrix t;
  for (int i = 0; i < kNumStages; ++i)
    for (int j = 0; j < kNumStages; ++j) t.p[i][j] = i == j ? stay : (1.0 - stay) / (kNumStages - 1);
  return t;
}

void TransitionMatrix::validate() const {
  for (int i = 0; i < kNumStages; ++i) {
    double sum = 0.0;
    for (double v : p[i]) {
      if (!(v >= 0.0)) throw ValidationError("transition matrix has a negative entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ValidationError("transition matrix row " + std::to_string(i) + " sums to " +
                            csv::fmt_exact(sum));
  }
}

void GeneratorConfig::validate() const {
  if (days <= 0 || sessions_per_user_day <= 0 || task_names.empty() || user_slots == 0 ||
      item_slots == 0 || user_vocab == 0 || item_vocab == 0 || num_items == 0)
    throw ValidationError("generator counts must be positive");
  if (sessions_per_user_day > kDay) throw ValidationError("too many sessions per day");
  if (item_effect_scale < 0.0) throw ValidationError("item_effect_scale must be >= 0");
  transitions.validate();
  double init = 0.0;
  for (double v : initial_stage) {
    if (!(v >= 0.0)) throw ValidationError("initial stage distribution has a negative entry");
    init += v;
  }
  if (std::abs(init - 1.0) > 1e-9) throw ValidationError("initial stage distribution must sum to 1");
  for (int s = 0; s < kNumStages; ++s) {
    const auto& prof = profiles[s];
    if (prof.stage != static_cast<Stage>(s)) throw ValidationError("profiles out of stage order");
    if (prof.rates.size() != num_tasks())
      throw ValidationError("profile " + std::string(stage_name(prof.stage)) + " needs K rates");
    for (double r : prof.rates)
      if (!(r > 0.0 && r < 1.0))
        throw ValidationError("profile " + std::string(stage_name(prof.stage)) +
                              " has a rate outside (0,1): " + csv::fmt_exact(r));
    if (prof.feature_shift.size() != user_slots)
      throw ValidationError("profile feature_shift needs one entry per user slot");
  }
}

std::array<StageProfile, kNumStages> default_profiles(std::size_t num_tasks, std::size_t user_slots,
                                                      std::uint32_t spread) {
  // Rows: New, Wander, Stick, Loyal. Columns: CTR, staytime, CVR.
  static constexpr double kRates[kNumStages][3] = {
      {0.10, 0.30, 0.30},
      {0.35, 0.08, 0.50},
      {0.55, 0.50, 0.08},
      {0.75, 0.75, 0.75},
  };
  std::array<StageProfile, kNumStages> out;
  for (int s = 0; s < kNumStages; ++s) {
    out[s].stage = static_cast<Stage>(s);
    for (std::size_t k = 0; k < num_tasks; ++k) out[s].rates.push_back(kRates[s][k % 3]);
    for (std::size_t j = 0; j < user_slots; ++j) {
      // Slot 0 separates all four stages; slot 1 only New/Wander vs Stick/Loyal;
      // later slots carry no stage signal.
      int shift = 0;
      if (j == 0) shift = s * static_cast<int>(spread);
      else if (j == 1) shift = (s / 2) * static_cast<int>(spread);
      out[s].feature_shift.push_back(shift);
    }
  }
  return out;
}

GeneratorConfig default_generator_config() {
  GeneratorConfig cfg;
  cfg.profiles = default_profiles(cfg.num_tasks(), cfg.user_slots, cfg.user_feature_spread);
  cfg.transitions = TransitionMatrix::sticky(0.98);
  return cfg;
}

int day_of(const GeneratorConfig& cfg, std::int64_t timestamp) {
  return static_cast<int>((timestamp - cfg.start_timestamp) / kDay);
}

double session_rate(const GeneratorConfig& cfg, Stage stage, std::uint32_t item, std::size_t task) {
  const double r = cfg.profiles[static_cast<int>(stage)].rates[task];
  if (cfg.item_effect_scale == 0.0) return r;
  const double logit = std::log(r / (1.0 - r)) + item_offset(cfg, item, task);
  return 1.0 / (1.0 + std::exp(-logit));
}

double expected_stage_rate(const GeneratorConfig& cfg, Stage stage, std::size_t task) {
  if (cfg.item_effect_scale == 0.0) return cfg.profiles[static_cast<int>(stage)].rates[task];
  double sum = 0.0;
  for (std::uint32_t i = 0; i < cfg.num_items; ++i) sum += session_rate(cfg, stage, i, task);
  return sum / cfg.num_items;
}

GeneratedData generate(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.num_tasks();
  const std::int64_t slot_len = kDay / cfg.sessions_per_user_day;

  // Per-item rate tables so the hot loop does no transcendental math.
  std::vector<double> rate_table(static_cast<std::size_t>(kNumStages) * cfg.num_items * k);
  for (int s = 0; s < kNumStages; ++s)
    for (std::uint32_t i = 0; i < cfg.num_items; ++i)
      for (std::size_t t = 0; t < k; ++t)
        rate_table[(static_cast<std::size_t>(s) * cfg.num_items + i) * k + t] =
            session_rate(cfg, static_cast<Stage>(s), i, t);

  std::vector<std::vector<InteractionRecord>> per_user(cfg.num_users);
  std::vector<std::vector<StageTruthRow>> truth_per_user(cfg.num_users);
  const auto n_users = static_cast<std::int64_t>(cfg.num_users);

#pragma omp parallel for schedule(static)
  for (std::int64_t ui = 0; ui < n_users; ++ui) {
    const auto u = static_cast<std::uint32_t>(ui);
    Rng rng = keyed_stream(cfg.seed, {tag(StreamTag::kGenerator), u});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<std::uint32_t> pick_item(0, cfg.num_items - 1);
    std::uniform_int_distribution<std::int64_t> jitter(0, slot_len - 1);
    std::uniform_int_distribution<std::uint32_t> pick_base(0, std::max<std::uint32_t>(cfg.user_feature_spread, 1) - 1);

    std::vector<std::uint32_t> base(cfg.user_slots);
    for (auto& b : base) b = pick_base(rng);
    int stage = sample_stage(rng, cfg.initial_stage);

    auto& recs = per_user[u];
    recs.reserve(static_cast<std::size_t>(cfg.days) * cfg.sessions_per_user_day);
    for (int day = 0; day < cfg.days; ++day) {
      if (day > 0) stage = sample_stage(rng, cfg.transitions.p[stage]);
      truth_per_user[u].push_back({u, day, static_cast<Stage>(stage)});
      const auto& prof = cfg.profiles[stage];
      for (int s = 0; s < cfg.sessions_per_user_day; ++s) {
        InteractionRecord r;
        r.user = u;
        r.timestamp = cfg.start_timestamp + day * kDay + s * slot_len + jitter(rng);
        r.item = pick_item(rng);
        r.user_features.resize(cfg.user_slots);
        for (std::size_t j = 0; j < cfg.user_slots; ++j) {
          const long long v = static_cast<long long>(base[j]) + prof.feature_shift[j];
          const long long m = cfg.user_vocab;
          r.user_features[j] = static_cast<std::uint32_t>(((v % m) + m) % m);
        }
        r.item_features.resize(cfg.item_slots);
        for (std::size_t j = 0; j < cfg.item_slots; ++j)
          r.item_features[j] = item_feature(r.item, j, cfg.item_vocab);
        r.labels.resize(k);
        const double* rates = &rate_table[(static_cast<std::size_t>(stage) * cfg.num_items + r.item) * k];
        for (std::size_t t = 0; t < k; ++t) r.labels[t] = unif(rng) < rates[t] ? 1 : 0;
        recs.push_back(std::move(r));
      }
    }
  }

  GeneratedData out;
  Dataset& ds = out.dataset;
  ds.task_names = cfg.task_names;
  ds.user_vocab.assign(cfg.user_slots, cfg.user_vocab);
  ds.item_vocab.assign(cfg.item_slots, cfg.item_vocab);
  auto uids = std::make_shared<std::vector<std::string>>();
  for (std::size_t u = 0; u < cfg.num_users; ++u) uids->push_back(user_label(u));
  auto iids = std::make_shared<std::vector<std::string>>();
  for (std::uint32_t i = 0; i < cfg.num_items; ++i) iids->push_back("i" + std::to_string(i));
  ds.user_ids = std::move(uids);
  ds.item_ids = std::move(iids);
  std::size_t total = 0;
  for (const auto& v : per_user) total += v.size();
  ds.records.reserve(total);
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    for (auto& r : per_user[u]) ds.records.push_back(std::move(r));
    for (auto& t : truth_per_user[u]) out.truth.push_back(t);
  }
  return out;
}

StageTruth::StageTruth(const std::vector<StageTruthRow>& rows, std::size_t num_users, int days)
    : days_(days), num_users_(num_users),
      table_(num_users * static_cast<std::size_t>(std::max(days, 0)), -1) {
  for (const auto& r : rows) {
    if (r.user >= num_users || r.day < 0 || r.day >= days)
      throw ValidationError("truth row outside (user, day) range");
    table_[r.user * static_cast<std::size_t>(days) + r.day] = static_cast<std::int8_t>(r.stage);
  }
}

bool StageTruth::contains(std::uint32_t user, int day) const {
  return user < num_users_ && day >= 0 && day < days_ &&
         table_[user * static_cast<std::size_t>(days_) + day] >= 0;
}

Stage StageTruth::at(std::uint32_t user, int day) const {
  if (!contains(user, day))
    throw ValidationError("no truth entry for user " + std::to_string(user) + " day " +
                          std::to_string(day));
  return static_cast<Stage>(table_[user * static_cast<std::size_t>(days_) + day]);
}

std::size_t StageRateReport::flagged_count() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(),
                                                [](const StageRateRow& r) { return r.flagged; }));
}

StageRateReport validate_statistics(const Dataset& ds, const std::vector<StageTruthRow>& truth,
                                    const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.num_tasks();
  if (ds.num_tasks() != k) throw ValidationError("dataset task count differs from config");
  const std::size_t n_ids = ds.user_ids ? ds.user_ids->size() : 0;
  StageTruth lookup(truth, n_ids, cfg.days);

  std::vector<std::size_t> sessions(kNumStages, 0), positives(kNumStages * k, 0);
  for (const auto& r : ds.records) {
    const Stage s = lookup.at(r.user, day_of(cfg, r.timestamp));
    const int si = static_cast<int>(s);
    ++sessions[si];
    for (std::size_t t = 0; t < k; ++t) positives[si * k + t] += r.labels[t];
  }
  StageRateReport rep;
  for (int s = 0; s < kNumStages; ++s) {
    for (std::size_t t = 0; t < k; ++t) {
      StageRateRow row;
      row.stage = static_cast<Stage>(s);
      row.task = t;
      row.sessions = sessions[s];
      row.positives = positives[s * k + t];
      row.configured = expected_stage_rate(cfg, row.stage, t);
      if (row.sessions == 0) {
        row.absent = true;
      } else {
        row.empirical = static_cast<double>(row.positives) / static_cast<double>(row.sessions);
        row.abs_deviation = std::abs(row.empirical - row.configured);
        row.std_error = std::sqrt(row.configured * (1.0 - row.configured) / row.sessions);
        row.flagged = row.abs_deviation > 3.0 * row.std_error;
      }
      rep.rows.push_back(row);
    }
  }
  return rep;
}

void write_truth_csv(const Dataset& ds, const std::vector<StageTruthRow>& truth,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "user_id,day,stage\n";
  for (const auto& t : truth)
    out << csv::quote(ds.user_name(t.user)) << ',' << t.day << ',' << stage_name(t.stage) << '\n';
}

std::vector<StageTruthRow> read_truth_csv(const Dataset& ds, const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int cu = t.column("user_id"), cd = t.column("day"), cs = t.column("stage");
  if (cu < 0 || cd < 0 || cs < 0) throw SchemaError(path + ": expected user_id,day,stage");
  std::unordered_map<std::string, std::uint32_t> ids;
  for (std::uint32_t u = 0; u < ds.user_ids->size(); ++u) ids.emplace((*ds.user_ids)[u], u);
  std::vector<StageTruthRow> out;
  for (const auto& row : t.rows) {
    auto it = ids.find(row[cu]);
    if (it == ids.end()) throw ValidationError("truth user '" + row[cu] + "' not in dataset");
    out.push_back({it->second, static_cast<int>(csv::parse_int(row[cd], "day")), parse_stage(row[cs])});
  }
  return out;
}

std::string format_rate_report_csv(const StageRateReport& report,
                                   const std::vector<std::string>& task_names) {
  std::ostringstream out;
  out << "stage,task,sessions,positives,empirical,configured,abs_deviation,std_error,flagged\n";
  for (const auto& r : report.rows) {
    out << stage_name(r.stage) << ',' << csv::quote(task_names[r.task]) << ',' << r.sessions << ','
        << r.positives << ',';
    if (r.absent) out << "absent,";
    else out << csv::fmt_fixed(r.empirical, 6) << ',';
    out << csv::fmt_fixed(r.configured, 6) << ',';
    if (r.absent) out << ",,0\n";
    else
      out << csv::fmt_fixed(r.abs_deviation, 6) << ',' << csv::fmt_fixed(r.std_error, 6) << ','
          << (r.flagged ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace stan
