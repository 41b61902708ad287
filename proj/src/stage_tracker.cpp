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

#include "stan/stage_tracker.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <unordered_map>

#include "stan/csv.hpp"
#include "stan/error.hpp"

namespace stan {

BetaPosterior update_posterior(BetaPosterior p, double y) {
  if (!(y >= 0.0 && y <= 1.0)) throw DomainError("preference outside [0,1]: " + csv::fmt_exact(y));
  ++p.count;
  const double c = static_cast<double>(p.count);
  p.alpha += y * c;
  p.beta += (1.0 - y) * c;
  return p;
}

double sample_gamma(const BetaPosterior& p, Rng& rng) {
  std::gamma_distribution<double> ga(p.alpha, 1.0), gb(p.beta, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  double g = x / (x + y);
  static const double kHi = std::nextafter(1.0, 0.0);
  static constexpr double kLo = std::numeric_limits<double>::denorm_min();
  if (!(g > 0.0)) g = kLo;
  if (g > kHi) g = kHi;
  return g;
}

PosteriorStore::PosteriorStore(std::size_t num_user_ids, std::size_t num_tasks)
    : num_users_(num_user_ids), num_tasks_(num_tasks), post_(num_user_ids * num_tasks) {}

void PosteriorStore::refresh(const Dataset& ds, std::span<const double> predictions) {
  if (predictions.size() != ds.size() * num_tasks_) throw ShapeError("prediction count mismatch");
  std::fill(post_.begin(), post_.end(), BetaPosterior{});
  const auto ranges = ds.user_ranges();
  const auto n = static_cast<std::int64_t>(ranges.size());
  // Distinct users touch disjoint posteriors.
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < n; ++r) {
    const auto [begin, end] = ranges[static_cast<std::size_t>(r)];
    const std::size_t user = ds.records[begin].user;
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t t = 0; t < num_tasks_; ++t)
        post_[user * num_tasks_ + t] = update_posterior(post_[user * num_tasks_ + t], predictions[i * num_tasks_ + t]);
  }
}

std::vector<double> PosteriorStore::gammas(GammaMode mode, std::uint64_t seed, std::uint64_t epoch,
                                           std::uint64_t round) const {
  std::vector<double> out(post_.size());
  const auto n = static_cast<std::int64_t>(post_.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& p = post_[static_cast<std::size_t>(i)];
    if (mode == GammaMode::kPosteriorMean) {
      out[static_cast<std::size_t>(i)] = posterior_mean(p);
    } else {
      const auto u = static_cast<std::uint64_t>(i) / num_tasks_;
      const auto t = static_cast<std::uint64_t>(i) % num_tasks_;
      Rng rng = keyed_stream(seed, {tag(StreamTag::kGamma), epoch, round, u, t});
      out[static_cast<std::size_t>(i)] = sample_gamma(p, rng);
    }
  }
  return out;
}

std::vector<double> PosteriorStore::means() const {
  std::vector<double> out;
  out.reserve(post_.size());
  for (const auto& p : post_) out.push_back(posterior_mean(p));
  return out;
}

void PosteriorStore::write_csv(const Dataset& ds, const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "user_id,task,alpha,beta,c\n";
  for (std::size_t u = 0; u < num_users_; ++u) {
    for (std::size_t t = 0; t < num_tasks_; ++t) {
      const auto& p = at(u, t);
      if (p.count == 0) continue;
      out << csv::quote(ds.user_name(static_cast<std::uint32_t>(u))) << ',' << t << ','
          << csv::fmt_exact(p.alpha) << ',' << csv::fmt_exact(p.beta) << ',' << p.count << '\n';
    }
  }
}

PosteriorStore PosteriorStore::read_csv(const Dataset& ds, std::size_t num_tasks,
                                        const std::string& path) {
  const csv::Table t = csv::read_file(path);
  const int cu = t.column("user_id"), ct = t.column("task"), ca = t.column("alpha"),
            cb = t.column("beta"), cc = t.column("c");
  if (cu < 0 || ct < 0 || ca < 0 || cb < 0 || cc < 0)
    throw SchemaError(path + ": expected user_id,task,alpha,beta,c");
  std::unordered_map<std::string, std::uint32_t> ids;
  for (std::uint32_t u = 0; u < ds.user_ids->size(); ++u) ids.emplace((*ds.user_ids)[u], u);
  PosteriorStore store(ds.user_ids->size(), num_tasks);
  for (const auto& row : t.rows) {
    auto it = ids.find(row[cu]);
    if (it == ids.end()) throw ValidationError("posterior user '" + row[cu] + "' not in dataset");
    const auto task = static_cast<std::size_t>(csv::parse_int(row[ct], "task"));
    if (task >= num_tasks) throw ValidationError("posterior task index out of range");
    auto& p = store.at(it->second, task);
    p.alpha = csv::parse_double(row[ca], "alpha");
    p.beta = csv::parse_double(row[cb], "beta");
    p.count = csv::parse_int(row[cc], "c");
  }
  return store;
}

void write_gamma_csv(const Dataset& ds, std::span<const double> gammas, std::size_t num_tasks,
                     std::uint64_t epoch, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "user_id,task,gamma,epoch\n";
  const std::size_t users = gammas.size() / num_tasks;
  for (std::size_t u = 0; u < users; ++u)
    for (std::size_t t = 0; t < num_tasks; ++t)
      out << csv::quote(ds.user_name(static_cast<std::uint32_t>(u))) << ',' << t << ','
          << csv::fmt_exact(gammas[u * num_tasks + t]) << ',' << epoch << '\n';
}

}  // namespace stan
