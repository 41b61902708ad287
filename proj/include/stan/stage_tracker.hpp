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
#include <span>
#include <string>
#include <vector>

#include "stan/data_core.hpp"
#include "stan/rng.hpp"

namespace stan {

// Beta(alpha, beta) belief about one user's preference for one task, plus the
// number of updates absorbed so far.
struct BetaPosterior {
  double alpha = 1.0;
  double beta = 1.0;
  std::int64_t count = 0;
};

inline BetaPosterior init_posterior() { return {}; }

// Increments the counter first, then adds y*c to alpha and (1-y)*c to beta,
// so later observations weigh more. Throws DomainError unless y is in [0,1].
BetaPosterior update_posterior(BetaPosterior p, double y);

inline double posterior_mean(const BetaPosterior& p) { return p.alpha / (p.alpha + p.beta); }

// One Beta(alpha, beta) draw, strictly inside (0, 1).
double sample_gamma(const BetaPosterior& p, Rng& rng);

enum class GammaMode { kSampled, kPosteriorMean };

// Posterior for every (user id, task), user-major.
class PosteriorStore {
 public:
  PosteriorStore() = default;
  PosteriorStore(std::size_t num_user_ids, std::size_t num_tasks);

  std::size_t num_user_ids() const { return num_users_; }
  std::size_t num_tasks() const { return num_tasks_; }

  BetaPosterior& at(std::size_t user, std::size_t task) { return post_[user * num_tasks_ + task]; }
  const BetaPosterior& at(std::size_t user, std::size_t task) const {
    return post_[user * num_tasks_ + task];
  }

  // Resets every posterior and replays each user's records of `ds` in
  // chronological order. `predictions` is row-major [record][task], aligned
  // with ds.records.
  void refresh(const Dataset& ds, std::span<const double> predictions);

  // gamma per (user, task), user-major. Sampled values come from the stream
  // keyed by (seed, epoch, round, user, task), so they do not depend on the
  // order of evaluation.
  std::vector<double> gammas(GammaMode mode, std::uint64_t seed, std::uint64_t epoch,
                             std::uint64_t round = 0) const;

  std::vector<double> means() const;

  void write_csv(const Dataset& ds, const std::string& path) const;
  // Users absent from `ds` are rejected.
  static PosteriorStore read_csv(const Dataset& ds, std::size_t num_tasks, const std::string& path);

 private:
  std::size_t num_users_ = 0;
  std::size_t num_tasks_ = 0;
  std::vector<BetaPosterior> post_;
};

void write_gamma_csv(const Dataset& ds, std::span<const double> gammas, std::size_t num_tasks,
                     std::uint64_t epoch, const std::string& path);

}  // namespace stan
