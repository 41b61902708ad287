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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "stan/error.hpp"
#include "stan/stage_tracker.hpp"
#include "support.hpp"

namespace stan {
namespace {

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments sample_moments(const BetaPosterior& p, int n, std::uint64_t seed) {
  Rng rng(seed);
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = sample_gamma(p, rng);
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
    s += g;
    s2 += g * g;
  }
  const double mean = s / n;
  return {mean, s2 / n - mean * mean};
}

TEST(Posterior, InitIsUniform) {
  const BetaPosterior a = init_posterior(), b = init_posterior();
  EXPECT_EQ(a.alpha, 1.0);
  EXPECT_EQ(a.beta, 1.0);
  EXPECT_EQ(a.count, 0);
  EXPECT_EQ(posterior_mean(a), 0.5);
  const BetaPosterior a2 = update_posterior(a, 1.0);
  EXPECT_EQ(b.alpha, 1.0);
  EXPECT_EQ(a2.alpha, 2.0);
}

TEST(Posterior, UpdateExamples) {
  BetaPosterior p = update_posterior(init_posterior(), 0.8);
  EXPECT_NEAR(p.alpha, 1.8, 1e-15);
  EXPECT_NEAR(p.beta, 1.2, 1e-15);
  EXPECT_EQ(p.count, 1);
  p = update_posterior(p, 0.6);
  EXPECT_NEAR(p.alpha, 3.0, 1e-15);
  EXPECT_NEAR(p.beta, 2.0, 1e-15);
  EXPECT_EQ(p.count, 2);
  EXPECT_NEAR(p.alpha + p.beta, 2.0 + 2.0 * 3.0 / 2.0, 1e-15);

  const BetaPosterior z = update_posterior(init_posterior(), 0.0);
  EXPECT_EQ(z.alpha, 1.0);
  EXPECT_EQ(z.beta, 2.0);
  EXPECT_EQ(z.count, 1);
}

TEST(Posterior, RejectsOutOfRangePreference) {
  for (double y : {-1e-12, 1.0 + 1e-12, std::nan(""), std::numeric_limits<double>::infinity()})
    EXPECT_THROW(update_posterior(init_posterior(), y), DomainError);
}

TEST(Posterior, MeanExamples) {
  EXPECT_EQ(posterior_mean({1, 1, 0}), 0.5);
  EXPECT_NEAR(posterior_mean({3, 2, 2}), 0.6, 1e-15);
  EXPECT_NEAR(posterior_mean({1.8, 1.2, 1}), 0.6, 1e-15);
}

TEST(Posterior, ClosedFormAndMassInvariantOnRandomHistories) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int h = 0; h < 200; ++h) {
    const int len = static_cast<int>(rng() % 200);
    BetaPosterior p = init_posterior();
    std::vector<double> ys;
    for (int c = 1; c <= len; ++c) {
      // Mix in exact endpoints so boundary inputs are covered.
      const double y = rng() % 10 == 0 ? static_cast<double>(rng() % 2) : unit(rng);
      ys.push_back(y);
      p = update_posterior(p, y);
      double a = 1.0, b = 1.0;
      for (std::size_t t = 0; t < ys.size(); ++t) {
        a += ys[t] * static_cast<double>(t + 1);
        b += (1.0 - ys[t]) * static_cast<double>(t + 1);
      }
      EXPECT_NEAR(p.alpha, a, 1e-12 * a);
      EXPECT_NEAR(p.beta, b, 1e-12 * b);
      EXPECT_EQ(p.count, c);
      EXPECT_NEAR(p.alpha + p.beta, 2.0 + c * (c + 1) / 2.0, 1e-12 * (p.alpha + p.beta));
      ASSERT_GE(p.alpha, 1.0);
      ASSERT_GE(p.beta, 1.0);
    }
  }
}

TEST(Posterior, ConcentratesOnConstantPreference) {
  for (double target : {0.1, 0.35, 0.8}) {
    BetaPosterior p = init_posterior();
    double last_err = 1.0, last_var = 1.0;
    int c = 0;
    for (int checkpoint : {10, 100, 1000}) {
      while (c < checkpoint) p = update_posterior(p, target), ++c;
      const double s = p.alpha + p.beta;
      const double var = p.alpha * p.beta / (s * s * (s + 1.0));
      const double err = std::abs(posterior_mean(p) - target);
      EXPECT_LE(err, last_err);
      EXPECT_LT(var, last_var);
      last_err = err;
      last_var = var;
    }
    EXPECT_LT(last_err, 1e-3);
    EXPECT_LT(last_var, 1e-6);
  }
}

TEST(SampleGamma, UniformPriorMoments) {
  const Moments m = sample_moments(init_posterior(), 100000, 31);
  EXPECT_NEAR(m.mean, 0.5, 0.01);
  EXPECT_NEAR(m.var, 1.0 / 12.0, 0.005);
}

TEST(SampleGamma, BetaThreeTwoMean) {
  const Moments m = sample_moments({3.0, 2.0, 2}, 100000, 32);
  EXPECT_NEAR(m.mean, 0.6, 0.01);
  // Beta(3,2) variance is ab/((a+b)^2 (a+b+1)) = 6/150.
  EXPECT_NEAR(m.var, 0.04, 0.005);
}

TEST(SampleGamma, StaysInsideUnitIntervalForExtremePosteriors) {
  Rng rng(33);
  for (const BetaPosterior& p : {BetaPosterior{1e-3, 1e6, 0}, BetaPosterior{1e6, 1e-3, 0},
                                 BetaPosterior{1e9, 1.0, 0}, BetaPosterior{1.0, 1e9, 0}})
    for (int i = 0; i < 1000; ++i) {
      const double g = sample_gamma(p, rng);
      ASSERT_GT(g, 0.0);
      ASSERT_LT(g, 1.0);
    }
}

Dataset tracker_dataset() {
  auto gen = generate(testing::small_generator(12, 4, 3));
  return std::move(gen.dataset);
}

std::vector<double> random_predictions(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = unit(rng);
  return out;
}

TEST(PosteriorStore, RefreshReplaysEachUserChronologically) {
  const Dataset ds = tracker_dataset();
  const std::size_t k = ds.num_tasks();
  const auto pred = random_predictions(ds.size() * k, 4);
  PosteriorStore store(ds.user_ids->size(), k);
  store.refresh(ds, pred);
  for (const auto& [b, e] : ds.user_ranges()) {
    const auto u = ds.records[b].user;
    for (std::size_t t = 0; t < k; ++t) {
      BetaPosterior p = init_posterior();
      for (std::size_t i = b; i < e; ++i) p = update_posterior(p, pred[i * k + t]);
      EXPECT_EQ(store.at(u, t).alpha, p.alpha);
      EXPECT_EQ(store.at(u, t).beta, p.beta);
      EXPECT_EQ(store.at(u, t).count, static_cast<std::int64_t>(e - b));
    }
  }
  // A second refresh starts from the prior again.
  store.refresh(ds, pred);
  EXPECT_EQ(store.at(ds.records[0].user, 0).count,
            static_cast<std::int64_t>(ds.user_ranges()[0].second - ds.user_ranges()[0].first));
  const std::vector<double> short_pred(3);
  EXPECT_THROW(store.refresh(ds, short_pred), ShapeError);
}

TEST(PosteriorStore, GammasAreReproducibleAndKeyed) {
  const Dataset ds = tracker_dataset();
  const std::size_t k = ds.num_tasks();
  PosteriorStore store(ds.user_ids->size(), k);
  store.refresh(ds, random_predictions(ds.size() * k, 5));
  const auto a = store.gammas(GammaMode::kSampled, 9, 2);
  EXPECT_EQ(a, store.gammas(GammaMode::kSampled, 9, 2));
  EXPECT_NE(a, store.gammas(GammaMode::kSampled, 9, 3));
  EXPECT_NE(a, store.gammas(GammaMode::kSampled, 10, 2));
  EXPECT_NE(a, store.gammas(GammaMode::kSampled, 9, 2, 1));
  for (double g : a) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
  // Each entry is the draw from its own (user, task) stream.
  for (std::size_t u = 0; u < store.num_user_ids(); ++u)
    for (std::size_t t = 0; t < k; ++t) {
      Rng rng = keyed_stream(9, {tag(StreamTag::kGamma), 2, 0, u, t});
      EXPECT_EQ(a[u * k + t], sample_gamma(store.at(u, t), rng));
    }
  EXPECT_EQ(store.gammas(GammaMode::kPosteriorMean, 1, 1), store.means());
}

TEST(PosteriorStore, CsvRoundTripIsExact) {
  const Dataset ds = tracker_dataset();
  const std::size_t k = ds.num_tasks();
  PosteriorStore store(ds.user_ids->size(), k);
  store.refresh(ds, random_predictions(ds.size() * k, 6));
  testing::TempDir dir;
  store.write_csv(ds, dir.file("post.csv"));
  const PosteriorStore back = PosteriorStore::read_csv(ds, k, dir.file("post.csv"));
  for (std::size_t u = 0; u < store.num_user_ids(); ++u)
    for (std::size_t t = 0; t < k; ++t) {
      EXPECT_EQ(back.at(u, t).alpha, store.at(u, t).alpha);
      EXPECT_EQ(back.at(u, t).beta, store.at(u, t).beta);
      EXPECT_EQ(back.at(u, t).count, store.at(u, t).count);
    }
  const std::string text = testing::read_file(dir.file("post.csv"));
  EXPECT_EQ(text.rfind("user_id,task,alpha,beta,c\n", 0), 0u);

  testing::write_file(dir.file("bad.csv"), "user_id,task,alpha,beta,c\nnobody,0,1,1,0\n");
  EXPECT_THROW(PosteriorStore::read_csv(ds, k, dir.file("bad.csv")), ValidationError);
}

TEST(PosteriorStore, GammaCsvHasOneRowPerUserTask) {
  const Dataset ds = tracker_dataset();
  const std::size_t k = ds.num_tasks();
  PosteriorStore store(ds.user_ids->size(), k);
  store.refresh(ds, random_predictions(ds.size() * k, 7));
  testing::TempDir dir;
  write_gamma_csv(ds, store.gammas(GammaMode::kSampled, 1, 4), k, 4, dir.file("g.csv"));
  const std::string text = testing::read_file(dir.file("g.csv"));
  EXPECT_EQ(text.rfind("user_id,task,gamma,epoch\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')),
            1 + store.num_user_ids() * k);
}

}  // namespace
}  // namespace stan
