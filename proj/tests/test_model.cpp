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
#include <omp.h>

#include <random>

#include "stan/error.hpp"
#include "stan/model.hpp"
#include "stan/reference.hpp"
#include "stan/stage_tracker.hpp"
#include "support.hpp"

namespace stan {
namespace {

const Architecture kAllArchs[] = {Architecture::kSingleMlp, Architecture::kSharedBottom, Architecture::kMmoe,
                                  Architecture::kPle,       Architecture::kPleStage,     Architecture::kStan,
                                  Architecture::kStanNoBeta};


// Everything a loss evaluation needs for one architecture.
struct LossFixture {
  Dataset ds;
  PseudoLabels pseudo;
  std::vector<Stage> stages;
  std::vector<double> gamma;
  std::vector<std::size_t> rows;
  LossSpec spec;

  LossFixture(Dataset d, Architecture arch, std::uint64_t seed) : ds(std::move(d)) {
    pseudo = compute_pseudo_labels(ds);
    // Rule stages need three tasks; any fixed assignment exercises ple_stage.
    for (std::size_t u = 0; u < ds.user_ids->size(); ++u) stages.push_back(static_cast<Stage>(u % kNumStages));
    rows = all_rows(ds);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.05, 0.95);
    gamma.resize(ds.user_ids->size() * ds.num_tasks());
    for (double& g : gamma) g = unit(rng);
    if (arch == Architecture::kStan) {
      spec.mode = WeightMode::kGamma;
      spec.gamma = gamma;
    } else if (arch == Architecture::kStanNoBeta) {
      spec.mode = WeightMode::kPreference;
    } else {
      spec.mode = WeightMode::kFixed;
      for (std::size_t t = 0; t < ds.num_tasks(); ++t) spec.eta.push_back(1.0 / static_cast<double>(t + 1));
    }
    if (is_stan(arch)) spec.pseudo = &pseudo;
  }

  Batch batch() const { return Batch{&ds, rows, &stages}; }
};

ModelConfig mid_config(const Dataset& ds, Architecture arch) {
  ModelConfig cfg = testing::tiny_model_config(ds, arch);
  cfg.user_dim = 3;
  cfg.item_dim = 3;
  cfg.backbone.layers = 2;
  cfg.backbone.specific_experts = 2;
  cfg.backbone.shared_experts = 2;
  cfg.backbone.expert_hidden = {6};
  cfg.backbone.expert_dim = 4;
  cfg.backbone.tower_hidden = {3};
  return cfg;
}

TEST(Model, TinyStanModelStaysUnderFiveHundredParameters) {
  const Dataset ds = testing::tiny_dataset(10, 1);
  ASSERT_EQ(ds.user_slots(), 3u);
  ASSERT_EQ(ds.item_slots(), 2u);
  const Model model(testing::tiny_model_config(ds, Architecture::kStan), 1);
  EXPECT_LE(model.params().num_scalars(), 500u);
  EXPECT_TRUE(model.has_preference());
}

TEST(Model, GradientsMatchFiniteDifferencesForEveryArchitecture) {
  for (Architecture arch : kAllArchs) {
    LossFixture s(testing::tiny_dataset(6, 2), arch, 3);
    Model model(testing::tiny_model_config(s.ds, arch), 4);
    // Backbone and embedding parameters at the conventional 1e-5 step.
    EXPECT_LE(testing::max_gradient_error(model, s.batch(), s.spec, "pref", 1e-5), 1e-4) << architecture_name(arch);
    if (!is_stan(arch)) continue;
    // Preference-attention gradients reach 1e-8, below the roundoff floor of
    // a 1e-5 step on this loss, so the whole model is checked at 1e-3. The
    // y~ weights of stan_no_beta are constants, so only the parameters that
    // cannot move y~ are comparable with finite differences there.
    const std::string skip = arch == Architecture::kStanNoBeta ? "pref" : "";
    EXPECT_LE(testing::max_gradient_error(model, s.batch(), s.spec, skip, 1e-3), 1e-4) << architecture_name(arch);
  }
}

TEST(Model, PreferenceWeightsCarryNoGradient) {
  // For stan_no_beta, the gradient of the preference parameters equals the
  // gradient of the preference loss alone.
  LossFixture s(testing::tiny_dataset(6, 2), Architecture::kStanNoBeta, 3);
  Model model(testing::tiny_model_config(s.ds, Architecture::kStanNoBeta), 4);
  Gradients full = model.params().zeros_like();
  loss_and_gradient(model, s.batch(), s.spec, &full, Exec::kSerial);
  LossSpec fixed = s.spec;
  fixed.mode = WeightMode::kFixed;
  fixed.eta.assign(s.ds.num_tasks(), 0.0);
  Gradients pref_only = model.params().zeros_like();
  loss_and_gradient(model, s.batch(), fixed, &pref_only, Exec::kSerial);
  const ParamStore& ps = model.params();
  for (ParamStore::Id id = 0; id < ps.size(); ++id)
    if (ps.name(id).rfind("pref", 0) == 0) EXPECT_EQ(full.g[id], pref_only.g[id]) << ps.name(id);
}

TEST(Model, SerialAndParallelAreBitIdentical) {
  for (Architecture arch : kAllArchs) {
    LossFixture s(testing::tiny_dataset(80, 5), arch, 6);
    ASSERT_GT(s.rows.size(), 3 * kChunkRows);
    const Model model(mid_config(s.ds, arch), 7);
    Gradients gs = model.params().zeros_like(), gp = model.params().zeros_like();
    const LossParts ls = loss_and_gradient(model, s.batch(), s.spec, &gs, Exec::kSerial);
    std::vector<LossParts> lp;
    std::vector<Gradients> gps;
    for (int threads : {1, 2, 4}) {
      omp_set_num_threads(threads);
      Gradients g = model.params().zeros_like();
      const LossParts l = loss_and_gradient(model, s.batch(), s.spec, &g, Exec::kParallel);
      EXPECT_EQ(l.total, ls.total) << architecture_name(arch) << " threads " << threads;
      EXPECT_EQ(l.bce, ls.bce);
      EXPECT_EQ(l.preference, ls.preference);
      for (std::size_t i = 0; i < g.g.size(); ++i) EXPECT_EQ(g.g[i], gs.g[i]);
      EXPECT_EQ(predict(model, s.batch(), Exec::kParallel), predict(model, s.batch(), Exec::kSerial));
      if (is_stan(arch))
        EXPECT_EQ(predict_preference(model, s.batch(), Exec::kParallel),
                  predict_preference(model, s.batch(), Exec::kSerial));
    }
    omp_set_num_threads(omp_get_num_procs());
  }
}

TEST(Model, BatchedKernelsMatchPerSampleReference) {
  for (Architecture arch : kAllArchs) {
    LossFixture s(testing::tiny_dataset(30, 8), arch, 9);
    const Model model(mid_config(s.ds, arch), 10);
    const LossParts fast = loss_and_gradient(model, s.batch(), s.spec, nullptr);
    const LossParts slow = reference::batch_loss(model, s.batch(), s.spec);
    EXPECT_NEAR(fast.total, slow.total, 1e-10 * std::abs(slow.total)) << architecture_name(arch);
    EXPECT_EQ(fast.samples, slow.samples);
    EXPECT_EQ(fast.preference_used, slow.preference_used);
    for (std::size_t t = 0; t < s.ds.num_tasks(); ++t) {
      EXPECT_NEAR(fast.bce[t], slow.bce[t], 1e-10 * std::abs(slow.bce[t]));
      EXPECT_NEAR(fast.weighted_bce[t], slow.weighted_bce[t], 1e-10 * std::abs(slow.weighted_bce[t]) + 1e-14);
    }
    const Matrix y = predict(model, s.batch());
    const Matrix yp = is_stan(arch) ? predict_preference(model, s.batch()) : Matrix();
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      const auto& r = s.ds.records[i];
      const auto out = reference::forward(model, r, s.stages[r.user]);
      for (std::size_t t = 0; t < s.ds.num_tasks(); ++t) {
        const auto ii = static_cast<Index>(i), tt = static_cast<Index>(t);
        EXPECT_NEAR(y(ii, tt), out.y_hat[t], 1e-12);
        EXPECT_GT(y(ii, tt), 0.0);
        EXPECT_LT(y(ii, tt), 1.0);
        if (is_stan(arch)) EXPECT_NEAR(yp(ii, tt), out.y_pref[t], 1e-12);
      }
    }
  }
}

TEST(Model, SameSeedSameParameters) {
  const Dataset ds = testing::tiny_dataset(5, 1);
  const ModelConfig cfg = mid_config(ds, Architecture::kStan);
  const Model a(cfg, 3), b(cfg, 3), c(cfg, 4);
  bool differs = false;
  for (ParamStore::Id id = 0; id < a.params().size(); ++id) {
    EXPECT_EQ(a.params().value(id), b.params().value(id));
    differs = differs || a.params().value(id) != c.params().value(id);
  }
  EXPECT_TRUE(differs);
}

TEST(Model, RejectsOutOfVocabularyIds) {
  LossFixture s(testing::tiny_dataset(5, 1), Architecture::kStan, 1);
  const Model model(testing::tiny_model_config(s.ds, Architecture::kStan), 1);
  s.ds.records[0].item_features[0] = 99;
  EXPECT_THROW(predict(model, s.batch()), LookupError);
  EXPECT_THROW(loss_and_gradient(model, s.batch(), s.spec, nullptr), LookupError);
}

TEST(Model, PleStageNeedsStages) {
  LossFixture s(testing::tiny_dataset(5, 1), Architecture::kPleStage, 1);
  const Model model(testing::tiny_model_config(s.ds, Architecture::kPleStage), 1);
  EXPECT_TRUE(model.uses_stage_feature());
  EXPECT_THROW(predict(model, Batch{&s.ds, s.rows, nullptr}), ConfigError);
}

TEST(Losses, BinaryCrossEntropyExamples) {
  EXPECT_NEAR(bce(0.5, 1), 0.6931, 5e-5);
  EXPECT_NEAR(bce(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(0.9, 1) + bce(0.2, 0), 0.3285, 5e-5);
  EXPECT_NEAR(bce(0.9, 1) + bce(0.2, 0), -(std::log(0.9) + std::log(0.8)), 1e-15);
  EXPECT_LT(bce(1.0, 1), 1e-6);
  EXPECT_LT(bce(0.0, 0), 1e-6);
  for (double p : {0.0, 1e-300, 0.3, 1.0 - 1e-17, 1.0})
    for (int y : {0, 1}) {
      EXPECT_TRUE(std::isfinite(bce(p, y)));
      EXPECT_GE(bce(p, y), 0.0);
    }
}

TEST(Losses, TotalLossExamples) {
  const std::vector<double> lt{0.4}, ls{0.1}, g{0.5};
  EXPECT_NEAR(total_loss(lt, ls, g), 0.3, 1e-15);
  const std::vector<double> tiny{1e-300};
  EXPECT_NEAR(total_loss(lt, ls, tiny), 0.1, 1e-15);
  const std::vector<double> lt2{0.4, 0.7}, ls2{0.1, 0.2}, ones{1, 1};
  EXPECT_NEAR(total_loss(lt2, ls2, ones), 1.4, 1e-15);
  EXPECT_THROW(total_loss(lt2, ls, ones), ShapeError);
  EXPECT_THROW(total_loss(lt2, ls2, g), ShapeError);
}

TEST(Losses, TotalLossIsLinearInEachGamma) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 5;
    std::vector<double> lt(k), ls(k), g(k);
    for (std::size_t i = 0; i < k; ++i) lt[i] = 5 * unit(rng), ls[i] = unit(rng), g[i] = unit(rng);
    const std::size_t t = rng() % k;
    const double delta = unit(rng) - 0.5;
    std::vector<double> g2 = g;
    g2[t] += delta;
    EXPECT_NEAR(total_loss(lt, ls, g2) - total_loss(lt, ls, g), delta * lt[t], 1e-9);
  }
}

TEST(Losses, PriorMeanGammaHalvesTheUniformBaselineTaskTerms) {
  LossFixture s(testing::tiny_dataset(8, 4), Architecture::kStan, 2);
  const Model model(testing::tiny_model_config(s.ds, Architecture::kStan), 5);
  // Every posterior at its prior: the posterior mean is 0.5 everywhere.
  const std::vector<double> half(s.gamma.size(), posterior_mean(BetaPosterior{}));
  LossSpec stan = s.spec;
  stan.gamma = half;
  stan.pseudo = nullptr;
  LossSpec uniform;
  uniform.mode = WeightMode::kFixed;
  uniform.eta.assign(s.ds.num_tasks(), 1.0);
  const LossParts a = loss_and_gradient(model, s.batch(), stan, nullptr);
  const LossParts b = loss_and_gradient(model, s.batch(), uniform, nullptr);
  EXPECT_NEAR(a.total, 0.5 * b.total, 1e-12 * b.total);
  // With the preference terms switched on they add unscaled.
  stan.pseudo = &s.pseudo;
  const LossParts c = loss_and_gradient(model, s.batch(), stan, nullptr);
  double pref = 0.0;
  for (double v : c.preference) pref += v;
  EXPECT_NEAR(c.total, 0.5 * b.total + pref, 1e-12 * c.total);
}

}  // namespace
}  // namespace stan
