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

#include "stan/stage_subset.hpp"

#include <sstream>

#include "stan/csv.hpp"
#include "stan/error.hpp"

namespace stan {

namespace {

Model train_one(const Dataset& train, const Dataset& valid, const ModelConfig& mc, const TrainConfig& tc,
                const std::vector<Stage>& user_stage) {
  Model model(mc, tc.seed);
  Trainer trainer(model, train, valid, tc, model.uses_stage_feature() ? user_stage : std::vector<Stage>{});
  trainer.fit();
  return model;
}

MetricReport score(const Model& model, const Dataset& test, const std::vector<Stage>& user_stage, int k) {
  const auto rows = all_rows(test);
  const Matrix pred = predict(model, Batch{&test, rows, model.uses_stage_feature() ? &user_stage : nullptr});
  MetricReport rep = evaluate_predictions(test, rows, pred, k);
  rep.arch = std::string(architecture_name(model.config().arch));
  return rep;
}

}  // namespace

StageSubsetResult stage_subset_eval(const Splits& splits, const std::vector<Stage>& user_stage,
                                    const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  if (user_stage.size() < splits.train.user_ids->size()) throw ShapeError("stage assignments do not cover every user");
  StageSubsetResult result;
  TrainConfig tc = train_cfg;
  tc.log_path.clear();
  const Model full = train_one(splits.train, splits.valid, model_cfg, tc, user_stage);
  result.full = score(full, splits.test, user_stage, tc.ndcg_k);

  for (int s = 0; s < kNumStages; ++s) {
    const Stage stage = static_cast<Stage>(s);
    const auto in_stage = [&](const InteractionRecord& r) { return user_stage[r.user] == stage; };
    const Dataset train = splits.train.filter(in_stage);
    const Dataset valid = splits.valid.filter(in_stage);
    const Dataset test = splits.test.filter(in_stage);
    const std::string name(stage_name(stage));
    if (train.empty() || valid.empty() || test.empty()) {
      if (!train.empty() || !test.empty())
        result.warnings.push_back("stage " + name + ": empty train, validation or test subset; skipped");
      else
        result.warnings.push_back("stage " + name + ": no users; skipped");
      continue;
    }
    StageSubsetEntry entry;
    entry.stage = stage;
    entry.train_records = train.size();
    entry.test_records = test.size();
    const Model model = train_one(train, valid, model_cfg, tc, user_stage);
    entry.stage_model = score(model, test, user_stage, tc.ndcg_k);
    entry.full_model = score(full, test, user_stage, tc.ndcg_k);
    for (const auto& t : entry.stage_model.tasks)
      if (!t.auc) result.warnings.push_back("stage " + name + ", task " + t.task + ": single-class test labels, AUC undefined");
    result.stages.push_back(std::move(entry));
  }
  return result;
}

std::string stage_subset_csv(const StageSubsetResult& r) {
  std::ostringstream out;
  out << "stage,model,task,train_records,test_records,auc,ndcg\n";
  auto rows = [&](const std::string& stage, const char* model, const MetricReport& rep, std::size_t ntrain,
                  std::size_t ntest) {
    for (const auto& t : rep.tasks)
      out << stage << ',' << model << ',' << csv::quote(t.task) << ',' << ntrain << ',' << ntest << ','
          << (t.auc ? csv::fmt_exact(*t.auc) : "") << ',' << csv::fmt_exact(t.ndcg) << '\n';
  };
  for (const auto& e : r.stages) {
    const std::string s(stage_name(e.stage));
    rows(s, "stage_single", e.stage_model, e.train_records, e.test_records);
    rows(s, "full_data", e.full_model, e.train_records, e.test_records);
  }
  rows("all", "full_data", r.full, 0, 0);
  return out.str();
}

std::string format_stage_subset(const StageSubsetResult& r) {
  std::ostringstream out;
  out << "In-stage test AUC: stage-only model vs full-data model\n";
  for (const auto& e : r.stages) {
    out << stage_name(e.stage) << " (train " << e.train_records << ", test " << e.test_records << ")\n";
    for (std::size_t t = 0; t < e.stage_model.tasks.size(); ++t) {
      const auto& a = e.stage_model.tasks[t];
      const auto& b = e.full_model.tasks[t];
      out << "  " << a.task << ": stage_single " << (a.auc ? csv::fmt_fixed(*a.auc, 4) : "n/a") << "  full_data "
          << (b.auc ? csv::fmt_fixed(*b.auc, 4) : "n/a");
      if (a.auc && b.auc) out << "  diff " << csv::fmt_fixed(*a.auc - *b.auc, 4);
      out << '\n';
    }
  }
  out << "Full-data model on all test records: mean AUC " << csv::fmt_fixed(r.full.mean_auc(), 4) << '\n';
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  return out.str();
}

}  // namespace stan
