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

#include "stan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "stan/checkpoint.hpp"
#include "stan/error.hpp"

namespace stan {

namespace {

constexpr const char* kStateFile = "/train_state.bin";

bool finite_parts(const LossParts& p) {
  if (!std::isfinite(p.total)) return false;
  for (double v : p.bce)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

void TrainConfig::validate(Architecture arch, std::size_t num_tasks) const {
  if (!(adam.lr > 0.0) || !(adam.eps > 0.0)) throw ConfigError("learning rate and epsilon must be positive");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0))
    throw ConfigError("adam betas must lie in (0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (patience <= 0) throw ConfigError("patience must be positive");
  if (ndcg_k < 1) throw ConfigError("ndcg k must be >= 1");
  if (!eta.empty()) {
    if (is_stan(arch)) throw ConfigError("fixed task weights (eta) apply to the baselines only");
    if (eta.size() != num_tasks) throw ConfigError("eta needs one weight per task");
    for (double e : eta)
      if (!(e > 0.0)) throw ConfigError("eta weights must be positive");
  }
  if (pseudo.window_days && *pseudo.window_days <= 0) throw ConfigError("pseudo-label window must be positive");
}

Trainer::Trainer(Model& model, const Dataset& train, const Dataset& valid, TrainConfig cfg,
                 std::vector<Stage> user_stage)
    : model_(model), train_(train), valid_(valid), cfg_(std::move(cfg)), user_stage_(std::move(user_stage)) {
  if (train_.empty()) throw ValidationError("training set is empty");
  if (valid_.empty()) throw ValidationError("validation set is empty");
  cfg_.validate(model_.config().arch, model_.num_tasks());
  if (model_.uses_stage_feature() && user_stage_.size() < train_.user_ids->size())
    throw ConfigError("stage-aware model needs a stage for every user id");
  if (model_.has_preference()) pseudo_ = compute_pseudo_labels(train_, cfg_.pseudo);
  state_.adam = Adam(model_.params(), cfg_.adam);
  state_.posteriors = PosteriorStore(train_.user_ids->size(), model_.num_tasks());
}

LossSpec Trainer::loss_spec(std::span<const double> gamma) const {
  LossSpec spec;
  switch (model_.config().arch) {
    case Architecture::kStan:
      spec.mode = WeightMode::kGamma;
      spec.gamma = gamma;
      break;
    case Architecture::kStanNoBeta:
      spec.mode = WeightMode::kPreference;
      break;
    default:
      spec.mode = WeightMode::kFixed;
      spec.eta = cfg_.eta;
  }
  if (model_.has_preference()) spec.pseudo = &pseudo_;
  return spec;
}

void Trainer::refresh_posteriors() {
  if (!model_.has_preference()) return;
  const auto rows = all_rows(train_);
  const Matrix pref = predict_preference(model_, Batch{&train_, rows, nullptr}, cfg_.exec);
  state_.posteriors.refresh(train_, std::span<const double>(pref.data(), static_cast<std::size_t>(pref.size())));
}

EpochLog Trainer::run_epoch() {
  const int epoch = state_.epoch;
  const auto e = static_cast<std::uint64_t>(epoch);
  const std::size_t k = model_.num_tasks();
  const bool sampled_gamma = model_.config().arch == Architecture::kStan;

  if (sampled_gamma) {
    refresh_posteriors();
    state_.gamma = state_.posteriors.gammas(cfg_.gamma_mode, cfg_.seed, e, 0);
  }

  std::vector<std::size_t> order = all_rows(train_);
  Rng shuffle_rng = keyed_stream(cfg_.seed, {tag(StreamTag::kShuffle), e});
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const std::vector<Stage>* stages = user_stage_.empty() ? nullptr : &user_stage_;
  Gradients grad = model_.params().zeros_like();
  Workspace ws;
  EpochLog log;
  log.epoch = epoch;
  log.train_bce.assign(k, 0.0);
  log.train_preference.assign(k, 0.0);
  double total = 0.0;
  std::size_t pref_used = 0;
  std::uint64_t round = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size, ++round) {
    const std::size_t end = std::min(begin + cfg_.batch_size, order.size());
    if (sampled_gamma && cfg_.gamma_schedule == GammaSchedule::kPerBatch && round > 0)
      state_.gamma = state_.posteriors.gammas(cfg_.gamma_mode, cfg_.seed, e, round);
    const Batch batch{&train_, std::span<const std::size_t>(order).subspan(begin, end - begin), stages};
    grad.zero();
    const LossParts parts = loss_and_gradient(model_, batch, loss_spec(state_.gamma), &grad, cfg_.exec, &ws);
    if (!finite_parts(parts))
      throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(round) +
                            " (total " + std::to_string(parts.total) + "); lower the learning rate");
    // Mean over the batch.
    const double scale = 1.0 / static_cast<double>(end - begin);
    for (auto& g : grad.g) g *= scale;
    state_.adam.step(model_.params(), grad);
    total += parts.total;
    pref_used += parts.preference_used;
    for (std::size_t t = 0; t < k; ++t) {
      log.train_bce[t] += parts.bce[t];
      log.train_preference[t] += parts.preference[t];
    }
  }
  const double n = static_cast<double>(order.size());
  log.train_loss = total / n;
  for (std::size_t t = 0; t < k; ++t) {
    log.train_bce[t] /= n;
    log.train_preference[t] = pref_used ? log.train_preference[t] / static_cast<double>(pref_used) : 0.0;
  }

  const auto vrows = all_rows(valid_);
  const Matrix vpred = predict(model_, Batch{&valid_, vrows, stages}, cfg_.exec);
  const MetricReport rep = evaluate_predictions(valid_, vrows, vpred, cfg_.ndcg_k);
  for (const auto& t : rep.tasks) log.valid_auc.push_back(t.auc);
  log.mean_valid_auc = rep.mean_auc();

  ++state_.epoch;
  if (log.mean_valid_auc > state_.best_valid_auc) {
    log.improved = true;
    state_.best_valid_auc = log.mean_valid_auc;
    state_.best_epoch = epoch;
    state_.epochs_since_best = 0;
    state_.best_params.clear();
    for (ParamStore::Id id = 0; id < model_.params().size(); ++id)
      state_.best_params.push_back(model_.params().value(id));
  } else {
    ++state_.epochs_since_best;
  }
  state_.history.push_back(log);
  log_epoch(log);
  return log;
}

bool Trainer::finished() const {
  return state_.epoch >= cfg_.epochs || state_.epochs_since_best >= cfg_.patience;
}

void Trainer::fit() {
  while (!finished()) run_epoch();
  restore_best();
  // Posteriors and gamma describe the returned (best) model.
  if (model_.config().arch == Architecture::kStan || model_.config().arch == Architecture::kStanNoBeta) {
    refresh_posteriors();
    if (model_.config().arch == Architecture::kStan)
      state_.gamma = state_.posteriors.gammas(cfg_.gamma_mode, cfg_.seed, static_cast<std::uint64_t>(state_.epoch), 0);
  }
}

void Trainer::restore_best() {
  if (state_.best_params.empty()) return;
  for (ParamStore::Id id = 0; id < model_.params().size(); ++id) model_.params().value(id) = state_.best_params[id];
}

void Trainer::log_epoch(const EpochLog& log) const {
  if (cfg_.log_path.empty()) return;
  std::ofstream out(cfg_.log_path, std::ios::app);
  if (!out) throw StanError("cannot append to " + cfg_.log_path);
  for (std::size_t t = 0; t < model_.num_tasks(); ++t) {
    nlohmann::json train = {{"epoch", log.epoch},
                            {"split", "train"},
                            {"task", train_.task_names[t]},
                            {"loss", log.train_bce[t]}};
    if (model_.has_preference()) train["preference_loss"] = log.train_preference[t];
    out << train.dump() << '\n';
    nlohmann::json valid = {{"epoch", log.epoch}, {"split", "valid"}, {"task", train_.task_names[t]}};
    valid["auc"] = log.valid_auc[t] ? nlohmann::json(*log.valid_auc[t]) : nlohmann::json(nullptr);
    out << valid.dump() << '\n';
  }
  nlohmann::json summary = {{"epoch", log.epoch},           {"split", "all"},
                            {"task", "*"},                  {"loss", log.train_loss},
                            {"auc", log.mean_valid_auc},   {"improved", log.improved}};
  out << summary.dump() << '\n';
}

void Trainer::save(const std::string& dir, const std::string& config_hash) const {
  CheckpointManifest m;
  m.model = model_.config();
  m.task_names = train_.task_names;
  m.seed = cfg_.seed;
  m.config_hash = config_hash;
  m.epoch = state_.epoch;
  m.best_epoch = state_.best_epoch;
  m.best_valid_auc = std::isfinite(state_.best_valid_auc) ? state_.best_valid_auc : 0.0;
  m.epochs_since_best = state_.epochs_since_best;
  m.adam_steps = state_.adam.steps();
  if (!state_.history.empty()) m.metrics.emplace_back("last_train_loss", state_.history.back().train_loss);
  save_model(dir, model_, m);

  std::vector<NamedTensor> tensors;
  const ParamStore& ps = model_.params();
  append_tensors(tensors, ps, state_.adam.first_moment(), "adam.m/");
  append_tensors(tensors, ps, state_.adam.second_moment(), "adam.v/");
  if (!state_.best_params.empty()) append_tensors(tensors, ps, state_.best_params, "best/");
  write_tensor_file(dir + kStateFile, tensors);
  if (model_.has_preference()) state_.posteriors.write_csv(train_, dir + "/posteriors.csv");
}

void Trainer::load(const std::string& dir) {
  CheckpointManifest m;
  Model loaded = load_model(dir, &m);
  if (model_config_to_json(m.model) != model_config_to_json(model_.config()))
    throw ConfigError("checkpoint was written for a different model configuration");
  for (ParamStore::Id id = 0; id < model_.params().size(); ++id) model_.params().value(id) = loaded.params().value(id);

  const auto tensors = read_tensor_file(dir + kStateFile);
  const ParamStore& ps = model_.params();
  restore_tensors(tensors, ps, state_.adam.first_moment(), "adam.m/");
  restore_tensors(tensors, ps, state_.adam.second_moment(), "adam.v/");
  state_.adam.set_steps(m.adam_steps);
  state_.best_params.clear();
  if (m.best_epoch >= 0) {
    state_.best_params.resize(ps.size());
    restore_tensors(tensors, ps, state_.best_params, "best/");
  }
  state_.epoch = m.epoch;
  state_.best_epoch = m.best_epoch;
  state_.best_valid_auc = m.best_epoch >= 0 ? m.best_valid_auc : -std::numeric_limits<double>::infinity();
  state_.epochs_since_best = m.epochs_since_best;
  state_.history.clear();
}

}  // namespace stan
