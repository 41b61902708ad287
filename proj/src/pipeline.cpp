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

#include "stan/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <regex>
#include <sstream>

#include "stan/checkpoint.hpp"
#include "stan/csv.hpp"
#include "stan/error.hpp"
#include "stan/stage_subset.hpp"
#include "stan/synthgen.hpp"
#include "stan/trainer.hpp"

namespace stan {

namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw StanError("cannot write " + path);
  out << text;
  if (!out) throw StanError("write failed: " + path);
}

// Records which command and configuration produced a file. Entries are
// merged into the directory's manifest.json, keyed by file name.
void record_provenance(const std::string& dir, const std::string& command, const ExperimentConfig& cfg,
                       const std::vector<std::string>& files) {
  const std::string path = dir + "/manifest.json";
  nlohmann::json m = nlohmann::json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
      m = nlohmann::json::object();
    }
  }
  for (const auto& f : files)
    m["files"][f] = {{"command", command}, {"config_hash", cfg.hash()}, {"seed", cfg.seed}};
  write_text(path, m.dump(2) + "\n");
}

struct Prepared {
  Dataset full;
  Splits splits;
  std::vector<Stage> user_stage;  // rule stages from the training split
};

Prepared prepare(const ExperimentConfig& cfg, std::ostream& log) {
  Prepared p;
  const std::string path = cfg.dataset_path();
  p.full = load_dataset(path, cfg.staytime_col, cfg.staytime_bins);
  if (p.full.num_tasks() < 3)
    throw ValidationError(path + ": stage rules need at least three tasks (CTR, staytime, CVR roles)");
  p.splits = chronological_split(p.full, cfg.split);
  p.user_stage = rule_stages_for_users(p.splits.train, p.full.user_ids->size());
  log << "dataset " << path << ": " << p.full.size() << " records, " << p.full.num_users() << " users; split "
      << p.splits.train.size() << "/" << p.splits.valid.size() << "/" << p.splits.test.size() << '\n';
  return p;
}

std::string arch_name(const ExperimentConfig& cfg) { return std::string(architecture_name(cfg.arch)); }

Model load_checked(const ExperimentConfig& cfg, const Dataset& ds, CheckpointManifest& m) {
  const std::string dir = model_dir(cfg, arch_name(cfg));
  if (!fs::exists(dir + "/manifest.json"))
    throw ValidationError("no trained model at " + dir + "; run train --arch " + arch_name(cfg) + " first");
  Model model = load_model(dir, &m);
  if (m.task_names != ds.task_names) throw ValidationError("checkpoint tasks do not match the dataset");
  if (m.model.user_vocab != ds.user_vocab || m.model.item_vocab != ds.item_vocab)
    throw ValidationError("checkpoint vocabularies do not match the dataset");
  return model;
}

std::string metrics_dir(const ExperimentConfig& cfg) { return cfg.out + "/metrics"; }

}  // namespace

Dataset load_dataset(const std::string& path, const std::string& staytime_col, int staytime_bins) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path);
  std::string header;
  std::getline(in, header);
  if (header.rfind("\xEF\xBB\xBF", 0) == 0) header.erase(0, 3);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const auto cols = csv::split_line(header);
  CsvSchema schema;
  static const std::regex user_feat("uf[0-9]+"), item_feat("if[0-9]+");
  for (const auto& c : cols) {
    if (c == schema.user_col || c == schema.item_col || c == schema.timestamp_col) continue;
    if (std::regex_match(c, user_feat))
      schema.user_feature_cols.push_back(c);
    else if (std::regex_match(c, item_feat))
      schema.item_feature_cols.push_back(c);
    else
      schema.label_cols.push_back(c);
  }
  if (schema.label_cols.empty()) throw SchemaError(path + ": no label columns");
  if (!staytime_col.empty() &&
      std::find(schema.label_cols.begin(), schema.label_cols.end(), staytime_col) == schema.label_cols.end())
    throw SchemaError(path + ": staytime column '" + staytime_col + "' not found");
  schema.staytime_col = staytime_col;
  schema.staytime_bins = staytime_bins;
  return ingest_csv(path, schema);
}

std::string data_dir(const ExperimentConfig& cfg) { return cfg.out + "/data"; }

std::string model_dir(const ExperimentConfig& cfg, const std::string& arch) { return cfg.out + "/models/" + arch; }

std::string metrics_path(const ExperimentConfig& cfg, const std::string& arch) {
  return metrics_dir(cfg) + "/" + arch + ".csv";
}

void run_generate(const ExperimentConfig& cfg, std::ostream& log) {
  const std::string dir = data_dir(cfg);
  fs::create_directories(dir);
  const GeneratedData data = generate(cfg.gen);
  write_dataset_csv(data.dataset, dir + "/interactions.csv");
  write_truth_csv(data.dataset, data.truth, dir + "/truth.csv");
  const StageRateReport rates = validate_statistics(data.dataset, data.truth, cfg.gen);
  write_text(dir + "/stage_rates.csv", format_rate_report_csv(rates, cfg.gen.task_names));
  write_text(dir + "/config.txt", cfg.canonical());
  record_provenance(dir, "generate", cfg, {"interactions.csv", "truth.csv", "stage_rates.csv", "config.txt"});
  log << "generated " << data.dataset.size() << " records for " << cfg.gen.num_users << " users into " << dir << '\n';
  if (rates.flagged_count() > 0)
    log << "warning: " << rates.flagged_count() << " stage/task rates deviate beyond 3 standard errors\n";
}

void run_train(const ExperimentConfig& cfg, std::ostream& log) {
  const Prepared p = prepare(cfg, log);
  const std::string arch = arch_name(cfg);
  const std::string dir = model_dir(cfg, arch);
  fs::create_directories(dir);
  TrainConfig tc = cfg.train_config();
  tc.log_path = dir + "/train_log.jsonl";
  write_text(tc.log_path, "");

  Model model(cfg.model_config(p.full), cfg.seed);
  log << "training " << arch << " (" << model.params().num_scalars() << " parameters)\n";
  Trainer trainer(model, p.splits.train, p.splits.valid, tc,
                  model.uses_stage_feature() ? p.user_stage : std::vector<Stage>{});
  while (!trainer.finished()) {
    const EpochLog e = trainer.run_epoch();
    log << "epoch " << e.epoch << ": loss " << csv::fmt_fixed(e.train_loss, 5) << ", valid mean AUC "
        << csv::fmt_fixed(e.mean_valid_auc, 5) << (e.improved ? " *" : "") << '\n';
  }
  trainer.restore_best();
  if (model.has_preference()) {
    trainer.refresh_posteriors();
    write_pseudo_labels_csv(p.splits.train, trainer.pseudo_labels(), dir + "/pseudo_labels.csv");
  }
  // The checkpoint manifest carries the config hash for everything in `dir`.
  trainer.save(dir, cfg.hash());
  if (cfg.arch == Architecture::kStan) {
    const auto gamma = trainer.state().posteriors.gammas(tc.gamma_mode, tc.seed,
                                                         static_cast<std::uint64_t>(trainer.state().epoch));
    write_gamma_csv(p.splits.train, gamma, p.full.num_tasks(), static_cast<std::uint64_t>(trainer.state().epoch),
                    dir + "/gamma.csv");
  }
  const auto aggs = compute_user_aggregates(p.splits.train);
  write_aggregates_csv(p.splits.train, aggs, dir + "/aggregates.csv");
  std::ostringstream stages;
  stages << "user_id,stage\n";
  for (const auto& a : aggs) stages << csv::quote(p.full.user_name(a.user)) << ',' << stage_name(p.user_stage[a.user]) << '\n';
  write_text(dir + "/user_stages.csv", stages.str());
  log << "best epoch " << trainer.state().best_epoch << " (valid mean AUC "
      << csv::fmt_fixed(trainer.state().best_valid_auc, 5) << "); checkpoint in " << dir << '\n';
}

MetricReport run_evaluate(const ExperimentConfig& cfg, std::ostream& log) {
  const Prepared p = prepare(cfg, log);
  CheckpointManifest m;
  const Model model = load_checked(cfg, p.full, m);
  const std::string arch = arch_name(cfg);
  const Dataset& test = p.splits.test;
  const auto rows = all_rows(test);
  const Matrix pred = predict(model, Batch{&test, rows, model.uses_stage_feature() ? &p.user_stage : nullptr});
  MetricReport rep = evaluate_predictions(test, rows, pred, cfg.k);
  rep.arch = arch;
  rep.dataset = fs::path(cfg.dataset_path()).filename().string();
  rep.seed = cfg.seed;

  // Per-stage breakdown over the rule stage of each test user.
  std::string by_stage;
  for (int s = 0; s < kNumStages; ++s) {
    std::vector<std::size_t> srows;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (p.user_stage[test.records[rows[i]].user] == static_cast<Stage>(s)) srows.push_back(i);
    if (srows.empty()) continue;
    Matrix spred(static_cast<Index>(srows.size()), pred.cols());
    for (std::size_t i = 0; i < srows.size(); ++i) spred.row(static_cast<Index>(i)) = pred.row(static_cast<Index>(srows[i]));
    MetricReport sr = evaluate_predictions(test, srows, spred, cfg.k);
    sr.arch = arch;
    sr.dataset = rep.dataset;
    sr.seed = cfg.seed;
    sr.split = "test:" + std::string(stage_name(static_cast<Stage>(s)));
    const std::string text = metric_report_csv(sr);
    by_stage += by_stage.empty() ? text : text.substr(text.find('\n') + 1);
  }

  const std::string dir = metrics_dir(cfg);
  fs::create_directories(dir);
  write_text(metrics_path(cfg, arch), metric_report_csv(rep));
  write_text(dir + "/" + arch + "_by_stage.csv", by_stage);
  record_provenance(dir, "evaluate", cfg, {arch + ".csv", arch + "_by_stage.csv"});
  for (const auto& t : rep.tasks)
    log << arch << ' ' << t.task << ": AUC " << (t.auc ? csv::fmt_fixed(*t.auc, 4) : "n/a") << ", NDCG@" << cfg.k
        << ' ' << csv::fmt_fixed(t.ndcg, 4) << " (" << t.ndcg_excluded << " users without positives excluded)\n";
  return rep;
}

std::string run_report(const ExperimentConfig& cfg, std::ostream& log) {
  std::vector<std::string> archs = cfg.report_archs;
  if (archs.empty())
    for (Architecture a : {Architecture::kSingleMlp, Architecture::kSharedBottom, Architecture::kMmoe, Architecture::kPle,
                           Architecture::kPleStage, Architecture::kStanNoBeta, Architecture::kStan})
      if (fs::exists(metrics_path(cfg, std::string(architecture_name(a)))))
        archs.emplace_back(architecture_name(a));
  if (archs.empty()) throw ValidationError("no metric files under " + metrics_dir(cfg) + "; run evaluate first");
  std::vector<MetricReport> reports;
  for (const auto& a : archs) {
    const std::string path = metrics_path(cfg, a);
    if (!fs::exists(path)) throw ValidationError("missing metrics for " + a + " (" + path + ")");
    reports.push_back(read_metric_report_csv(path));
  }
  const bool has_base = std::any_of(reports.begin(), reports.end(), [&](const MetricReport& r) { return r.arch == cfg.base_arch; });
  if (!has_base) log << "warning: base model " << cfg.base_arch << " not evaluated; RelaImpr omitted\n";
  const std::string text = format_comparison(reports, cfg.base_arch);
  std::string table;
  if (has_base) {
    const MetricReport base = *std::find_if(reports.begin(), reports.end(), [&](const MetricReport& r) { return r.arch == cfg.base_arch; });
    for (auto& r : reports) apply_relaimpr(r, base);
  }
  for (const auto& r : reports) {
    const std::string csv_text = metric_report_csv(r);
    table += table.empty() ? csv_text : csv_text.substr(csv_text.find('\n') + 1);
  }
  const std::string dir = cfg.out + "/report";
  fs::create_directories(dir);
  write_text(dir + "/report.txt", text);
  write_text(dir + "/report.csv", table);
  record_provenance(dir, "report", cfg, {"report.txt", "report.csv"});
  log << text;
  return text;
}

void run_export_embeddings(const ExperimentConfig& cfg, std::ostream& log) {
  if (!is_stan(cfg.arch)) throw ValidationError("export-embeddings needs --arch stan or stan_no_beta");
  const Prepared p = prepare(cfg, log);
  CheckpointManifest m;
  const Model model = load_checked(cfg, p.full, m);
  const std::string mdir = model_dir(cfg, arch_name(cfg));
  const Dataset& train = p.splits.train;
  const std::size_t k = train.num_tasks();
  const PosteriorStore post = PosteriorStore::read_csv(train, k, mdir + "/posteriors.csv");
  const GammaMode mode = cfg.arch == Architecture::kStan ? cfg.train.gamma_mode : GammaMode::kPosteriorMean;
  const std::vector<double> gamma = post.gammas(mode, cfg.seed, static_cast<std::uint64_t>(m.epoch));

  // Last training record of every user, grouped by rule stage.
  std::array<std::vector<std::size_t>, kNumStages> last_by_stage;
  for (const auto& [begin, end] : train.user_ranges())
    last_by_stage[static_cast<int>(p.user_stage[train.records[begin].user])].push_back(end - 1);
  std::vector<std::size_t> chosen;
  std::vector<std::pair<std::size_t, std::size_t>> chosen_ranges;
  for (int s = 0; s < kNumStages; ++s) {
    auto& cand = last_by_stage[s];
    Rng rng = keyed_stream(cfg.seed, {tag(StreamTag::kExport), static_cast<std::uint64_t>(s)});
    std::shuffle(cand.begin(), cand.end(), rng);
    if (cand.size() > cfg.export_users_per_stage) cand.resize(cfg.export_users_per_stage);
    chosen.insert(chosen.end(), cand.begin(), cand.end());
  }
  std::sort(chosen.begin(), chosen.end());
  const Matrix emb = preference_embeddings(model, Batch{&train, chosen, nullptr});

  std::ostringstream out;
  out << "user_id,stage";
  const Index per_task = emb.cols() / static_cast<Index>(k);
  for (std::size_t t = 0; t < k; ++t)
    for (Index j = 0; j < per_task; ++j) out << ",s_" << train.task_names[t] << '_' << j;
  for (std::size_t t = 0; t < k; ++t) out << ",gamma_" << train.task_names[t];
  out << '\n';
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto u = train.records[chosen[i]].user;
    out << csv::quote(train.user_name(u)) << ',' << stage_name(p.user_stage[u]);
    for (Index j = 0; j < emb.cols(); ++j) out << ',' << csv::fmt_exact(emb(static_cast<Index>(i), j));
    for (std::size_t t = 0; t < k; ++t) out << ',' << csv::fmt_exact(gamma[u * k + t]);
    out << '\n';
  }

  // Preference predictions for every training record of the sampled users.
  std::vector<std::size_t> pref_rows;
  std::vector<std::uint8_t> sampled(train.user_ids->size(), 0);
  for (std::size_t r : chosen) sampled[train.records[r].user] = 1;
  for (std::size_t r = 0; r < train.size(); ++r)
    if (sampled[train.records[r].user]) pref_rows.push_back(r);
  const Matrix pref = predict_preference(model, Batch{&train, pref_rows, nullptr});
  std::ostringstream pout;
  pout << "user_id,timestamp";
  for (const auto& name : train.task_names) pout << ",pref_" << name;
  pout << '\n';
  for (std::size_t i = 0; i < pref_rows.size(); ++i) {
    const auto& r = train.records[pref_rows[i]];
    pout << csv::quote(train.user_name(r.user)) << ',' << r.timestamp;
    for (std::size_t t = 0; t < k; ++t) pout << ',' << csv::fmt_exact(pref(static_cast<Index>(i), static_cast<Index>(t)));
    pout << '\n';
  }

  const std::string dir = cfg.out + "/embeddings";
  fs::create_directories(dir);
  const std::string arch = arch_name(cfg);
  write_text(dir + "/" + arch + "_embeddings.csv", out.str());
  write_text(dir + "/" + arch + "_preferences.csv", pout.str());
  record_provenance(dir, "export-embeddings", cfg, {arch + "_embeddings.csv", arch + "_preferences.csv"});
  log << "exported " << chosen.size() << " user embeddings to " << dir << '\n';
}

void run_stage_subset(const ExperimentConfig& cfg, std::ostream& log) {
  const Prepared p = prepare(cfg, log);
  TrainConfig tc = cfg.train_config();
  const StageSubsetResult r = stage_subset_eval(p.splits, p.user_stage, cfg.model_config(p.full), tc);
  const std::string dir = cfg.out + "/stage_subset";
  fs::create_directories(dir);
  const std::string arch = arch_name(cfg);
  write_text(dir + "/" + arch + ".csv", stage_subset_csv(r));
  const std::string text = format_stage_subset(r);
  write_text(dir + "/" + arch + ".txt", text);
  record_provenance(dir, "stage-subset", cfg, {arch + ".csv", arch + ".txt"});
  log << text;
}

}  // namespace stan
