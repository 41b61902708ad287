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

#include <cstdlib>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <sstream>

#include "stan/cli.hpp"
#include "stan/config.hpp"
#include "stan/csv.hpp"
#include "stan/error.hpp"
#include "stan/pipeline.hpp"
#include "support.hpp"

namespace stan {
namespace {

namespace fs = std::filesystem;

struct CommandResult {
  int status;
  std::string out, err;
};

CommandResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = run_command(args, out, err);
  return {status, out.str(), err.str()};
}

// Environment variable set for one scope.
class ScopedEnv {
 public:
  ScopedEnv(std::string name, const std::string& value) : name_(std::move(name)) {
    ::setenv(name_.c_str(), value.c_str(), 1);
  }
  ~ScopedEnv() { ::unsetenv(name_.c_str()); }

 private:
  std::string name_;
};

constexpr const char* kSmallConfig =
    "# small end-to-end run\n"
    "gen.num_users = 60\n"
    "gen.days = 6\n"
    "gen.item_effect_scale = 1.0\n"
    "\n"
    "model.embedding_dim = 4\n"
    "model.expert_hidden = 8\n"
    "model.expert_dim = 4   # trailing comment\n"
    "train.epochs = 2\n"
    "train.batch_size = 64\n"
    "export.users_per_stage = 3\n";

TEST(ExperimentConfig, DefaultsFollowTheDocumentedProtocol) {
  ExperimentConfig c;
  c.finalize();
  EXPECT_EQ(c.get("train.batch_size"), "2048");
  EXPECT_EQ(c.get("train.lr"), "0.001");
  EXPECT_EQ(c.get("train.beta1"), "0.9");
  EXPECT_EQ(c.get("train.beta2"), "0.999");
  EXPECT_EQ(c.get("train.eps"), "1e-06");
  EXPECT_EQ(c.get("model.embedding_dim"), "128");
  EXPECT_EQ(c.get("train.patience"), "3");
  EXPECT_EQ(c.get("export.users_per_stage"), "1000");
  EXPECT_EQ(c.get("eval.base_arch"), "shared_bottom");
  EXPECT_TRUE(c.train.eta.empty());
}

TEST(ExperimentConfig, EveryKeyRoundTripsThroughText) {
  ExperimentConfig c;
  c.finalize();
  const std::string before = c.canonical();
  for (const auto& key : ExperimentConfig::keys()) c.set(key, c.get(key));
  c.finalize();
  EXPECT_EQ(c.canonical(), before);
}

TEST(ExperimentConfig, ParsesFilesAndRejectsUnknownKeys) {
  testing::TempDir dir;
  testing::write_file(dir.file("c.conf"), kSmallConfig);
  ExperimentConfig c;
  c.load_file(dir.file("c.conf"));
  c.finalize();
  EXPECT_EQ(c.gen.num_users, 60u);
  EXPECT_EQ(c.backbone.expert_dim, 4);
  EXPECT_EQ(c.export_users_per_stage, 3u);

  testing::write_file(dir.file("bad.conf"), "gen.num_users = 10\nmodel.depth = 3\n");
  ExperimentConfig d;
  EXPECT_THROW(d.load_file(dir.file("bad.conf")), ConfigError);
  testing::write_file(dir.file("noeq.conf"), "gen.num_users 10\n");
  EXPECT_THROW(d.load_file(dir.file("noeq.conf")), ConfigError);
  EXPECT_THROW(d.load_file(dir.file("missing.conf")), std::exception);
  EXPECT_THROW(d.set("train.lr", "fast"), ConfigError);
  EXPECT_THROW(d.set("model.arch", "aitm"), ConfigError);
  EXPECT_THROW(d.set("train.gamma_mode", "median"), ConfigError);
}

TEST(ExperimentConfig, FinalizeValidates) {
  auto finalize_with = [](const std::string& key, const std::string& value) {
    ExperimentConfig c;
    c.set(key, value);
    c.finalize();
  };
  EXPECT_THROW(finalize_with("model.expert_hidden", "2000"), ConfigError);
  EXPECT_THROW(finalize_with("model.embedding_dim", "0"), ConfigError);
  EXPECT_THROW(finalize_with("data.split", "0.5,0.5,0.5"), ConfigError);
  EXPECT_THROW(finalize_with("train.eta", "1,1,1"), ConfigError);  // default arch is stan
  EXPECT_THROW(finalize_with("train.lr", "-1"), ConfigError);
  EXPECT_THROW(finalize_with("gen.rates.New", "0.5,1.0,0.5"), ConfigError);
  ExperimentConfig ok;
  ok.set("model.arch", "mmoe");
  ok.set("train.eta", "1,0.5,2");
  EXPECT_NO_THROW(ok.finalize());
}

TEST(ExperimentConfig, EnvironmentOverridesAndHash) {
  EXPECT_EQ(env_name("train.lr"), "STAN_TRAIN_LR");
  EXPECT_EQ(env_name("gen.rates.New"), "STAN_GEN_RATES_NEW");
  ExperimentConfig a;
  a.finalize();
  {
    ScopedEnv env("STAN_TRAIN_LR", "0.25");
    ExperimentConfig c;
    c.apply_environment();
    c.finalize();
    EXPECT_EQ(c.train.adam.lr, 0.25);
    EXPECT_NE(c.hash(), a.hash());
  }
  ExperimentConfig moved;
  moved.set("out", "elsewhere");
  moved.finalize();
  EXPECT_EQ(moved.hash(), a.hash());
  EXPECT_NE(moved.canonical(), a.canonical());
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({}).status, kExitUsage);
  EXPECT_EQ(run({"bogus"}).status, kExitUsage);
  EXPECT_EQ(run({"train", "--no-such-flag"}).status, kExitUsage);
  EXPECT_EQ(run({"train", "--seed", "x"}).status, kExitUsage);
  const auto unknown = run({"config", "--set", "foo=1"});
  EXPECT_EQ(unknown.status, kExitFailure);
  EXPECT_EQ(unknown.err.rfind("error: ", 0), 0u);
  EXPECT_EQ(std::count(unknown.err.begin(), unknown.err.end(), '\n'), 1);
  EXPECT_EQ(run({"config", "--arch", "aitm"}).status, kExitFailure);
  EXPECT_EQ(run({"--help"}).status, kExitOk);
  testing::TempDir dir;
  const auto untrained = run({"evaluate", "--out", dir.str()});
  EXPECT_EQ(untrained.status, kExitFailure);
}

TEST(Cli, SourcesApplyInPrecedenceOrder) {
  testing::TempDir dir;
  testing::write_file(dir.file("c.conf"), "seed = 5\ntrain.epochs = 4\neval.k = 2\n");
  const std::string conf = dir.file("c.conf");
  auto value = [](const std::string& text, const std::string& key) {
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
      if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
    return std::string("?");
  };
  EXPECT_EQ(value(run({"config", "--config", conf}).out, "seed"), "5");
  ScopedEnv env("STAN_SEED", "6");
  EXPECT_EQ(value(run({"config", "--config", conf}).out, "seed"), "6");
  EXPECT_EQ(value(run({"config", "--config", conf, "--set", "seed=7"}).out, "seed"), "7");
  const auto all = run({"config", "--config", conf, "--set", "seed=7", "--seed", "8", "--k", "1"});
  EXPECT_EQ(value(all.out, "seed"), "8");
  EXPECT_EQ(value(all.out, "eval.k"), "1");
  EXPECT_EQ(value(all.out, "train.epochs"), "4");
  EXPECT_NE(value(all.out, "config_hash"), "?");
}

TEST(Cli, GenerateIsByteIdentical) {
  testing::TempDir dir;
  testing::write_file(dir.file("c.conf"), kSmallConfig);
  const std::string a = dir.str() + "/a", b = dir.str() + "/b";
  ASSERT_EQ(run({"generate", "--config", dir.file("c.conf"), "--seed", "7", "--out", a}).status, kExitOk);
  ASSERT_EQ(run({"generate", "--config", dir.file("c.conf"), "--seed", "7", "--out", b}).status, kExitOk);
  for (const char* f : {"interactions.csv", "truth.csv", "stage_rates.csv", "manifest.json"})
    EXPECT_EQ(testing::read_file(a + "/data/" + f), testing::read_file(b + "/data/" + f)) << f;
  const std::string other = dir.str() + "/c";
  ASSERT_EQ(run({"generate", "--config", dir.file("c.conf"), "--seed", "8", "--out", other}).status, kExitOk);
  EXPECT_NE(testing::read_file(a + "/data/interactions.csv"), testing::read_file(other + "/data/interactions.csv"));

  ExperimentConfig cfg;
  cfg.load_file(dir.file("c.conf"));
  cfg.set("seed", "7");
  cfg.finalize();
  const auto manifest = nlohmann::json::parse(testing::read_file(a + "/data/manifest.json"));
  EXPECT_EQ(manifest["files"]["interactions.csv"]["config_hash"], cfg.hash());
  EXPECT_EQ(manifest["files"]["interactions.csv"]["seed"], 7);
}

TEST(Cli, PipelineProducesEveryOutput) {
  testing::TempDir dir;
  testing::write_file(dir.file("c.conf"), kSmallConfig);
  const std::string conf = dir.file("c.conf"), out = dir.str() + "/run";
  auto cmd = [&](std::vector<std::string> args) {
    args.insert(args.end(), {"--config", conf, "--out", out, "--seed", "3"});
    const auto r = run(args);
    EXPECT_EQ(r.status, kExitOk) << args[0] << ": " << r.err;
    return r;
  };
  cmd({"generate"});
  for (const char* arch : {"stan", "shared_bottom"}) {
    cmd({"train", "--arch", arch});
    const std::string mdir = out + "/models/" + arch;
    for (const char* f : {"manifest.json", "params.bin", "train_state.bin", "train_log.jsonl"})
      EXPECT_TRUE(fs::exists(mdir + "/" + f)) << arch << " " << f;
    EXPECT_EQ(fs::exists(mdir + "/posteriors.csv"), std::string(arch) == "stan");
    cmd({"evaluate", "--arch", arch});
    const MetricReport rep = read_metric_report_csv(out + "/metrics/" + arch + ".csv");
    ASSERT_EQ(rep.tasks.size(), 3u);
    EXPECT_EQ(rep.arch, arch);
    for (const auto& t : rep.tasks) EXPECT_TRUE(t.auc.has_value());
    EXPECT_TRUE(fs::exists(out + "/metrics/" + std::string(arch) + "_by_stage.csv"));
  }
  const auto manifest = nlohmann::json::parse(testing::read_file(out + "/models/stan/manifest.json"));
  EXPECT_TRUE(manifest.contains("config_hash"));

  // Evaluation is a pure function of the checkpoint.
  const std::string first = testing::read_file(out + "/metrics/stan.csv");
  cmd({"evaluate", "--arch", "stan"});
  EXPECT_EQ(testing::read_file(out + "/metrics/stan.csv"), first);

  const auto report = cmd({"report"});
  const std::string text = testing::read_file(out + "/report/report.txt");
  EXPECT_NE(text.find("stan"), std::string::npos);
  EXPECT_NE(text.find("shared_bottom"), std::string::npos);
  EXPECT_TRUE(fs::exists(out + "/report/report.csv"));

  // Export: one row per sampled user, at most three per rule stage.
  cmd({"export-embeddings", "--arch", "stan"});
  const Dataset full = load_dataset(out + "/data/interactions.csv");
  const Splits sp = chronological_split(full, SplitFractions{});
  const auto stages = rule_stages_for_users(sp.train, full.user_ids->size());
  std::array<std::size_t, kNumStages> per_stage{};
  for (const auto& [b, e] : sp.train.user_ranges()) ++per_stage[static_cast<int>(stages[sp.train.records[b].user])];
  std::size_t expected = 0;
  for (auto n : per_stage) expected += std::min<std::size_t>(n, 3);
  const csv::Table emb = csv::read_file(out + "/embeddings/stan_embeddings.csv");
  EXPECT_EQ(emb.rows.size(), expected);
  // user_id, stage, K * d1 * d2 embedding entries, K gammas.
  EXPECT_EQ(emb.header.size(), 2u + 3 * 3 * 4 + 3);
  EXPECT_GE(emb.column("gamma_cvr"), 0);
  EXPECT_GE(emb.column("stage"), 0);
  const csv::Table prefs = csv::read_file(out + "/embeddings/stan_preferences.csv");
  EXPECT_GE(prefs.column("pref_ctr"), 0);
  EXPECT_GE(prefs.rows.size(), expected);
  EXPECT_EQ(run({"export-embeddings", "--arch", "shared_bottom", "--config", conf, "--out", out}).status,
            kExitFailure);

  cmd({"stage-subset", "--arch", "shared_bottom", "--set", "train.epochs=1"});
  EXPECT_TRUE(fs::exists(out + "/stage_subset/shared_bottom.csv"));
  EXPECT_TRUE(fs::exists(out + "/stage_subset/shared_bottom.txt"));
}

TEST(LoadDataset, InfersSchemaFromHeader) {
  testing::TempDir dir;
  testing::write_file(dir.file("d.csv"),
                      "user_id,item_id,timestamp,uf0,uf1,if0,click,like\n"
                      "u1,i1,10,0,1,2,1,0\n"
                      "u1,i2,20,0,1,1,0,0\n"
                      "u2,i1,15,1,0,2,0,1\n");
  const Dataset ds = load_dataset(dir.file("d.csv"));
  EXPECT_EQ(ds.task_names, (std::vector<std::string>{"click", "like"}));
  EXPECT_EQ(ds.user_slots(), 2u);
  EXPECT_EQ(ds.item_slots(), 1u);
  EXPECT_EQ(ds.size(), 3u);
}

}  // namespace
}  // namespace stan
