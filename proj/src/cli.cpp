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

#include "stan/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <optional>

#include "stan/error.hpp"
#include "stan/pipeline.hpp"

namespace stan {

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string arch;
  std::string out;
  std::string dataset;
  std::optional<int> k;
  std::vector<std::string> overrides;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--arch", f.arch, "Architecture: single_mlp, shared_bottom, mmoe, ple, ple_stage, stan, stan_no_beta");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--dataset", f.dataset, "Interaction CSV (default <out>/data/interactions.csv)");
  cmd->add_option("--k", f.k, "Cut-off for NDCG@k")->check(CLI::PositiveNumber);
  cmd->add_option("--set", f.overrides, "Override a config key, key=value (repeatable)");
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig cfg;
  if (!f.config.empty()) cfg.load_file(f.config);
  cfg.apply_environment();
  for (const auto& o : f.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (f.seed) cfg.set("seed", std::to_string(*f.seed));
  if (!f.arch.empty()) cfg.set("model.arch", f.arch);
  if (!f.out.empty()) cfg.set("out", f.out);
  if (!f.dataset.empty()) cfg.set("data.dataset", f.dataset);
  if (f.k) cfg.set("eval.k", std::to_string(*f.k));
  cfg.finalize();
  return cfg;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stage-adaptive multi-task recommendation toolkit", "stan"};
  app.require_subcommand(1, 1);
  Flags flags;
  struct Command {
    const char* name;
    const char* help;
  };
  static constexpr Command kCommands[] = {
      {"generate", "Generate a synthetic lifecycle dataset"},
      {"train", "Train one architecture and write a checkpoint"},
      {"evaluate", "Score a trained model on the test split"},
      {"report", "Compare evaluated architectures (RelaImpr vs the base model)"},
      {"export-embeddings", "Export preference embeddings and gamma for sampled users"},
      {"stage-subset", "Train per-stage models and compare with the full-data model"},
      {"config", "Print the resolved configuration"},
  };
  for (const auto& c : kCommands) add_flags(app.add_subcommand(c.name, c.help), flags);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << one_line(e.what()) << " (run with --help)\n";
    return kExitUsage;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig cfg = resolve(flags);
    if (cmd == "generate")
      run_generate(cfg, out);
    else if (cmd == "train")
      run_train(cfg, out);
    else if (cmd == "evaluate")
      run_evaluate(cfg, out);
    else if (cmd == "report")
      run_report(cfg, out);
    else if (cmd == "export-embeddings")
      run_export_embeddings(cfg, out);
    else if (cmd == "stage-subset")
      run_stage_subset(cfg, out);
    else if (cmd == "config")
      out << cfg.canonical() << "config_hash=" << cfg.hash() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitFailure;
  }
}

}  // namespace stan
