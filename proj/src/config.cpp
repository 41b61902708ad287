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

#include "stan/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "stan/checkpoint.hpp"
#include "stan/csv.hpp"
#include "stan/error.hpp"

namespace stan {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>)
      out += v[i];
    else if constexpr (std::is_floating_point_v<T>)
      out += csv::fmt_exact(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return csv::parse_double(v, key);
  } catch (const ValidationError&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    return csv::parse_int(v, key);
  } catch (const ValidationError&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

long long to_positive(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x <= 0) throw ConfigError(key + " must be positive");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_double(key, s));
  return out;
}

std::vector<Index> to_widths(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  for (const auto& s : split_list(v)) out.push_back(static_cast<Index>(to_positive(key, s)));
  return out;
}

struct Entry {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string b2s(bool b) { return b ? "true" : "false"; }

const std::vector<Entry>& registry() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back({"seed", [](C& c, S v) { c.seed = static_cast<std::uint64_t>(to_int("seed", v)); },
                 [](const C& c) { return std::to_string(c.seed); }});
    e.push_back({"out", [](C& c, S v) { c.out = v; }, [](const C& c) { return c.out; }});

    e.push_back({"gen.num_users", [](C& c, S v) { c.gen.num_users = static_cast<std::size_t>(to_positive("gen.num_users", v)); },
                 [](const C& c) { return std::to_string(c.gen.num_users); }});
    e.push_back({"gen.days", [](C& c, S v) { c.gen.days = static_cast<int>(to_positive("gen.days", v)); },
                 [](const C& c) { return std::to_string(c.gen.days); }});
    e.push_back({"gen.sessions_per_day",
                 [](C& c, S v) { c.gen.sessions_per_user_day = static_cast<int>(to_positive("gen.sessions_per_day", v)); },
                 [](const C& c) { return std::to_string(c.gen.sessions_per_user_day); }});
    e.push_back({"gen.tasks",
                 [](C& c, S v) {
                   c.gen.task_names = split_list(v);
                   if (c.gen.task_names.empty()) throw ConfigError("gen.tasks must name at least one task");
                 },
                 [](const C& c) { return join(c.gen.task_names); }});
    e.push_back({"gen.user_slots", [](C& c, S v) { c.gen.user_slots = static_cast<std::size_t>(to_positive("gen.user_slots", v)); },
                 [](const C& c) { return std::to_string(c.gen.user_slots); }});
    e.push_back({"gen.item_slots", [](C& c, S v) { c.gen.item_slots = static_cast<std::size_t>(to_positive("gen.item_slots", v)); },
                 [](const C& c) { return std::to_string(c.gen.item_slots); }});
    e.push_back({"gen.user_vocab", [](C& c, S v) { c.gen.user_vocab = static_cast<std::uint32_t>(to_positive("gen.user_vocab", v)); },
                 [](const C& c) { return std::to_string(c.gen.user_vocab); }});
    e.push_back({"gen.item_vocab", [](C& c, S v) { c.gen.item_vocab = static_cast<std::uint32_t>(to_positive("gen.item_vocab", v)); },
                 [](const C& c) { return std::to_string(c.gen.item_vocab); }});
    e.push_back({"gen.user_feature_spread",
                 [](C& c, S v) { c.gen.user_feature_spread = static_cast<std::uint32_t>(to_positive("gen.user_feature_spread", v)); },
                 [](const C& c) { return std::to_string(c.gen.user_feature_spread); }});
    e.push_back({"gen.num_items", [](C& c, S v) { c.gen.num_items = static_cast<std::uint32_t>(to_positive("gen.num_items", v)); },
                 [](const C& c) { return std::to_string(c.gen.num_items); }});
    e.push_back({"gen.item_effect_scale",
                 [](C& c, S v) {
                   c.gen.item_effect_scale = to_double("gen.item_effect_scale", v);
                   if (c.gen.item_effect_scale < 0.0) throw ConfigError("gen.item_effect_scale must be >= 0");
                 },
                 [](const C& c) { return csv::fmt_exact(c.gen.item_effect_scale); }});
    e.push_back({"gen.start_timestamp", [](C& c, S v) { c.gen.start_timestamp = to_int("gen.start_timestamp", v); },
                 [](const C& c) { return std::to_string(c.gen.start_timestamp); }});
    e.push_back({"gen.stay_probability",
                 [](C& c, S v) {
                   c.gen_stay_probability = to_double("gen.stay_probability", v);
                   if (!(c.gen_stay_probability >= 0.0 && c.gen_stay_probability <= 1.0))
                     throw ConfigError("gen.stay_probability must lie in [0, 1]");
                 },
                 [](const C& c) { return csv::fmt_exact(c.gen_stay_probability); }});
    e.push_back({"gen.initial_stage",
                 [](C& c, S v) {
                   const auto p = to_doubles("gen.initial_stage", v);
                   if (p.size() != kNumStages) throw ConfigError("gen.initial_stage needs four probabilities");
                   std::copy(p.begin(), p.end(), c.gen.initial_stage.begin());
                 },
                 [](const C& c) { return join(std::vector<double>(c.gen.initial_stage.begin(), c.gen.initial_stage.end())); }});
    for (int s = 0; s < kNumStages; ++s) {
      const std::string key = "gen.rates." + std::string(stage_name(static_cast<Stage>(s)));
      e.push_back({key, [key, s](C& c, S v) { c.gen_rates[s] = to_doubles(key, v); },
                   [s](const C& c) { return join(c.gen_rates[s]); }});
    }

    e.push_back({"data.dataset", [](C& c, S v) { c.dataset = v; }, [](const C& c) { return c.dataset; }});
    e.push_back({"data.split",
                 [](C& c, S v) {
                   const auto f = to_doubles("data.split", v);
                   if (f.size() != 3) throw ConfigError("data.split needs train,valid,test fractions");
                   c.split = {f[0], f[1], f[2]};
                 },
                 [](const C& c) { return join(std::vector<double>{c.split.train, c.split.valid, c.split.test}); }});
    e.push_back({"data.staytime_column", [](C& c, S v) { c.staytime_col = v; }, [](const C& c) { return c.staytime_col; }});
    e.push_back({"data.staytime_bins", [](C& c, S v) { c.staytime_bins = static_cast<int>(to_positive("data.staytime_bins", v)); },
                 [](const C& c) { return std::to_string(c.staytime_bins); }});
    e.push_back({"data.pseudo_window_days",
                 [](C& c, S v) {
                   const long long d = to_int("data.pseudo_window_days", v);
                   if (d < 0) throw ConfigError("data.pseudo_window_days must be >= 0");
                   c.train.pseudo.window_days = d == 0 ? std::nullopt : std::optional<int>(static_cast<int>(d));
                 },
                 [](const C& c) { return std::to_string(c.train.pseudo.window_days.value_or(0)); }});
    e.push_back({"data.historyless",
                 [](C& c, S v) {
                   if (v == "exclude")
                     c.train.pseudo.historyless = HistorylessPolicy::kExclude;
                   else if (v == "global_mean")
                     c.train.pseudo.historyless = HistorylessPolicy::kGlobalMean;
                   else
                     throw ConfigError("data.historyless must be exclude or global_mean");
                 },
                 [](const C& c) {
                   return std::string(c.train.pseudo.historyless == HistorylessPolicy::kExclude ? "exclude" : "global_mean");
                 }});

    e.push_back({"model.arch", [](C& c, S v) { c.arch = parse_architecture(v); },
                 [](const C& c) { return std::string(architecture_name(c.arch)); }});
    e.push_back({"model.embedding_dim", [](C& c, S v) { c.embedding_dim = static_cast<Index>(to_positive("model.embedding_dim", v)); },
                 [](const C& c) { return std::to_string(c.embedding_dim); }});
    e.push_back({"model.layers", [](C& c, S v) { c.backbone.layers = static_cast<int>(to_positive("model.layers", v)); },
                 [](const C& c) { return std::to_string(c.backbone.layers); }});
    e.push_back({"model.specific_experts",
                 [](C& c, S v) { c.backbone.specific_experts = static_cast<int>(to_positive("model.specific_experts", v)); },
                 [](const C& c) { return std::to_string(c.backbone.specific_experts); }});
    e.push_back({"model.shared_experts",
                 [](C& c, S v) { c.backbone.shared_experts = static_cast<int>(to_positive("model.shared_experts", v)); },
                 [](const C& c) { return std::to_string(c.backbone.shared_experts); }});
    e.push_back({"model.expert_hidden", [](C& c, S v) { c.backbone.expert_hidden = to_widths("model.expert_hidden", v); },
                 [](const C& c) { return join(c.backbone.expert_hidden); }});
    e.push_back({"model.expert_dim", [](C& c, S v) { c.backbone.expert_dim = static_cast<Index>(to_positive("model.expert_dim", v)); },
                 [](const C& c) { return std::to_string(c.backbone.expert_dim); }});
    e.push_back({"model.tower_hidden", [](C& c, S v) { c.backbone.tower_hidden = to_widths("model.tower_hidden", v); },
                 [](const C& c) { return join(c.backbone.tower_hidden); }});
    e.push_back({"model.attention_axis",
                 [](C& c, S v) {
                   if (v == "feature")
                     c.attention_axis = AttentionAxis::kFeature;
                   else if (v == "embedding")
                     c.attention_axis = AttentionAxis::kEmbedding;
                   else
                     throw ConfigError("model.attention_axis must be feature or embedding");
                 },
                 [](const C& c) { return std::string(c.attention_axis == AttentionAxis::kFeature ? "feature" : "embedding"); }});
    e.push_back({"model.share_preference_embeddings",
                 [](C& c, S v) { c.share_preference_embeddings = to_bool("model.share_preference_embeddings", v); },
                 [](const C& c) { return b2s(c.share_preference_embeddings); }});

    e.push_back({"train.lr", [](C& c, S v) { c.train.adam.lr = to_double("train.lr", v); },
                 [](const C& c) { return csv::fmt_exact(c.train.adam.lr); }});
    e.push_back({"train.beta1", [](C& c, S v) { c.train.adam.beta1 = to_double("train.beta1", v); },
                 [](const C& c) { return csv::fmt_exact(c.train.adam.beta1); }});
    e.push_back({"train.beta2", [](C& c, S v) { c.train.adam.beta2 = to_double("train.beta2", v); },
                 [](const C& c) { return csv::fmt_exact(c.train.adam.beta2); }});
    e.push_back({"train.eps", [](C& c, S v) { c.train.adam.eps = to_double("train.eps", v); },
                 [](const C& c) { return csv::fmt_exact(c.train.adam.eps); }});
    e.push_back({"train.batch_size", [](C& c, S v) { c.train.batch_size = static_cast<std::size_t>(to_positive("train.batch_size", v)); },
                 [](const C& c) { return std::to_string(c.train.batch_size); }});
    e.push_back({"train.epochs", [](C& c, S v) { c.train.epochs = static_cast<int>(to_positive("train.epochs", v)); },
                 [](const C& c) { return std::to_string(c.train.epochs); }});
    e.push_back({"train.patience", [](C& c, S v) { c.train.patience = static_cast<int>(to_positive("train.patience", v)); },
                 [](const C& c) { return std::to_string(c.train.patience); }});
    e.push_back({"train.eta", [](C& c, S v) { c.train.eta = to_doubles("train.eta", v); },
                 [](const C& c) { return join(c.train.eta); }});
    e.push_back({"train.gamma_mode",
                 [](C& c, S v) {
                   if (v == "sampled")
                     c.train.gamma_mode = GammaMode::kSampled;
                   else if (v == "posterior_mean")
                     c.train.gamma_mode = GammaMode::kPosteriorMean;
                   else
                     throw ConfigError("train.gamma_mode must be sampled or posterior_mean");
                 },
                 [](const C& c) { return std::string(c.train.gamma_mode == GammaMode::kSampled ? "sampled" : "posterior_mean"); }});
    e.push_back({"train.gamma_schedule",
                 [](C& c, S v) {
                   if (v == "epoch")
                     c.train.gamma_schedule = GammaSchedule::kPerEpoch;
                   else if (v == "batch")
                     c.train.gamma_schedule = GammaSchedule::kPerBatch;
                   else
                     throw ConfigError("train.gamma_schedule must be epoch or batch");
                 },
                 [](const C& c) { return std::string(c.train.gamma_schedule == GammaSchedule::kPerEpoch ? "epoch" : "batch"); }});
    e.push_back({"train.exec",
                 [](C& c, S v) {
                   if (v == "parallel")
                     c.train.exec = Exec::kParallel;
                   else if (v == "serial")
                     c.train.exec = Exec::kSerial;
                   else
                     throw ConfigError("train.exec must be parallel or serial");
                 },
                 [](const C& c) { return std::string(c.train.exec == Exec::kParallel ? "parallel" : "serial"); }});

    e.push_back({"eval.k",
                 [](C& c, S v) { c.k = static_cast<int>(to_positive("eval.k", v)); },
                 [](const C& c) { return std::to_string(c.k); }});
    e.push_back({"eval.base_arch",
                 [](C& c, S v) {
                   parse_architecture(v);
                   c.base_arch = v;
                 },
                 [](const C& c) { return c.base_arch; }});
    e.push_back({"eval.report_archs",
                 [](C& c, S v) {
                   c.report_archs = split_list(v);
                   for (const auto& a : c.report_archs) parse_architecture(a);
                 },
                 [](const C& c) { return join(c.report_archs); }});
    e.push_back({"export.users_per_stage",
                 [](C& c, S v) { c.export_users_per_stage = static_cast<std::size_t>(to_positive("export.users_per_stage", v)); },
                 [](const C& c) { return std::to_string(c.export_users_per_stage); }});
    return e;
  }();
  return entries;
}

const Entry& lookup(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::string env_name(const std::string& key) {
  std::string out = "STAN_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, trim(value)); }

std::string ExperimentConfig::get(const std::string& key) const { return lookup(key).get(*this); }

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& e : registry()) out.push_back(e.key);
    return out;
  }();
  return k;
}

void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void ExperimentConfig::apply_environment() {
  for (const auto& e : registry())
    if (const char* v = std::getenv(env_name(e.key).c_str())) {
      try {
        e.set(*this, trim(v));
      } catch (const ConfigError& err) {
        throw ConfigError(env_name(e.key) + ": " + err.what());
      }
    }
}

void ExperimentConfig::finalize() {
  gen.seed = seed;
  gen.profiles = default_profiles(gen.num_tasks(), gen.user_slots, gen.user_feature_spread);
  for (int s = 0; s < kNumStages; ++s) {
    if (gen_rates[s].empty()) continue;
    if (gen_rates[s].size() != gen.num_tasks())
      throw ConfigError("gen.rates." + std::string(stage_name(static_cast<Stage>(s))) + " needs one rate per task");
    gen.profiles[s].rates = gen_rates[s];
  }
  gen.transitions = TransitionMatrix::sticky(gen_stay_probability);
  try {
    gen.validate();
  } catch (const StanError& e) {
    throw ConfigError(std::string("generator: ") + e.what());
  }
  const double total = split.train + split.valid + split.test;
  if (!(split.train > 0 && split.valid > 0 && split.test > 0) || std::abs(total - 1.0) > 1e-9)
    throw ConfigError("data.split fractions must be positive and sum to 1");
  if (embedding_dim > 1024) throw ConfigError("model.embedding_dim exceeds 1024");
  for (Index w : backbone.expert_hidden)
    if (w > 1024) throw ConfigError("model.expert_hidden widths must not exceed 1024");
  for (Index w : backbone.tower_hidden)
    if (w > 1024) throw ConfigError("model.tower_hidden widths must not exceed 1024");
  if (backbone.expert_dim > 1024) throw ConfigError("model.expert_dim exceeds 1024");
  train.seed = seed;
  train.ndcg_k = k;
  if (!train.eta.empty()) train.validate(arch, train.eta.size());
  else train.validate(arch, 1);
}

std::string ExperimentConfig::canonical() const {
  std::vector<std::string> lines;
  for (const auto& e : registry()) lines.push_back(e.key + "=" + e.get(*this));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

std::string ExperimentConfig::hash() const {
  // The output directory does not change any result.
  std::string text;
  std::istringstream in(canonical());
  for (std::string line; std::getline(in, line);)
    if (line.rfind("out=", 0) != 0) text += line + '\n';
  return fnv1a_hex(text);
}

std::string ExperimentConfig::dataset_path() const {
  return dataset.empty() ? out + "/data/interactions.csv" : dataset;
}

ModelConfig ExperimentConfig::model_config(const Dataset& ds) const {
  ModelConfig m;
  m.arch = arch;
  m.num_tasks = ds.num_tasks();
  m.user_vocab = ds.user_vocab;
  m.item_vocab = ds.item_vocab;
  m.user_dim = embedding_dim;
  m.item_dim = embedding_dim;
  m.backbone = backbone;
  m.attention_axis = attention_axis;
  m.preference_shares_embeddings = share_preference_embeddings;
  return m;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.ndcg_k = k;
  return t;
}

}  // namespace stan
