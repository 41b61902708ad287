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

#include "stan/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "stan/error.hpp"

namespace stan {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'T', 'A', 'N', 'T', 'N', 'S', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw SchemaError(path + ": truncated tensor file");
  return v;
}

json backbone_json(const BackboneConfig& b) {
  return {{"layers", b.layers},           {"specific_experts", b.specific_experts},
          {"shared_experts", b.shared_experts}, {"expert_hidden", b.expert_hidden},
          {"expert_dim", b.expert_dim},   {"tower_hidden", b.tower_hidden}};
}

json config_json(const ModelConfig& c) {
  return {{"arch", std::string(architecture_name(c.arch))},
          {"num_tasks", c.num_tasks},
          {"user_vocab", c.user_vocab},
          {"item_vocab", c.item_vocab},
          {"user_dim", c.user_dim},
          {"item_dim", c.item_dim},
          {"backbone", backbone_json(c.backbone)},
          {"attention_axis", c.attention_axis == AttentionAxis::kFeature ? "feature" : "embedding"},
          {"preference_shares_embeddings", c.preference_shares_embeddings}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.arch = parse_architecture(j.at("arch").get<std::string>());
  c.num_tasks = j.at("num_tasks").get<std::size_t>();
  c.user_vocab = j.at("user_vocab").get<std::vector<std::uint32_t>>();
  c.item_vocab = j.at("item_vocab").get<std::vector<std::uint32_t>>();
  c.user_dim = j.at("user_dim").get<Index>();
  c.item_dim = j.at("item_dim").get<Index>();
  const json& b = j.at("backbone");
  c.backbone.layers = b.at("layers").get<int>();
  c.backbone.specific_experts = b.at("specific_experts").get<int>();
  c.backbone.shared_experts = b.at("shared_experts").get<int>();
  c.backbone.expert_hidden = b.at("expert_hidden").get<std::vector<Index>>();
  c.backbone.expert_dim = b.at("expert_dim").get<Index>();
  c.backbone.tower_hidden = b.at("tower_hidden").get<std::vector<Index>>();
  const auto axis = j.at("attention_axis").get<std::string>();
  if (axis == "feature")
    c.attention_axis = AttentionAxis::kFeature;
  else if (axis == "embedding")
    c.attention_axis = AttentionAxis::kEmbedding;
  else
    throw SchemaError("unknown attention_axis '" + axis + "'");
  c.preference_shares_embeddings = j.at("preference_shares_embeddings").get<bool>();
  return c;
}

}  // namespace

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_tensor_file(const std::string& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StanError("cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::int64_t>(out, t.value.rows());
    put<std::int64_t>(out, t.value.cols());
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.value.size())));
  }
  if (!out) throw StanError("write failed: " + path);
}

std::vector<NamedTensor> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw SchemaError(path + ": not a tensor file");
  const auto n = get<std::uint64_t>(in, path);
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw SchemaError(path + ": corrupt tensor name");
    NamedTensor t;
    t.name.resize(len);
    in.read(t.name.data(), len);
    const auto rows = get<std::int64_t>(in, path);
    const auto cols = get<std::int64_t>(in, path);
    if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32)) throw SchemaError(path + ": corrupt tensor shape");
    t.value.resize(rows, cols);
    in.read(reinterpret_cast<char*>(t.value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.value.size())));
    if (!in) throw SchemaError(path + ": truncated tensor file");
    out.push_back(std::move(t));
  }
  return out;
}

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model config: ") + e.what());
  }
}

void write_manifest(const std::string& dir, const CheckpointManifest& m) {
  std::filesystem::create_directories(dir);
  json metrics = json::object();
  for (const auto& [k, v] : m.metrics) metrics[k] = v;
  json j = {{"format", "stan-checkpoint-1"},
            {"model", config_json(m.model)},
            {"task_names", m.task_names},
            {"seed", m.seed},
            {"config_hash", m.config_hash},
            {"epoch", m.epoch},
            {"best_epoch", m.best_epoch},
            {"best_valid_auc", m.best_valid_auc},
            {"epochs_since_best", m.epochs_since_best},
            {"adam_steps", m.adam_steps},
            {"metrics", metrics}};
  std::ofstream out(dir + "/manifest.json", std::ios::trunc);
  if (!out) throw StanError("cannot write " + dir + "/manifest.json");
  out << j.dump(2) << '\n';
}

CheckpointManifest read_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path);
  try {
    const json j = json::parse(in);
    if (j.at("format") != "stan-checkpoint-1") throw SchemaError(path + ": unsupported format");
    CheckpointManifest m;
    m.model = config_from(j.at("model"));
    m.task_names = j.at("task_names").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.epoch = j.at("epoch").get<int>();
    m.best_epoch = j.at("best_epoch").get<int>();
    m.best_valid_auc = j.at("best_valid_auc").get<double>();
    m.epochs_since_best = j.at("epochs_since_best").get<int>();
    m.adam_steps = j.at("adam_steps").get<std::int64_t>();
    for (const auto& [k, v] : j.at("metrics").items()) m.metrics.emplace_back(k, v.get<double>());
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

void append_params(std::vector<NamedTensor>& out, const ParamStore& params, const std::string& prefix) {
  for (ParamStore::Id id = 0; id < params.size(); ++id) out.push_back({prefix + params.name(id), params.value(id)});
}

void append_tensors(std::vector<NamedTensor>& out, const ParamStore& params, std::span<const Matrix> values,
                    const std::string& prefix) {
  if (values.size() != params.size()) throw ShapeError("tensor list does not match the parameter store");
  for (ParamStore::Id id = 0; id < params.size(); ++id) out.push_back({prefix + params.name(id), values[id]});
}

void restore_tensors(std::span<const NamedTensor> in, const ParamStore& params, std::span<Matrix> values,
                     const std::string& prefix) {
  std::unordered_map<std::string, const Matrix*> by_name;
  for (const auto& t : in) by_name[t.name] = &t.value;
  for (ParamStore::Id id = 0; id < params.size(); ++id) {
    const auto it = by_name.find(prefix + params.name(id));
    if (it == by_name.end()) throw SchemaError("checkpoint lacks tensor " + prefix + params.name(id));
    const Matrix& ref = params.value(id);
    if (it->second->rows() != ref.rows() || it->second->cols() != ref.cols())
      throw SchemaError("checkpoint tensor " + it->first + " has the wrong shape");
    values[id] = *it->second;
  }
}

void save_model(const std::string& dir, const Model& model, const CheckpointManifest& manifest) {
  write_manifest(dir, manifest);
  std::vector<NamedTensor> tensors;
  append_params(tensors, model.params(), "param/");
  write_tensor_file(dir + "/params.bin", tensors);
}

Model load_model(const std::string& dir, CheckpointManifest* manifest_out) {
  CheckpointManifest m = read_manifest(dir);
  Model model(m.model, m.seed);
  const auto tensors = read_tensor_file(dir + "/params.bin");
  ParamStore& ps = model.params();
  std::vector<Matrix> values(ps.size());
  restore_tensors(tensors, ps, values, "param/");
  for (ParamStore::Id id = 0; id < ps.size(); ++id) ps.value(id) = std::move(values[id]);
  if (manifest_out) *manifest_out = std::move(m);
  return model;
}

}  // namespace stan
