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
#include <string_view>
#include <utility>
#include <vector>

#include "stan/model.hpp"
#include "stan/tensor.hpp"

namespace stan {

// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

struct NamedTensor {
  std::string name;
  Matrix value;
};

// Binary container of named double tensors (little-endian host layout).
void write_tensor_file(const std::string& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensor_file(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct CheckpointManifest {
  ModelConfig model;
  std::vector<std::string> task_names;
  std::uint64_t seed = 0;
  std::string config_hash;
  int epoch = 0;  // completed epochs
  int best_epoch = -1;
  double best_valid_auc = 0.0;
  int epochs_since_best = 0;
  std::int64_t adam_steps = 0;
  std::vector<std::pair<std::string, double>> metrics;
};

void write_manifest(const std::string& dir, const CheckpointManifest& m);
CheckpointManifest read_manifest(const std::string& dir);

// Tensors of `params` under `prefix` + name.
void append_params(std::vector<NamedTensor>& out, const ParamStore& params, const std::string& prefix);
void append_tensors(std::vector<NamedTensor>& out, const ParamStore& params, std::span<const Matrix> values,
                    const std::string& prefix);
// Copies `prefix` + name tensors into `values` (aligned with `params`).
// Throws SchemaError on a missing tensor or shape mismatch.
void restore_tensors(std::span<const NamedTensor> in, const ParamStore& params, std::span<Matrix> values,
                     const std::string& prefix);

// Saves the manifest and model parameters into `dir` (created if needed).
void save_model(const std::string& dir, const Model& model, const CheckpointManifest& manifest);
// Rebuilds the model described by the manifest in `dir` and loads its parameters.
Model load_model(const std::string& dir, CheckpointManifest* manifest_out = nullptr);

}  // namespace stan
