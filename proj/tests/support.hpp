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

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "stan/data_core.hpp"
#include "stan/model.hpp"
#include "stan/synthgen.hpp"

namespace stan::testing {

// Directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("stan_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small generated dataset for model and trainer tests.
inline GeneratorConfig small_generator(std::size_t users, int days, std::uint64_t seed) {
  GeneratorConfig g = default_generator_config();
  g.num_users = users;
  g.days = days;
  g.seed = seed;
  g.user_vocab = 8;
  g.item_vocab = 8;
  g.user_feature_spread = 2;
  g.num_items = 50;
  g.profiles = default_profiles(g.num_tasks(), g.user_slots, g.user_feature_spread);
  return g;
}

// Two-task dataset with 3 user slots and 2 item slots over tiny vocabularies,
// sized so that a full model stays under 500 parameters.
inline Dataset tiny_dataset(std::size_t users, std::uint64_t seed) {
  GeneratorConfig g = small_generator(users, 3, seed);
  g.task_names = {"ctr", "cvr"};
  g.user_vocab = 3;
  g.item_vocab = 3;
  g.user_feature_spread = 1;
  g.num_items = 9;
  g.item_effect_scale = 1.0;
  g.profiles = default_profiles(g.num_tasks(), g.user_slots, g.user_feature_spread);
  return generate(g).dataset;
}

inline ModelConfig tiny_model_config(const Dataset& ds, Architecture arch) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.num_tasks = ds.num_tasks();
  cfg.user_vocab = ds.user_vocab;
  cfg.item_vocab = ds.item_vocab;
  cfg.user_dim = 4;
  cfg.item_dim = 4;
  cfg.backbone.layers = 1;
  cfg.backbone.specific_experts = 1;
  cfg.backbone.shared_experts = 1;
  cfg.backbone.expert_hidden = {2};
  cfg.backbone.expert_dim = 2;
  return cfg;
}

// Largest relative error between the analytic gradient of the batch loss
// and central finite differences, over every parameter whose name does not
// start with `skip_prefix`. Entries where both are exactly zero (untouched
// embedding rows) are skipped.
inline double max_gradient_error(Model& model, const Batch& batch, const LossSpec& spec,
                                 const std::string& skip_prefix = "", double h = 1e-5) {
  ParamStore& ps = model.params();
  Gradients g = ps.zeros_like();
  loss_and_gradient(model, batch, spec, &g, Exec::kSerial);
  const std::vector<double> flat = ps.flatten(g);
  double worst = 0.0;
  std::size_t offset = 0;
  for (ParamStore::Id id = 0; id < ps.size(); ++id) {
    const auto n = static_cast<std::size_t>(ps.value(id).size());
    const bool skip = !skip_prefix.empty() && ps.name(id).rfind(skip_prefix, 0) == 0;
    for (std::size_t i = offset; i < offset + n && !skip; ++i) {
      double& p = ps.scalar(i);
      const double keep = p;
      p = keep + h;
      const double lp = loss_and_gradient(model, batch, spec, nullptr, Exec::kSerial).total;
      p = keep - h;
      const double lm = loss_and_gradient(model, batch, spec, nullptr, Exec::kSerial).total;
      p = keep;
      const double fd = (lp - lm) / (2 * h);
      const double scale = std::max(std::abs(fd), std::abs(flat[i]));
      if (scale == 0.0) continue;
      worst = std::max(worst, std::abs(fd - flat[i]) / scale);
    }
    offset += n;
  }
  return worst;
}

}  // namespace stan::testing
