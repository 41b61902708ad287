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

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stan/rng.hpp"

namespace stan {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// Gradient buffers shaped like a ParamStore's tensors.
struct Gradients {
  std::vector<Matrix> g;

  void zero();
  void add(const Gradients& other);
  std::size_t num_scalars() const;
};

// Named, ordered collection of learnable tensors. Ids are positions.
class ParamStore {
 public:
  using Id = std::size_t;

  Id add(std::string name, Index rows, Index cols);

  Matrix& value(Id id) { return values_[id]; }
  const Matrix& value(Id id) const { return values_[id]; }
  const std::string& name(Id id) const { return names_[id]; }
  std::size_t size() const { return values_.size(); }
  std::size_t num_scalars() const;
  // Throws LookupError when absent.
  Id find(std::string_view name) const;

  Gradients zeros_like() const;

  void init_uniform(Id id, double bound, Rng& rng);

  // Flat views used by gradient checks.
  double& scalar(std::size_t flat_index);
  std::vector<double> flatten(const Gradients& g) const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore& params, AdamConfig cfg);

  void step(ParamStore& params, const Gradients& grad);

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }

  // Moment state, exposed for checkpointing.
  std::vector<Matrix>& first_moment() { return m_; }
  std::vector<Matrix>& second_moment() { return v_; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace stan
