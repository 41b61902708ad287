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

#include "stan/tensor.hpp"

#include <cmath>

#include "stan/error.hpp"

namespace stan {

void Gradients::zero() {
  for (auto& m : g) m.setZero();
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += other.g[i];
}

std::size_t Gradients::num_scalars() const {
  std::size_t n = 0;
  for (const auto& m : g) n += static_cast<std::size_t>(m.size());
  return n;
}

ParamStore::Id ParamStore::add(std::string name, Index rows, Index cols) {
  for (const auto& n : names_)
    if (n == name) throw ConfigError("duplicate parameter name '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(Matrix::Zero(rows, cols));
  return values_.size() - 1;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

ParamStore::Id ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw LookupError("no parameter named '" + std::string(name) + "'");
}

Gradients ParamStore::zeros_like() const {
  Gradients out;
  out.g.reserve(values_.size());
  for (const auto& m : values_) out.g.push_back(Matrix::Zero(m.rows(), m.cols()));
  return out;
}

void ParamStore::init_uniform(Id id, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix& m = values_[id];
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

double& ParamStore::scalar(std::size_t flat_index) {
  for (auto& m : values_) {
    const auto n = static_cast<std::size_t>(m.size());
    if (flat_index < n) return m.data()[flat_index];
    flat_index -= n;
  }
  throw LookupError("flat parameter index out of range");
}

std::vector<double> ParamStore::flatten(const Gradients& g) const {
  std::vector<double> out;
  out.reserve(g.num_scalars());
  for (const auto& m : g.g) out.insert(out.end(), m.data(), m.data() + m.size());
  return out;
}

Adam::Adam(const ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.value(i);
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(ParamStore& params, const Gradients& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grad.g[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    params.value(i).array() -=
        cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

}  // namespace stan
