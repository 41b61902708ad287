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

#include "stan/layers.hpp"

#include <cmath>
#include <limits>

#include "stan/error.hpp"

namespace stan {

double sigmoid(double x) {
  static constexpr double kLo = std::numeric_limits<double>::denorm_min();
  static const double kHi = std::nextafter(1.0, 0.0);
  double y;
  if (x >= 0.0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    y = e / (1.0 + e);
  }
  return y < kLo ? kLo : (y > kHi ? kHi : y);
}

void softmax_rows(Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

void softmax_cols(Matrix& m) {
  for (Index c = 0; c < m.cols(); ++c) {
    auto col = m.col(c);
    const double mx = col.maxCoeff();
    col = (col.array() - mx).exp();
    col /= col.sum();
  }
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  Matrix out(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const double dot = y.row(r).dot(dy.row(r));
    out.row(r) = y.row(r).array() * (dy.row(r).array() - dot);
  }
  return out;
}

Matrix softmax_cols_backward(const Matrix& y, const Matrix& dy) {
  Matrix out(y.rows(), y.cols());
  for (Index c = 0; c < y.cols(); ++c) {
    const double dot = y.col(c).dot(dy.col(c));
    out.col(c) = y.col(c).array() * (dy.col(c).array() - dot);
  }
  return out;
}

Dense Dense::create(ParamStore& ps, const std::string& name, Index in, Index out) {
  Dense d;
  d.in = in;
  d.out = out;
  d.weight = ps.add(name + ".w", in, out);
  d.bias = ps.add(name + ".b", 1, out);
  return d;
}

void Dense::init(ParamStore& ps, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  ps.init_uniform(weight, bound, rng);
  ps.init_uniform(bias, bound, rng);
}

Mlp::Mlp(ParamStore& ps, const std::string& name, Index in, const std::vector<Index>& hidden,
         Index out, bool relu_output)
    : relu_output_(relu_output) {
  Index prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] <= 0 || hidden[i] > 1024) throw ConfigError("hidden width must be in [1, 1024]");
    layers_.push_back(Dense::create(ps, name + ".l" + std::to_string(i), prev, hidden[i]));
    prev = hidden[i];
  }
  layers_.push_back(Dense::create(ps, name + ".l" + std::to_string(hidden.size()), prev, out));
}

void Mlp::init(ParamStore& ps, Rng& rng) const {
  for (const auto& l : layers_) l.init(ps, rng);
}

Matrix Mlp::forward(const ParamStore& ps, const Matrix& x, Cache* cache) const {
  if (x.cols() != in_dim()) throw ShapeError("mlp input width mismatch");
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Dense& l = layers_[i];
    Matrix z = h * ps.value(l.weight);
    z.rowwise() += ps.value(l.bias).row(0);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    const bool relu = i + 1 < layers_.size() || relu_output_;
    h = relu ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  return h;
}

Matrix Mlp::backward(const ParamStore& ps, const Cache& cache, const Matrix& dout,
                     Gradients& grad) const {
  Matrix d = dout;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Dense& l = layers_[i];
    const bool relu = i + 1 < layers_.size() || relu_output_;
    if (relu) d = d.cwiseProduct(Matrix((cache.pre[i].array() > 0.0).cast<double>()));
    grad.g[l.weight].noalias() += cache.inputs[i].transpose() * d;
    grad.g[l.bias] += d.colwise().sum();
    d = d * ps.value(l.weight).transpose();
  }
  return d;
}

}  // namespace stan
