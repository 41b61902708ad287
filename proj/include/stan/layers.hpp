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

#include <string>
#include <vector>

#include "stan/tensor.hpp"

namespace stan {

// Logistic function, clamped so the result is always strictly inside (0, 1).
double sigmoid(double x);

// Numerically stable in-place softmax of every row / every column.
void softmax_rows(Matrix& m);
void softmax_cols(Matrix& m);

// Backward of a row softmax: given y = softmax(z) and dL/dy, returns dL/dz.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy);
Matrix softmax_cols_backward(const Matrix& y, const Matrix& dy);

// y = x W + b, x is batch-major (rows are samples). W is in x out.
struct Dense {
  ParamStore::Id weight = 0;
  ParamStore::Id bias = 0;
  Index in = 0;
  Index out = 0;

  static Dense create(ParamStore& ps, const std::string& name, Index in, Index out);
  void init(ParamStore& ps, Rng& rng) const;
};

// Feed-forward stack with ReLU on hidden layers and optionally on the output.
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& name, Index in, const std::vector<Index>& hidden, Index out,
      bool relu_output);

  void init(ParamStore& ps, Rng& rng) const;
  Matrix forward(const ParamStore& ps, const Matrix& x, Cache* cache) const;
  // Accumulates parameter gradients; returns dL/dx.
  Matrix backward(const ParamStore& ps, const Cache& cache, const Matrix& dout, Gradients& grad) const;

  Index in_dim() const { return layers_.front().in; }
  Index out_dim() const { return layers_.back().out; }
  const std::vector<Dense>& layers() const { return layers_; }

 private:
  std::vector<Dense> layers_;
  bool relu_output_ = false;
};

}  // namespace stan
