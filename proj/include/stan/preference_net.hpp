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

#include <span>
#include <string>
#include <vector>

#include "stan/layers.hpp"

namespace stan {

// Axis over which the task attention softmax normalizes U' W^k.
//   kFeature:   over the d1 feature slots, separately per embedding column
//   kEmbedding: over the d2 embedding columns, separately per feature slot
enum class AttentionAxis { kFeature, kEmbedding };

// U' = softmax_rows((1/sqrt(d1)) (W_Q U)(W_K U)^T) (W_V U).
Matrix self_attention(const Matrix& u, const Matrix& wq, const Matrix& wk, const Matrix& wv);

// s = U' ⊙ softmax(U' W^k) with the softmax taken along `axis`.
Matrix task_attention(const Matrix& u_prime, const Matrix& wk, AttentionAxis axis = AttentionAxis::kFeature);

// sigmoid(<head_w, vec(s)> + head_b), vec row-major.
double preference_predict(const Matrix& s, const RowVector& head_w, double head_b);

struct PreferenceLoss {
  double value = 0.0;
  std::size_t used = 0;
  bool all_masked = false;
};

// Sum over unmasked i of (l_i - y~_i)^2. `usable[i] == 0` excludes record i.
PreferenceLoss preference_loss(std::span<const double> predicted, std::span<const double> targets,
                               std::span<const std::uint8_t> usable);

// Per-user task-preference network operating on one d1 x d2 user feature matrix.
class PreferenceNet {
 public:
  struct Cache {
    Matrix u, q, k, v, attn, u_prime;
    std::vector<Matrix> task_attn;  // A^k
    std::vector<Matrix> s;          // s^k
    std::vector<double> y;          // y~^k
  };

  PreferenceNet() = default;
  PreferenceNet(ParamStore& ps, const std::string& prefix, Index d1, Index d2, std::size_t num_tasks,
                AttentionAxis axis);

  void init(ParamStore& ps, Rng& rng) const;

  // Fills cache (including y~ for every task).
  void forward(const ParamStore& ps, const Matrix& u, Cache& cache) const;
  // dy: dL/dy~ per task. Accumulates parameter gradients; returns dL/dU.
  Matrix backward(const ParamStore& ps, const Cache& cache, std::span<const double> dy,
                  Gradients& grad) const;

  Index d1() const { return d1_; }
  Index d2() const { return d2_; }
  std::size_t num_tasks() const { return task_w_.size(); }
  AttentionAxis axis() const { return axis_; }

  ParamStore::Id wq, wk, wv;

 private:
  Index d1_ = 0, d2_ = 0;
  AttentionAxis axis_ = AttentionAxis::kFeature;
  std::vector<ParamStore::Id> task_w_, head_w_, head_b_;
};

}  // namespace stan
