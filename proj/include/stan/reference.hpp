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

#include <vector>

#include "stan/model.hpp"

// Straight-line, per-sample, loop-only evaluation of a Model. It shares no
// arithmetic with the batched kernels and exists to check them.
namespace stan::reference {

struct SampleOutput {
  std::vector<double> y_hat;  // backbone prediction per task
  std::vector<double> y_pref; // preference prediction per task (STAN only)
};

SampleOutput forward(const Model& model, const InteractionRecord& r, Stage stage);

// Same quantity as loss_and_gradient(...).total, computed serially per sample.
LossParts batch_loss(const Model& model, const Batch& batch, const LossSpec& spec);

}  // namespace stan::reference
