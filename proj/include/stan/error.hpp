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

#include <stdexcept>
#include <string>

namespace stan {

// Error taxonomy. Each maps to one class of contract violation so callers
// (and the CLI's exit-code mapping) can distinguish them.
class StanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public StanError {
 public:
  using StanError::StanError;
};

class ValidationError : public StanError {
 public:
  using StanError::StanError;
};

class ConfigError : public StanError {
 public:
  using StanError::StanError;
};

class ShapeError : public StanError {
 public:
  using StanError::StanError;
};

class DomainError : public StanError {
 public:
  using StanError::StanError;
};

class LookupError : public StanError {
 public:
  using StanError::StanError;
};

class UndefinedMetricError : public StanError {
 public:
  using StanError::StanError;
};

class DivergenceError : public StanError {
 public:
  using StanError::StanError;
};

}  // namespace stan
