/*
 * Copyright 2026 The PCA Pipeline Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace pca {

/// Malformed values: non-finite inputs, empty vectors, out-of-range scalars.
class InvalidInputError : public std::runtime_error {
 public:
  explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Matrix/tensor dimensions incompatible with an operation or parameter set.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or inconsistent configuration (bad plan indices, unknown keys, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A file-backed provider was asked for something it does not hold.
class MissingAssetError : public std::runtime_error {
 public:
  explicit MissingAssetError(const std::string& msg) : std::runtime_error(msg) {}
};

/// NaN loss, failed gradient check, or other numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A function required to be deterministic returned differing values.
class DeterminismError : public std::runtime_error {
 public:
  explicit DeterminismError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller violated a documented precondition that is checkable at runtime.
class ContractViolationError : public std::runtime_error {
 public:
  explicit ContractViolationError(const std::string& msg)
      : std::runtime_error(msg) {}
};

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingAsset = 3;
inline constexpr int kExitNumerical = 4;

}  // namespace pca
