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

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pca/errors.hpp"
#include "pca/rng.hpp"

namespace pca {

// Row-major throughout: a feature matrix stores one token per row, and the
// on-disk tensor container is row-major as well.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
bool all_finite(const Mat<T>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) return false;
  }
  return true;
}

/// Checks the feature-matrix invariants: at least one token, at least one
/// feature dimension, all entries finite.
template <typename T>
void check_feature_matrix(const Mat<T>& m, const std::string& what) {
  if (m.rows() < 1 || m.cols() < 1) {
    throw InvalidInputError(what + ": feature matrix must be at least 1x1");
  }
  if (!all_finite(m)) {
    throw InvalidInputError(what + ": feature matrix has non-finite entries");
  }
}

/// Matrix with every entry drawn from a standard normal, scaled by `scale`.
template <typename T>
Mat<T> random_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                     double scale = 1.0) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = static_cast<T>(rng.normal() * scale);
    }
  }
  return m;
}

/// Fan-in scaled init for projection weights: N(0, 1/fan_in).
template <typename T>
Mat<T> random_projection(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return random_normal<T>(rows, cols, rng, 1.0 / std::sqrt(static_cast<double>(rows)));
}

/// Named, ordered parameter collection. Order is the serialization and
/// optimizer iteration order, so it must be deterministic per model build.
template <typename T>
class ParamStore {
 public:
  struct Item {
    std::string name;
    Mat<T> value;
  };

  Mat<T>& add(const std::string& name, Mat<T> value) {
    for (const auto& item : items_) {
      if (item.name == name) {
        throw ConfigError("duplicate parameter name: " + name);
      }
    }
    items_.push_back(Item{name, std::move(value)});
    return items_.back().value;
  }

  bool has(const std::string& name) const {
    for (const auto& item : items_) {
      if (item.name == name) return true;
    }
    return false;
  }

  Mat<T>& at(const std::string& name) {
    for (auto& item : items_) {
      if (item.name == name) return item.value;
    }
    throw ConfigError("unknown parameter: " + name);
  }

  const Mat<T>& at(const std::string& name) const {
    for (const auto& item : items_) {
      if (item.name == name) return item.value;
    }
    throw ConfigError("unknown parameter: " + name);
  }

  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& item : items_) n += static_cast<size_t>(item.value.size());
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& item : items_) {
      out.add(item.name, item.value.template cast<U>());
    }
    return out;
  }

 private:
  std::vector<Item> items_;
};

}  // namespace pca
