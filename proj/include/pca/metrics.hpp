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

// Evaluation metrics. Conventions pinned here: micro-F1 binarizes at >= the
// threshold and pools confusion counts over all (sample, class) cells;
// ranking ties break toward the lower class/sample index; classes without
// positives are excluded from the mAP mean.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "pca/errors.hpp"
#include "pca/matrix.hpp"

namespace pca::harness {

struct EvalReport {
  double micro_f1 = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double map = 0.0;
  std::vector<double> per_class_ap;  // NaN for classes with no positives
};

/// Pooled-confusion F1: binarize scores at >= bin_threshold, count TP/FP/FN
/// over every cell, F1 = 2TP / (2TP + FP + FN). Defined as 1 when all three
/// counts are zero.
inline double micro_f1(const Mat<double>& scores, const Mat<double>& targets,
                       double bin_threshold) {
  if (scores.rows() != targets.rows() || scores.cols() != targets.cols()) {
    throw ShapeError("micro_f1: score and target shapes differ");
  }
  long tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      const bool pred = scores(i, j) >= bin_threshold;
      const bool truth = targets(i, j) >= 0.5;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
  }
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

/// Fraction of samples whose true class ranks among the k highest scores.
/// Ties rank the lower class index first.
inline double top_k_accuracy(const Mat<double>& scores,
                             const std::vector<int>& targets, int k) {
  if (k < 1 || k > scores.cols()) {
    throw ConfigError("top_k_accuracy: k must be in [1, class_count]");
  }
  if (static_cast<Eigen::Index>(targets.size()) != scores.rows()) {
    throw ShapeError("top_k_accuracy: one target per sample required");
  }
  size_t hits = 0;
  std::vector<Eigen::Index> order(static_cast<size_t>(scores.cols()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return scores(i, a) > scores(i, b);
    });
    const int target = targets[static_cast<size_t>(i)];
    if (target < 0 || target >= scores.cols()) {
      throw InvalidInputError("top_k_accuracy: target class out of range");
    }
    for (int r = 0; r < k; ++r) {
      if (order[static_cast<size_t>(r)] == target) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

struct MeanAveragePrecision {
  double map = 0.0;
  std::vector<double> per_class_ap;
};

/// Per class: rank samples by descending score (ties by sample index), AP is
/// the mean of precision at each positive. Classes without positives carry
/// NaN in the vector and are excluded from the mean.
inline MeanAveragePrecision mean_average_precision(const Mat<double>& scores,
                                                   const Mat<double>& targets) {
  if (scores.rows() != targets.rows() || scores.cols() != targets.cols()) {
    throw ShapeError("mean_average_precision: score and target shapes differ");
  }
  MeanAveragePrecision out;
  out.per_class_ap.assign(static_cast<size_t>(scores.cols()),
                          std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int counted = 0;
  std::vector<Eigen::Index> order(static_cast<size_t>(scores.rows()));
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    size_t positives = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      positives += targets(i, c) >= 0.5;
    }
    if (positives == 0) continue;
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return scores(a, c) > scores(b, c);
    });
    double hits = 0.0, ap = 0.0;
    for (size_t r = 0; r < order.size(); ++r) {
      if (targets(order[r], c) >= 0.5) {
        hits += 1.0;
        ap += hits / static_cast<double>(r + 1);
      }
    }
    ap /= static_cast<double>(positives);
    out.per_class_ap[static_cast<size_t>(c)] = ap;
    sum += ap;
    ++counted;
  }
  if (counted == 0) {
    throw InvalidInputError(
        "mean_average_precision: undefined, no class has positives");
  }
  out.map = sum / counted;
  return out;
}

}  // namespace pca::harness
