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

#include <cmath>
#include <string>
#include <vector>

#include "pca/backbone.hpp"
#include "pca/config.hpp"
#include "pca/knowledge_cache.hpp"
#include "pca/metrics.hpp"
#include "pca/percept.hpp"
#include "pca/synth.hpp"

namespace pca::harness {

/// Builds the forward-pass knowledge view for one sample under the selected
/// knowledge mode. Modalities outside the mode are explicitly absent.
inline backbone::KnowledgeInput<float> knowledge_view(const KnowledgeBundle& bundle,
                                                      KnowledgeMode mode) {
  backbone::KnowledgeInput<float> k;
  if (mode == KnowledgeMode::kVisual || mode == KnowledgeMode::kBoth) {
    k.f_v = bundle.f_v;
  }
  if (mode == KnowledgeMode::kTextual || mode == KnowledgeMode::kBoth) {
    k.f_t = bundle.f_t;
  }
  return k;
}

struct EvalOutput {
  EvalReport report;
  Mat<double> scores;   // samples x classes, softmax or logistic
  Mat<double> targets;  // samples x classes, 0/1
};

/// Deterministic eval-mode pass over one split with the selected knowledge
/// modalities; emits metrics plus the raw score matrix they were computed
/// from.
inline EvalOutput evaluate_model(const backbone::ModelState<float>& model,
                                 const Dataset& dataset,
                                 const KnowledgeCacheReader& cache,
                                 const std::string& split_name,
                                 KnowledgeMode knowledge_mode) {
  const auto& ids = dataset.split(split_name);
  if (ids.empty()) {
    throw InvalidInputError("evaluate: split '" + split_name + "' is empty");
  }
  const int classes = model.cfg.class_count;
  EvalOutput out;
  out.scores = Mat<double>(static_cast<Eigen::Index>(ids.size()), classes);
  out.targets = Mat<double>(static_cast<Eigen::Index>(ids.size()), classes);

  std::vector<int> target_index;
  for (size_t i = 0; i < ids.size(); ++i) {
    KnowledgeBundle bundle = cache.bundle(ids[i]);
    auto knowledge = knowledge_view(bundle, knowledge_mode);
    Mat<float> tokens = percept::clip_tokens<float>(dataset.clip(ids[i]));
    Mat<float> logits = backbone::forward(model, tokens, &knowledge,
                                          backbone::Mode::kEval, 0);
    if (model.cfg.label_mode == chat::LabelMode::kSingle) {
      Mat<float> soft = nn::softmax_rows(logits);
      for (int c = 0; c < classes; ++c) {
        out.scores(static_cast<Eigen::Index>(i), c) = soft(0, c);
      }
    } else {
      for (int c = 0; c < classes; ++c) {
        out.scores(static_cast<Eigen::Index>(i), c) =
            1.0 / (1.0 + std::exp(-static_cast<double>(logits(0, c))));
      }
    }
    const auto& label = bundle.label;
    if (static_cast<int>(label.size()) != classes) {
      throw ShapeError("evaluate: cached label width mismatch for " + ids[i]);
    }
    for (int c = 0; c < classes; ++c) {
      out.targets(static_cast<Eigen::Index>(i), c) =
          label[static_cast<size_t>(c)] >= 0.5f ? 1.0 : 0.0;
    }
    if (model.cfg.label_mode == chat::LabelMode::kSingle) {
      target_index.push_back(backbone::one_hot_index(label));
    }
  }

  out.report.micro_f1 = micro_f1(out.scores, out.targets, 0.5);
  auto ap = mean_average_precision(out.scores, out.targets);
  out.report.map = ap.map;
  out.report.per_class_ap = ap.per_class_ap;
  if (model.cfg.label_mode == chat::LabelMode::kSingle) {
    out.report.top1 = top_k_accuracy(out.scores, target_index, 1);
    out.report.top5 = top_k_accuracy(out.scores, target_index,
                                     std::min(5, classes));
  } else {
    // Multi-label: precision of the top-ranked prediction(s).
    auto hit_at = [&](int k) {
      size_t hits = 0;
      std::vector<Eigen::Index> order(static_cast<size_t>(classes));
      for (Eigen::Index i = 0; i < out.scores.rows(); ++i) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) {
                           return out.scores(i, a) > out.scores(i, b);
                         });
        for (int r = 0; r < k; ++r) {
          if (out.targets(i, order[static_cast<size_t>(r)]) >= 0.5) {
            ++hits;
            break;
          }
        }
      }
      return static_cast<double>(hits) / static_cast<double>(out.scores.rows());
    };
    out.report.top1 = hit_at(1);
    out.report.top5 = hit_at(std::min(5, classes));
  }
  return out;
}

}  // namespace pca::harness
