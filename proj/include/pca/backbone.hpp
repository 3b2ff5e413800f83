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

// A small trainable pre-norm transformer classifier over clip-derived tokens,
// with configurable adapter insertion sites. Backbone, head and adapter
// parameters are drawn from independent seed streams, so adding adapters
// never shifts the backbone initialization.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include "pca/adapt.hpp"
#include "pca/chat.hpp"
#include "pca/errors.hpp"
#include "pca/matrix.hpp"
#include "pca/nn.hpp"
#include "pca/tape.hpp"

namespace pca::backbone {

enum class Mode { kTrain, kEval };

struct BackboneConfig {
  int depth = 6;
  Eigen::Index d_model = 64;
  int n_heads = 4;
  double head_dropout = 0.5;
  chat::LabelMode label_mode = chat::LabelMode::kSingle;
  int class_count = 0;
  Eigen::Index input_dim = 3;  // width of one clip token (per-channel means)
  int token_count = 8;         // frames per clip

  Eigen::Index ffn_inner() const { return 4 * d_model; }

  void validate() const {
    if (depth < 1) throw ConfigError("backbone: depth must be >= 1");
    if (d_model % n_heads != 0) {
      throw ConfigError("backbone: d_model not divisible by n_heads");
    }
    if (!(head_dropout >= 0.0 && head_dropout < 1.0)) {
      throw ConfigError("backbone: head_dropout must be in [0,1)");
    }
    if (class_count < 1) throw ConfigError("backbone: class_count must be >= 1");
    if (input_dim < 1 || token_count < 1) {
      throw ConfigError("backbone: input_dim and token_count must be >= 1");
    }
  }
};

/// Which blocks receive adapted visual knowledge, and which of those also
/// receive textual knowledge.
struct InsertionPlan {
  std::vector<int> visual_sites;
  std::vector<int> textual_sites;

  int block_num() const { return static_cast<int>(visual_sites.size()); }

  void validate(int depth) const {
    std::set<int> visual(visual_sites.begin(), visual_sites.end());
    if (visual.size() != visual_sites.size()) {
      throw ConfigError("insertion plan: duplicate visual sites");
    }
    for (int s : visual_sites) {
      if (s < 0 || s >= depth) {
        throw ConfigError("insertion plan: site " + std::to_string(s) +
                          " outside [0, depth)");
      }
    }
    for (int s : textual_sites) {
      if (!visual.count(s)) {
        throw ConfigError("insertion plan: textual site " + std::to_string(s) +
                          " is not a visual site");
      }
    }
  }

  bool is_textual_site(int block) const {
    return std::find(textual_sites.begin(), textual_sites.end(), block) !=
           textual_sites.end();
  }

  /// block_num sites spread evenly over the last half of the network;
  /// textual knowledge only at the last site.
  static InsertionPlan default_plan(int depth, int block_num,
                                    bool with_textual = true) {
    InsertionPlan plan;
    if (block_num <= 0) return plan;
    if (block_num > depth) {
      throw ConfigError("insertion plan: block_num exceeds depth");
    }
    int lo = depth / 2;
    if (block_num > depth - lo) lo = depth - block_num;
    if (block_num == 1) {
      plan.visual_sites = {depth - 1};
    } else {
      for (int i = 0; i < block_num; ++i) {
        double pos = lo + static_cast<double>(i) * (depth - 1 - lo) /
                              (block_num - 1);
        plan.visual_sites.push_back(static_cast<int>(std::lround(pos)));
      }
    }
    if (with_textual) plan.textual_sites = {depth - 1};
    return plan;
  }
};

/// All learnable state plus the structural configuration needed to rebuild
/// the forward graph.
template <typename T>
struct ModelState {
  BackboneConfig cfg;
  InsertionPlan plan;
  adapt::StructureVariant variant = adapt::StructureVariant::kAdapt;
  adapt::AdapterDims adapter_dims;
  ParamStore<T> params;
  uint64_t seed = 0;
  int64_t step = 0;
};

inline std::string site_prefix(int block) {
  return "adapter.site" + std::to_string(block);
}

template <typename T>
ModelState<T> build_model(const BackboneConfig& cfg, const InsertionPlan& plan,
                          const adapt::AdapterDims& adapter_dims,
                          adapt::StructureVariant variant, uint64_t seed) {
  cfg.validate();
  plan.validate(cfg.depth);

  ModelState<T> model;
  model.cfg = cfg;
  model.plan = plan;
  model.variant = variant;
  model.adapter_dims = adapter_dims;
  model.adapter_dims.block_dim = cfg.d_model;
  model.seed = seed;

  Rng bb(derive_seed(seed, "backbone"));
  model.params.add("backbone.embed",
                   random_projection<T>(cfg.input_dim, cfg.d_model, bb));
  model.params.add("backbone.pos",
                   random_normal<T>(cfg.token_count, cfg.d_model, bb, 0.5));
  for (int b = 0; b < cfg.depth; ++b) {
    std::string prefix = "backbone.block" + std::to_string(b);
    auto attn = nn::make_attention_params<T>(cfg.d_model, cfg.d_model,
                                             cfg.d_model, cfg.n_heads, bb);
    adapt::detail::register_attention(model.params, prefix + ".attn", attn);
    auto ffn = nn::make_feed_forward_params<T>(cfg.d_model, cfg.ffn_inner(),
                                               cfg.d_model, bb);
    adapt::detail::register_ffn(model.params, prefix + ".ffn", ffn);
  }

  Rng head(derive_seed(seed, "head"));
  model.params.add("head.w",
                   random_projection<T>(cfg.d_model, cfg.class_count, head));
  model.params.add("head.b", Mat<T>::Zero(1, cfg.class_count));

  for (int site : plan.visual_sites) {
    auto p = adapt::make_adapt_params<T>(
        variant, model.adapter_dims, plan.is_textual_site(site),
        derive_seed(seed, "adapter", static_cast<uint64_t>(site)));
    adapt::register_adapt_params(model.params, site_prefix(site), p);
  }
  return model;
}

/// External knowledge handed to a forward pass. A default-constructed value
/// explicitly marks knowledge as absent; the forward then runs with the
/// knowledge terms omitted.
template <typename T>
struct KnowledgeInput {
  std::optional<Mat<T>> f_v;
  std::optional<Mat<T>> f_t;

  static KnowledgeInput absent() { return KnowledgeInput{}; }
};

template <typename T>
adapt::LeafMap register_leaves(Tape<T>& tape, const ParamStore<T>& params) {
  adapt::LeafMap leaves;
  for (const auto& item : params.items()) {
    leaves[item.name] = tape.leaf(item.value);
  }
  return leaves;
}

/// Builds the forward graph for one clip on an existing tape and returns the
/// logits node (1 x class_count). Dropout is applied only in train mode,
/// seeded by dropout_seed. In eval mode zero-gate adapter terms are skipped,
/// so an all-zero-gate model runs the exact baseline op sequence.
template <typename T>
int forward_graph(Tape<T>& tape, const adapt::LeafMap& leaves,
                  const ModelState<T>& model, const Mat<T>& clip_tokens,
                  const KnowledgeInput<std::type_identity_t<T>>* knowledge,
                  Mode mode, uint64_t dropout_seed) {
  const BackboneConfig& cfg = model.cfg;
  if (clip_tokens.rows() != cfg.token_count || clip_tokens.cols() != cfg.input_dim) {
    throw ShapeError("forward: clip tokens must be token_count x input_dim");
  }
  if (!model.plan.visual_sites.empty() && knowledge == nullptr) {
    throw MissingAssetError(
        "forward: the insertion plan expects knowledge, but none was provided; "
        "pass KnowledgeInput::absent() to run without it");
  }

  const T eps = static_cast<T>(adapt::kLayerNormEps);
  int f_v = -1;
  int f_t = -1;
  if (knowledge != nullptr) {
    if (knowledge->f_v.has_value()) f_v = tape.leaf(*knowledge->f_v);
    if (knowledge->f_t.has_value()) f_t = tape.leaf(*knowledge->f_t);
  }

  int x = tape.add(tape.matmul(tape.leaf(clip_tokens), leaves.at("backbone.embed")),
                   leaves.at("backbone.pos"));
  for (int b = 0; b < cfg.depth; ++b) {
    std::string prefix = "backbone.block" + std::to_string(b);
    int h = tape.layer_norm_rows(x, eps);
    x = tape.add(x, tape_attention(tape, h, h,
                                   adapt::detail::bind_attention(
                                       leaves, prefix + ".attn", cfg.n_heads)));
    x = tape.add(x, tape_feed_forward(tape, tape.layer_norm_rows(x, eps),
                                      adapt::detail::bind_ffn(leaves,
                                                              prefix + ".ffn")));
    if (std::find(model.plan.visual_sites.begin(), model.plan.visual_sites.end(),
                  b) != model.plan.visual_sites.end()) {
      const bool textual_here = model.plan.is_textual_site(b);
      x = adapt::tape_variant_forward(
          tape, leaves, site_prefix(b), model.variant, model.adapter_dims,
          textual_here, x, f_v, textual_here ? f_t : -1,
          /*skip_zero_gates=*/mode == Mode::kEval);
    }
  }
  x = tape.layer_norm_rows(x, eps);
  int pooled = tape.mean_pool_rows(x);
  if (mode == Mode::kTrain && cfg.head_dropout > 0.0) {
    Rng rng(dropout_seed);
    Mat<T> mask(1, cfg.d_model);
    const double p = cfg.head_dropout;
    for (Eigen::Index j = 0; j < cfg.d_model; ++j) {
      mask(0, j) = rng.uniform() > p ? static_cast<T>(1.0 / (1.0 - p)) : T(0);
    }
    pooled = tape.hadamard_const(pooled, mask);
  }
  return tape.add_rowvec(tape.matmul(pooled, leaves.at("head.w")),
                         leaves.at("head.b"));
}

/// Convenience forward pass on a private tape; returns the logits row.
template <typename T>
Mat<T> forward(const ModelState<T>& model, const Mat<T>& clip_tokens,
               const KnowledgeInput<std::type_identity_t<T>>* knowledge,
               Mode mode, uint64_t seed) {
  Tape<T> tape;
  auto leaves = register_leaves(tape, model.params);
  int logits = forward_graph(tape, leaves, model, clip_tokens, knowledge, mode, seed);
  return tape.value(logits);
}

/// Scalar loss: cross entropy with log-softmax for single-label targets
/// (one-hot), mean binary cross entropy with logits for multi-label targets.
template <typename T>
T loss(const Mat<T>& logits, const std::vector<float>& target,
       chat::LabelMode label_mode) {
  if (logits.rows() != 1) {
    throw InvalidInputError("loss: expected a single logits row");
  }
  if (static_cast<Eigen::Index>(target.size()) != logits.cols()) {
    throw InvalidInputError("loss: target length must equal class count");
  }
  if (label_mode == chat::LabelMode::kSingle) {
    int hot = -1;
    for (size_t j = 0; j < target.size(); ++j) {
      if (target[j] == 1.0f) {
        if (hot >= 0) throw InvalidInputError("loss: one-hot target required");
        hot = static_cast<int>(j);
      } else if (target[j] != 0.0f) {
        throw InvalidInputError("loss: one-hot target required");
      }
    }
    if (hot < 0) throw InvalidInputError("loss: one-hot target required");
    T zmax = logits.row(0).maxCoeff();
    T lse = T(0);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      lse += std::exp(logits(0, j) - zmax);
    }
    return std::log(lse) + zmax - logits(0, hot);
  }
  T total = T(0);
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    float tj = target[static_cast<size_t>(j)];
    if (tj != 0.0f && tj != 1.0f) {
      throw InvalidInputError("loss: multi-label targets must be 0 or 1");
    }
    T z = logits(0, j);
    total += std::max(z, T(0)) - z * static_cast<T>(tj) +
             std::log1p(std::exp(-std::abs(z)));
  }
  return total / static_cast<T>(logits.cols());
}

/// Index of the single 1 in a one-hot target.
inline int one_hot_index(const std::vector<float>& target) {
  int hot = -1;
  for (size_t j = 0; j < target.size(); ++j) {
    if (target[j] == 1.0f) {
      if (hot >= 0) throw InvalidInputError("target is not one-hot");
      hot = static_cast<int>(j);
    }
  }
  if (hot < 0) throw InvalidInputError("target is not one-hot");
  return hot;
}

/// Loss node for one sample on an existing tape.
template <typename T>
int loss_graph(Tape<T>& tape, int logits, const std::vector<float>& target,
               chat::LabelMode label_mode) {
  if (label_mode == chat::LabelMode::kSingle) {
    return tape.cross_entropy(logits, {one_hot_index(target)});
  }
  Mat<T> t(1, static_cast<Eigen::Index>(target.size()));
  for (size_t j = 0; j < target.size(); ++j) {
    t(0, static_cast<Eigen::Index>(j)) = static_cast<T>(target[j]);
  }
  return tape.binary_cross_entropy(logits, t);
}

}  // namespace pca::backbone
