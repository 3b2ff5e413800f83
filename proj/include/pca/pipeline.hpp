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

// The offline percept+chat pass: for every sample, enhance the clip, extract
// visual knowledge, route between prompt expansion and caption lookup, encode
// the text, and persist the resulting bundle in the knowledge cache.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "pca/chat.hpp"
#include "pca/config.hpp"
#include "pca/errors.hpp"
#include "pca/knowledge_cache.hpp"
#include "pca/percept.hpp"
#include "pca/synth.hpp"

namespace pca::harness {

struct Providers {
  percept::EnhancerSpec enhancer;
  std::unique_ptr<percept::VisualExtractor> extractor;
  std::unique_ptr<chat::TextEncoder> encoder;
  std::unique_ptr<chat::CaptionProvider> captions;
  std::map<std::string, std::string> explanations;
  bool has_explanations = false;
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::string& maybe_relative) {
  std::filesystem::path p(maybe_relative);
  return p.is_absolute() ? p : base / p;
}

}  // namespace detail

inline Providers make_providers(const ExperimentConfig& cfg, const Dataset& dataset) {
  Providers p;
  switch (cfg.percept.enhancer_kind) {
    case percept::EnhancerKind::kIdentity:
      p.enhancer = percept::EnhancerSpec::identity();
      break;
    case percept::EnhancerKind::kGamma:
      p.enhancer = percept::EnhancerSpec::gamma(cfg.percept.gamma_rate);
      break;
    case percept::EnhancerKind::kMaskFusion: {
      std::string src = cfg.percept.enhancer_source.empty()
                            ? "masks"
                            : cfg.percept.enhancer_source;
      p.enhancer =
          percept::EnhancerSpec::mask_fusion(detail::resolve(dataset.dir, src));
      break;
    }
    case percept::EnhancerKind::kExternal:
      p.enhancer = percept::EnhancerSpec::external(
          detail::resolve(dataset.dir, cfg.percept.enhancer_source));
      break;
  }

  if (cfg.percept.extractor_kind == ExtractorKind::kMock) {
    p.extractor = std::make_unique<percept::MockVisualExtractor>(
        cfg.percept.extractor_seed, cfg.percept.feature_dim,
        cfg.backbone.class_count, cfg.percept.head_gain);
  } else {
    p.extractor = std::make_unique<percept::FileVisualExtractor>(
        detail::resolve(dataset.dir, cfg.percept.extractor_cache));
  }

  if (cfg.chat.encoder_kind == EncoderKind::kMock) {
    p.encoder = std::make_unique<chat::MockTextEncoder>(
        cfg.chat.encoder_seed, cfg.chat.text_dim, cfg.train.max_text_tokens);
  } else {
    p.encoder = std::make_unique<chat::FileTextEncoder>(
        detail::resolve(dataset.dir, cfg.chat.encoder_cache));
  }

  p.captions = std::make_unique<chat::FileCaptionProvider>(
      detail::resolve(dataset.dir, cfg.chat.captions_file));

  auto expl_path = detail::resolve(dataset.dir, cfg.chat.explanations_file);
  if (std::filesystem::exists(expl_path)) {
    std::ifstream f(expl_path);
    nlohmann::json j = nlohmann::json::parse(f);
    for (auto it = j.begin(); it != j.end(); ++it) {
      p.explanations[it.key()] = it.value().get<std::string>();
    }
    p.has_explanations = true;
  }
  return p;
}

/// Runs percept+chat for one sample and assembles its bundle. Multi-label
/// prompt-path samples use summarized label explanations when an explanation
/// file is available, otherwise the prompt template.
inline KnowledgeBundle compute_bundle(const ExperimentConfig& cfg,
                                      const Dataset& dataset,
                                      const Providers& providers,
                                      const std::string& sample_id) {
  percept::VideoClip raw = dataset.clip(sample_id);
  percept::VideoClip enhanced = percept::enhance(raw, providers.enhancer);
  percept::PerceptOutput visual = percept::extract_visual_knowledge(
      enhanced, *providers.extractor, cfg.train.label_mode);

  std::vector<double> scores(visual.s.begin(), visual.s.end());
  chat::RouteDecision route = chat::route_knowledge(scores, cfg.train.sigma);

  std::string text;
  if (route.path == chat::RoutePath::kPromptPath) {
    if (cfg.train.label_mode == chat::LabelMode::kMulti &&
        providers.has_explanations) {
      auto idxs = chat::candidate_labels(scores, cfg.train.sigma,
                                         cfg.train.label_mode);
      std::vector<std::string> names;
      for (size_t i : idxs) names.push_back(dataset.meta.label_names.at(i));
      text = chat::summarize_explanations(names, providers.explanations);
    } else {
      text = chat::expand_prompt(scores, cfg.train.sigma,
                                 dataset.meta.label_names, cfg.chat.prompt,
                                 cfg.train.label_mode);
    }
  } else {
    text = chat::get_caption(sample_id, *providers.captions);
  }

  KnowledgeBundle bundle;
  bundle.sample_id = sample_id;
  bundle.f_v = visual.f_v;
  bundle.s = visual.s;
  bundle.text = text;
  bundle.f_t = chat::encode_text(text, *providers.encoder);
  bundle.route = route;
  bundle.label = dataset.label(sample_id);
  return bundle;
}

/// Builds the knowledge cache for every sample of every split, in sorted
/// sample order. Idempotent: repeated runs with the same configuration
/// produce byte-identical output; a cache built under a different
/// configuration hash is rejected.
inline void build_knowledge_cache(const ExperimentConfig& cfg,
                                  const Dataset& dataset,
                                  const std::filesystem::path& out_dir) {
  Providers providers = make_providers(cfg, dataset);
  KnowledgeCacheWriter writer(out_dir, cache_config_hash(cfg));

  std::vector<std::string> ids;
  for (const auto& [split, split_ids] : dataset.meta.splits) {
    ids.insert(ids.end(), split_ids.begin(), split_ids.end());
  }
  std::sort(ids.begin(), ids.end());

  for (const std::string& id : ids) {
    try {
      writer.write_sample(compute_bundle(cfg, dataset, providers, id));
    } catch (const MissingAssetError& e) {
      throw MissingAssetError("while building knowledge for sample " + id + ": " +
                              e.what());
    }
  }
  writer.finalize();
}

}  // namespace pca::harness
