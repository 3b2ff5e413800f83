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

// Experiment configuration: JSON in, strictly validated (unknown keys are
// errors), plus the cache-relevant configuration hash that guards knowledge
// caches and checkpoints against silently mixed settings.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pca/adapt.hpp"
#include "pca/backbone.hpp"
#include "pca/chat.hpp"
#include "pca/errors.hpp"
#include "pca/percept.hpp"
#include "pca/rng.hpp"

namespace pca::harness {

/// Which knowledge modalities flow into the adapters.
enum class KnowledgeMode { kNone, kVisual, kTextual, kBoth };

inline std::string knowledge_mode_name(KnowledgeMode m) {
  switch (m) {
    case KnowledgeMode::kNone: return "none";
    case KnowledgeMode::kVisual: return "visual";
    case KnowledgeMode::kTextual: return "textual";
    case KnowledgeMode::kBoth: return "both";
  }
  throw ConfigError("unknown knowledge mode");
}

inline KnowledgeMode knowledge_mode_from_name(const std::string& name) {
  if (name == "none") return KnowledgeMode::kNone;
  if (name == "visual") return KnowledgeMode::kVisual;
  if (name == "textual") return KnowledgeMode::kTextual;
  if (name == "both") return KnowledgeMode::kBoth;
  throw ConfigError("unknown knowledge mode: " + name);
}

struct TrainConfig {
  double base_lr = 1e-3;  // synthetic-task default; pretrained-scale runs use 1e-5
  double weight_decay = 0.01;
  int batch_size = 32;
  int warmup_epochs = 2;
  int total_epochs = 30;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double sigma = 0.5;
  Eigen::Index prompt_dim = 128;
  Eigen::Index n_prompts = 8;
  int adapter_heads = 4;
  int block_num = 3;
  adapt::StructureVariant variant = adapt::StructureVariant::kAdapt;
  uint64_t seed = 1;
  chat::LabelMode label_mode = chat::LabelMode::kSingle;
  KnowledgeMode knowledge_mode = KnowledgeMode::kBoth;
  int max_text_tokens = chat::kDefaultMaxTextTokens;
  bool freeze_backbone = false;

  void validate() const {
    if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs >= total_epochs) {
      throw ConfigError("train: require 0 <= warmup_epochs < total_epochs");
    }
    if (sigma < 0.0 || sigma > 1.0) throw ConfigError("train: sigma must be in [0,1]");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (base_lr <= 0.0) throw ConfigError("train: base_lr must be > 0");
    if (prompt_dim < 2 || n_prompts < 1) {
      throw ConfigError("train: prompt_dim >= 2 and n_prompts >= 1 required");
    }
    if (max_text_tokens < 1) throw ConfigError("train: max_text_tokens must be >= 1");
  }
};

enum class ExtractorKind { kMock, kFileBacked };
enum class EncoderKind { kMock, kFileBacked };

struct PerceptConfig {
  percept::EnhancerKind enhancer_kind = percept::EnhancerKind::kIdentity;
  double gamma_rate = 1.8;
  std::string enhancer_source;  // relative to the dataset directory

  ExtractorKind extractor_kind = ExtractorKind::kMock;
  uint64_t extractor_seed = 77;
  Eigen::Index feature_dim = 16;
  double head_gain = 6.0;
  std::string extractor_cache;  // for the file-backed kind
};

struct ChatConfig {
  EncoderKind encoder_kind = EncoderKind::kMock;
  uint64_t encoder_seed = 99;
  Eigen::Index text_dim = 24;
  std::string encoder_cache;
  chat::PromptTemplate prompt;
  std::string captions_file = "captions.json";
  std::string explanations_file = "explanations.json";
};

struct ExperimentConfig {
  TrainConfig train;
  backbone::BackboneConfig backbone;
  backbone::InsertionPlan plan;
  bool explicit_plan = false;
  PerceptConfig percept;
  ChatConfig chat;

  adapt::AdapterDims adapter_dims() const {
    adapt::AdapterDims d;
    d.block_dim = backbone.d_model;
    d.visual_dim = percept.feature_dim;
    d.text_dim = chat.text_dim;
    d.prompt_dim = train.prompt_dim;
    d.n_prompts = train.n_prompts;
    d.n_heads = train.adapter_heads;
    return d;
  }

  void validate() const {
    train.validate();
    backbone.validate();
    plan.validate(backbone.depth);
    adapter_dims().validate();
    if (train.block_num != plan.block_num()) {
      throw ConfigError("config: block_num " + std::to_string(train.block_num) +
                        " does not match the insertion plan (" +
                        std::to_string(plan.block_num()) + " sites)");
    }
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " +
                        e.what());
    }
  }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j,
                     {"base_lr", "weight_decay", "batch_size", "warmup_epochs",
                      "total_epochs", "beta1", "beta2", "sigma", "prompt_dim",
                      "n_prompts", "adapter_heads", "block_num", "variant", "seed",
                      "label_mode", "knowledge_mode", "max_text_tokens",
                      "freeze_backbone"},
                     "train");
  TrainConfig c;
  detail::maybe(j, "base_lr", c.base_lr);
  detail::maybe(j, "weight_decay", c.weight_decay);
  detail::maybe(j, "batch_size", c.batch_size);
  detail::maybe(j, "warmup_epochs", c.warmup_epochs);
  detail::maybe(j, "total_epochs", c.total_epochs);
  detail::maybe(j, "beta1", c.beta1);
  detail::maybe(j, "beta2", c.beta2);
  detail::maybe(j, "sigma", c.sigma);
  long prompt_dim = c.prompt_dim, n_prompts = c.n_prompts;
  detail::maybe(j, "prompt_dim", prompt_dim);
  detail::maybe(j, "n_prompts", n_prompts);
  c.prompt_dim = prompt_dim;
  c.n_prompts = n_prompts;
  detail::maybe(j, "adapter_heads", c.adapter_heads);
  detail::maybe(j, "block_num", c.block_num);
  if (j.contains("variant")) {
    c.variant = adapt::variant_from_name(j.at("variant").get<std::string>());
  }
  detail::maybe(j, "seed", c.seed);
  if (j.contains("label_mode")) {
    c.label_mode = chat::label_mode_from_name(j.at("label_mode").get<std::string>());
  }
  if (j.contains("knowledge_mode")) {
    c.knowledge_mode =
        knowledge_mode_from_name(j.at("knowledge_mode").get<std::string>());
  }
  detail::maybe(j, "max_text_tokens", c.max_text_tokens);
  detail::maybe(j, "freeze_backbone", c.freeze_backbone);
  return c;
}

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["base_lr"] = c.base_lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["warmup_epochs"] = c.warmup_epochs;
  j["total_epochs"] = c.total_epochs;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["sigma"] = c.sigma;
  j["prompt_dim"] = static_cast<long>(c.prompt_dim);
  j["n_prompts"] = static_cast<long>(c.n_prompts);
  j["adapter_heads"] = c.adapter_heads;
  j["block_num"] = c.block_num;
  j["variant"] = adapt::variant_name(c.variant);
  j["seed"] = c.seed;
  j["label_mode"] = chat::label_mode_name(c.label_mode);
  j["knowledge_mode"] = knowledge_mode_name(c.knowledge_mode);
  j["max_text_tokens"] = c.max_text_tokens;
  j["freeze_backbone"] = c.freeze_backbone;
  return j;
}

inline backbone::BackboneConfig backbone_config_from_json(const nlohmann::json& j,
                                                          chat::LabelMode mode) {
  detail::check_keys(j,
                     {"depth", "d_model", "n_heads", "head_dropout", "class_count",
                      "input_dim", "token_count"},
                     "backbone");
  backbone::BackboneConfig c;
  c.label_mode = mode;
  detail::maybe(j, "depth", c.depth);
  long d_model = c.d_model, input_dim = c.input_dim;
  detail::maybe(j, "d_model", d_model);
  detail::maybe(j, "input_dim", input_dim);
  c.d_model = d_model;
  c.input_dim = input_dim;
  detail::maybe(j, "n_heads", c.n_heads);
  detail::maybe(j, "head_dropout", c.head_dropout);
  detail::maybe(j, "class_count", c.class_count);
  detail::maybe(j, "token_count", c.token_count);
  return c;
}

inline nlohmann::ordered_json backbone_config_to_json(
    const backbone::BackboneConfig& c) {
  nlohmann::ordered_json j;
  j["depth"] = c.depth;
  j["d_model"] = static_cast<long>(c.d_model);
  j["n_heads"] = c.n_heads;
  j["head_dropout"] = c.head_dropout;
  j["class_count"] = c.class_count;
  j["input_dim"] = static_cast<long>(c.input_dim);
  j["token_count"] = c.token_count;
  return j;
}

inline PerceptConfig percept_config_from_json(const nlohmann::json& j) {
  PerceptConfig c;
  detail::check_keys(j, {"enhancer", "extractor"}, "percept");
  if (j.contains("enhancer")) {
    const auto& e = j.at("enhancer");
    detail::check_keys(e, {"kind", "gamma_rate", "source"}, "percept.enhancer");
    std::string kind = e.at("kind").get<std::string>();
    if (kind == "identity") c.enhancer_kind = percept::EnhancerKind::kIdentity;
    else if (kind == "gamma") c.enhancer_kind = percept::EnhancerKind::kGamma;
    else if (kind == "mask_fusion") c.enhancer_kind = percept::EnhancerKind::kMaskFusion;
    else if (kind == "external") c.enhancer_kind = percept::EnhancerKind::kExternal;
    else throw ConfigError("percept.enhancer: unknown kind '" + kind + "'");
    detail::maybe(e, "gamma_rate", c.gamma_rate);
    detail::maybe(e, "source", c.enhancer_source);
  }
  if (j.contains("extractor")) {
    const auto& e = j.at("extractor");
    detail::check_keys(e, {"kind", "seed", "feature_dim", "head_gain", "cache"},
                       "percept.extractor");
    std::string kind = e.value("kind", "mock");
    if (kind == "mock") c.extractor_kind = ExtractorKind::kMock;
    else if (kind == "file_backed") c.extractor_kind = ExtractorKind::kFileBacked;
    else throw ConfigError("percept.extractor: unknown kind '" + kind + "'");
    detail::maybe(e, "seed", c.extractor_seed);
    long fd = c.feature_dim;
    detail::maybe(e, "feature_dim", fd);
    c.feature_dim = fd;
    detail::maybe(e, "head_gain", c.head_gain);
    detail::maybe(e, "cache", c.extractor_cache);
  }
  return c;
}

inline nlohmann::ordered_json percept_config_to_json(const PerceptConfig& c) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json e;
  switch (c.enhancer_kind) {
    case percept::EnhancerKind::kIdentity: e["kind"] = "identity"; break;
    case percept::EnhancerKind::kGamma:
      e["kind"] = "gamma";
      e["gamma_rate"] = c.gamma_rate;
      break;
    case percept::EnhancerKind::kMaskFusion:
      e["kind"] = "mask_fusion";
      e["source"] = c.enhancer_source;
      break;
    case percept::EnhancerKind::kExternal:
      e["kind"] = "external";
      e["source"] = c.enhancer_source;
      break;
  }
  j["enhancer"] = e;
  nlohmann::ordered_json x;
  x["kind"] = c.extractor_kind == ExtractorKind::kMock ? "mock" : "file_backed";
  x["seed"] = c.extractor_seed;
  x["feature_dim"] = static_cast<long>(c.feature_dim);
  x["head_gain"] = c.head_gain;
  if (!c.extractor_cache.empty()) x["cache"] = c.extractor_cache;
  j["extractor"] = x;
  return j;
}

inline ChatConfig chat_config_from_json(const nlohmann::json& j) {
  ChatConfig c;
  detail::check_keys(j, {"encoder", "template", "captions", "explanations"}, "chat");
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::check_keys(e, {"kind", "seed", "dim", "cache"}, "chat.encoder");
    std::string kind = e.value("kind", "mock");
    if (kind == "mock") c.encoder_kind = EncoderKind::kMock;
    else if (kind == "file_backed") c.encoder_kind = EncoderKind::kFileBacked;
    else throw ConfigError("chat.encoder: unknown kind '" + kind + "'");
    detail::maybe(e, "seed", c.encoder_seed);
    long dim = c.text_dim;
    detail::maybe(e, "dim", dim);
    c.text_dim = dim;
    detail::maybe(e, "cache", c.encoder_cache);
  }
  if (j.contains("template")) {
    const auto& t = j.at("template");
    detail::check_keys(t, {"subject", "adverbial", "joiner"}, "chat.template");
    detail::maybe(t, "subject", c.prompt.subject);
    detail::maybe(t, "adverbial", c.prompt.adverbial);
    detail::maybe(t, "joiner", c.prompt.joiner);
    c.prompt.validate();
  }
  detail::maybe(j, "captions", c.captions_file);
  detail::maybe(j, "explanations", c.explanations_file);
  return c;
}

inline nlohmann::ordered_json chat_config_to_json(const ChatConfig& c) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json e;
  e["kind"] = c.encoder_kind == EncoderKind::kMock ? "mock" : "file_backed";
  e["seed"] = c.encoder_seed;
  e["dim"] = static_cast<long>(c.text_dim);
  if (!c.encoder_cache.empty()) e["cache"] = c.encoder_cache;
  j["encoder"] = e;
  nlohmann::ordered_json t;
  t["subject"] = c.prompt.subject;
  t["adverbial"] = c.prompt.adverbial;
  t["joiner"] = c.prompt.joiner;
  j["template"] = t;
  j["captions"] = c.captions_file;
  j["explanations"] = c.explanations_file;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"train", "backbone", "plan", "percept", "chat"}, "config");
  ExperimentConfig c;
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("backbone")) {
    c.backbone = backbone_config_from_json(j.at("backbone"), c.train.label_mode);
  } else {
    c.backbone.label_mode = c.train.label_mode;
  }
  if (j.contains("plan")) {
    const auto& p = j.at("plan");
    detail::check_keys(p, {"visual_sites", "textual_sites"}, "plan");
    c.plan.visual_sites = p.value("visual_sites", std::vector<int>{});
    c.plan.textual_sites = p.value("textual_sites", std::vector<int>{});
    c.explicit_plan = true;
    c.train.block_num = c.plan.block_num();
  } else {
    c.plan = backbone::InsertionPlan::default_plan(c.backbone.depth,
                                                   c.train.block_num, true);
  }
  if (j.contains("percept")) c.percept = percept_config_from_json(j.at("percept"));
  if (j.contains("chat")) c.chat = chat_config_from_json(j.at("chat"));
  c.validate();
  return c;
}

inline nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["train"] = train_config_to_json(c.train);
  j["backbone"] = backbone_config_to_json(c.backbone);
  if (c.explicit_plan) {
    nlohmann::ordered_json p;
    p["visual_sites"] = c.plan.visual_sites;
    p["textual_sites"] = c.plan.textual_sites;
    j["plan"] = p;
  }
  j["percept"] = percept_config_to_json(c.percept);
  j["chat"] = chat_config_to_json(c.chat);
  return j;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingAssetError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

/// Hash over every configuration field that determines knowledge cache
/// contents. Stored in cache indexes and checkpoints; a mismatch means the
/// cache was built under different routing/provider settings.
inline std::string cache_config_hash(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["sigma"] = c.train.sigma;
  j["label_mode"] = chat::label_mode_name(c.train.label_mode);
  j["max_text_tokens"] = c.train.max_text_tokens;
  j["class_count"] = c.backbone.class_count;
  j["token_count"] = c.backbone.token_count;
  j["percept"] = percept_config_to_json(c.percept);
  j["chat"] = chat_config_to_json(c.chat);
  uint64_t h = fnv1a64(j.dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace pca::harness
