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

// Knowledge cache on disk: one subdirectory per sample holding f_v.pcak,
// f_t.pcak and s.pcak, plus index.jsonl with one JSON object per sample
// (sample_id, label vector, route, text, relative tensor paths, config hash).
// The cache is write-once per configuration: an existing index with a
// different config hash is rejected.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pca/chat.hpp"
#include "pca/errors.hpp"
#include "pca/matrix.hpp"
#include "pca/pcak.hpp"

namespace pca::harness {

/// Per-sample multimodal record produced by the offline percept+chat pass.
struct KnowledgeBundle {
  std::string sample_id;
  Mat<float> f_v;
  std::vector<float> s;
  std::string text;
  Mat<float> f_t;
  chat::RouteDecision route;
  std::vector<float> label;
};

namespace detail {

inline nlohmann::ordered_json route_to_json(const chat::RouteDecision& r) {
  nlohmann::ordered_json j;
  j["path"] = chat::route_path_name(r.path);
  j["max_score"] = r.max_score;
  j["threshold"] = r.threshold;
  return j;
}

inline chat::RouteDecision route_from_json(const nlohmann::json& j) {
  chat::RouteDecision r;
  r.path = chat::route_path_from_name(j.at("path").get<std::string>());
  r.max_score = j.at("max_score").get<double>();
  r.threshold = j.at("threshold").get<double>();
  return r;
}

}  // namespace detail

class KnowledgeCacheWriter {
 public:
  KnowledgeCacheWriter(std::filesystem::path dir, std::string config_hash)
      : dir_(std::move(dir)), config_hash_(std::move(config_hash)) {
    auto index_path = dir_ / "index.jsonl";
    if (std::filesystem::exists(index_path)) {
      std::ifstream f(index_path);
      std::string line;
      if (std::getline(f, line) && !line.empty()) {
        auto j = nlohmann::json::parse(line);
        std::string existing = j.at("config_hash").get<std::string>();
        if (existing != config_hash_) {
          throw ConfigError(
              "knowledge cache at " + dir_.string() +
              " was built with a different configuration (hash " + existing +
              " != " + config_hash_ + "); refusing to mix");
        }
      }
    }
    std::filesystem::create_directories(dir_);
  }

  void write_sample(const KnowledgeBundle& b) {
    auto sample_dir = dir_ / b.sample_id;
    std::filesystem::create_directories(sample_dir);
    pcak_write(sample_dir / "f_v.pcak", pcak_from_matrix(b.f_v));
    pcak_write(sample_dir / "f_t.pcak", pcak_from_matrix(b.f_t));
    pcak_write(sample_dir / "s.pcak", pcak_from_vector(b.s));

    nlohmann::ordered_json line;
    line["sample_id"] = b.sample_id;
    line["label"] = b.label;
    line["route"] = detail::route_to_json(b.route);
    line["text"] = b.text;
    line["f_v"] = b.sample_id + "/f_v.pcak";
    line["f_t"] = b.sample_id + "/f_t.pcak";
    line["s"] = b.sample_id + "/s.pcak";
    line["config_hash"] = config_hash_;
    lines_[b.sample_id] = line.dump();
  }

  /// Writes index.jsonl with lines sorted by sample id, so repeated builds
  /// produce byte-identical output.
  void finalize() const {
    std::ofstream f(dir_ / "index.jsonl", std::ios::trunc);
    if (!f) throw MissingAssetError("cannot write " + (dir_ / "index.jsonl").string());
    for (const auto& [id, line] : lines_) {
      f << line << "\n";
    }
  }

 private:
  std::filesystem::path dir_;
  std::string config_hash_;
  std::map<std::string, std::string> lines_;
};

class KnowledgeCacheReader {
 public:
  explicit KnowledgeCacheReader(std::filesystem::path dir) : dir_(std::move(dir)) {
    auto index_path = dir_ / "index.jsonl";
    std::ifstream f(index_path);
    if (!f) {
      throw MissingAssetError("knowledge cache index not found: " +
                              index_path.string());
    }
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      Entry e;
      e.label = j.at("label").get<std::vector<float>>();
      e.route = detail::route_from_json(j.at("route"));
      e.text = j.at("text").get<std::string>();
      e.f_v_path = j.at("f_v").get<std::string>();
      e.f_t_path = j.at("f_t").get<std::string>();
      e.s_path = j.at("s").get<std::string>();
      std::string hash = j.at("config_hash").get<std::string>();
      if (config_hash_.empty()) {
        config_hash_ = hash;
      } else if (config_hash_ != hash) {
        throw ConfigError("knowledge cache has mixed config hashes");
      }
      entries_[j.at("sample_id").get<std::string>()] = std::move(e);
    }
  }

  bool contains(const std::string& sample_id) const {
    return entries_.count(sample_id) > 0;
  }

  std::vector<std::string> sample_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries_.size());
    for (const auto& [id, _] : entries_) ids.push_back(id);
    return ids;
  }

  const std::string& config_hash() const { return config_hash_; }

  KnowledgeBundle bundle(const std::string& sample_id) const {
    auto it = entries_.find(sample_id);
    if (it == entries_.end()) {
      throw MissingAssetError("knowledge cache miss for sample: " + sample_id);
    }
    const Entry& e = it->second;
    KnowledgeBundle b;
    b.sample_id = sample_id;
    b.f_v = pcak_to_matrix<float>(pcak_read(dir_ / e.f_v_path), "f_v");
    b.f_t = pcak_to_matrix<float>(pcak_read(dir_ / e.f_t_path), "f_t");
    b.s = pcak_to_vector(pcak_read(dir_ / e.s_path), "s");
    b.text = e.text;
    b.route = e.route;
    b.label = e.label;
    validate_route(b);
    return b;
  }

 private:
  struct Entry {
    std::vector<float> label;
    chat::RouteDecision route;
    std::string text;
    std::string f_v_path;
    std::string f_t_path;
    std::string s_path;
  };

  static void validate_route(const KnowledgeBundle& b) {
    double max_score = 0.0;
    for (float v : b.s) max_score = std::max(max_score, static_cast<double>(v));
    bool prompt = max_score >= b.route.threshold;
    if (prompt != (b.route.path == chat::RoutePath::kPromptPath)) {
      throw InvalidInputError("knowledge cache: stored route for " + b.sample_id +
                              " is inconsistent with its scores");
    }
  }

  std::filesystem::path dir_;
  std::map<std::string, Entry> entries_;
  std::string config_hash_;
};

}  // namespace pca::harness
