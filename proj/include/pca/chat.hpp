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

// Chat stage: decide between prompt expansion and caption lookup from the
// confidence scores, then encode the chosen text into token features.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "pca/errors.hpp"
#include "pca/matrix.hpp"
#include "pca/pcak.hpp"
#include "pca/rng.hpp"

namespace pca::chat {

enum class RoutePath { kPromptPath, kCaptionPath };

inline std::string route_path_name(RoutePath p) {
  return p == RoutePath::kPromptPath ? "prompt_path" : "caption_path";
}

inline RoutePath route_path_from_name(const std::string& name) {
  if (name == "prompt_path") return RoutePath::kPromptPath;
  if (name == "caption_path") return RoutePath::kCaptionPath;
  throw InvalidInputError("unknown route path: " + name);
}

struct RouteDecision {
  RoutePath path = RoutePath::kCaptionPath;
  double max_score = 0.0;
  double threshold = 0.0;
};

enum class LabelMode { kSingle, kMulti };

inline std::string label_mode_name(LabelMode m) {
  return m == LabelMode::kSingle ? "single" : "multi";
}

inline LabelMode label_mode_from_name(const std::string& name) {
  if (name == "single") return LabelMode::kSingle;
  if (name == "multi") return LabelMode::kMulti;
  throw ConfigError("unknown label_mode: " + name);
}

/// Threshold-controlled switch: the prompt path is taken iff max(s) >= sigma
/// (boundary inclusive), otherwise the caption path.
inline RouteDecision route_knowledge(const std::vector<double>& s, double sigma) {
  if (s.empty()) throw InvalidInputError("route_knowledge: empty score vector");
  if (sigma < 0.0 || sigma > 1.0) {
    throw InvalidInputError("route_knowledge: sigma must be in [0,1]");
  }
  double max_score = s[0];
  for (double v : s) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidInputError("route_knowledge: scores must be in [0,1]");
    }
    max_score = std::max(max_score, v);
  }
  RouteDecision d;
  d.path = max_score >= sigma ? RoutePath::kPromptPath : RoutePath::kCaptionPath;
  d.max_score = max_score;
  d.threshold = sigma;
  return d;
}

struct PromptTemplate {
  std::string subject = "A man is";
  std::string adverbial;
  std::string joiner = ". ";

  void validate() const {
    if (subject.empty()) {
      throw InvalidInputError("prompt template: subject must be non-empty");
    }
  }
};

/// Candidate label indices for the prompt path: top-1 score in single mode,
/// every label scoring >= sigma in multi mode. Ordered by descending score,
/// ties by lower index.
inline std::vector<size_t> candidate_labels(const std::vector<double>& s,
                                            double sigma, LabelMode mode) {
  std::vector<size_t> order(s.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return s[a] > s[b]; });
  if (mode == LabelMode::kSingle) {
    return {order[0]};
  }
  std::vector<size_t> out;
  for (size_t idx : order) {
    if (s[idx] >= sigma) out.push_back(idx);
  }
  return out;
}

/// Renders one sentence per candidate label ("<subject> <label> <adverbial>")
/// and joins them. Must only be called after a prompt-path route decision.
inline std::string expand_prompt(const std::vector<double>& s, double sigma,
                                 const std::vector<std::string>& label_names,
                                 const PromptTemplate& tmpl, LabelMode mode) {
  tmpl.validate();
  if (label_names.size() != s.size()) {
    throw ShapeError("expand_prompt: label name count does not match scores");
  }
  RouteDecision d = route_knowledge(s, sigma);
  if (d.path != RoutePath::kPromptPath) {
    throw ContractViolationError(
        "expand_prompt called on a caption-path decision (max score below "
        "threshold)");
  }
  std::vector<size_t> candidates = candidate_labels(s, sigma, mode);
  std::string out;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (i > 0) out += tmpl.joiner;
    out += tmpl.subject;
    out += ' ';
    out += label_names[candidates[i]];
    if (!tmpl.adverbial.empty()) {
      out += ' ';
      out += tmpl.adverbial;
    }
  }
  return out;
}

/// Concatenates the candidates' explanation strings in candidate order,
/// joined by a single space.
inline std::string summarize_explanations(
    const std::vector<std::string>& candidate_labels,
    const std::map<std::string, std::string>& explanations) {
  std::string out;
  for (size_t i = 0; i < candidate_labels.size(); ++i) {
    auto it = explanations.find(candidate_labels[i]);
    if (it == explanations.end()) {
      throw MissingAssetError("no explanation for label: " + candidate_labels[i]);
    }
    if (i > 0) out += ' ';
    out += it->second;
  }
  return out;
}

// --- caption providers ------------------------------------------------------

class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  virtual std::string caption(const std::string& sample_id) const = 0;
};

/// Captions loaded from a UTF-8 JSON object mapping sample_id -> caption.
class FileCaptionProvider : public CaptionProvider {
 public:
  explicit FileCaptionProvider(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingAssetError("caption file not found: " + path.string());
    nlohmann::json j = nlohmann::json::parse(f);
    for (auto it = j.begin(); it != j.end(); ++it) {
      captions_[it.key()] = it.value().get<std::string>();
    }
  }

  std::string caption(const std::string& sample_id) const override {
    auto it = captions_.find(sample_id);
    if (it == captions_.end()) {
      throw MissingAssetError("no caption for sample: " + sample_id);
    }
    return it->second;
  }

 private:
  std::map<std::string, std::string> captions_;
};

/// Deterministic pseudo-captions for tests and dry runs.
class MockCaptionProvider : public CaptionProvider {
 public:
  explicit MockCaptionProvider(uint64_t seed) : seed_(seed) {}

  std::string caption(const std::string& sample_id) const override {
    static const char* kWords[] = {"walking",  "standing", "holding", "moving",
                                   "carrying", "watching", "turning", "waiting"};
    Rng rng(derive_seed(seed_, "caption", fnv1a64(sample_id)));
    std::string out = "a person";
    int words = 2 + static_cast<int>(rng.uniform_index(3));
    for (int i = 0; i < words; ++i) {
      out += ' ';
      out += kWords[rng.uniform_index(8)];
    }
    return out;
  }

 private:
  uint64_t seed_;
};

inline std::string get_caption(const std::string& sample_id,
                               const CaptionProvider& provider) {
  return provider.caption(sample_id);
}

// --- text encoding ----------------------------------------------------------

inline constexpr int kDefaultMaxTextTokens = 32;

/// Lowercases, replaces punctuation with spaces, splits on whitespace.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Mat<float> encode(const std::string& text) const = 0;
  virtual Eigen::Index dim() const = 0;
};

/// Deterministic bag-of-token embeddings: each token's vector is drawn from a
/// generator seeded by (seed, token string), so equal tokens share rows.
class MockTextEncoder : public TextEncoder {
 public:
  MockTextEncoder(uint64_t seed, Eigen::Index dim,
                  int max_text_tokens = kDefaultMaxTextTokens)
      : seed_(seed), dim_(dim), max_tokens_(max_text_tokens) {}

  Mat<float> encode(const std::string& text) const override {
    std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) {
      throw InvalidInputError("encode_text: no tokens after tokenization");
    }
    if (static_cast<int>(tokens.size()) > max_tokens_) {
      tokens.resize(static_cast<size_t>(max_tokens_));
    }
    Mat<float> out(static_cast<Eigen::Index>(tokens.size()), dim_);
    for (size_t i = 0; i < tokens.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = token_vector(tokens[i]).row(0);
    }
    return out;
  }

  Mat<float> token_vector(const std::string& token) const {
    Rng rng(derive_seed(seed_, "token", fnv1a64(token)));
    return random_normal<float>(1, dim_, rng);
  }

  Eigen::Index dim() const override { return dim_; }

 private:
  uint64_t seed_;
  Eigen::Index dim_;
  int max_tokens_;
};

/// Pre-computed text features: a directory with index.json mapping the exact
/// text string to a rank-2 tensor file.
class FileTextEncoder : public TextEncoder {
 public:
  explicit FileTextEncoder(const std::filesystem::path& dir) : dir_(dir) {
    std::ifstream f(dir / "index.json");
    if (!f) {
      throw MissingAssetError("text feature index not found: " +
                              (dir / "index.json").string());
    }
    nlohmann::json j = nlohmann::json::parse(f);
    for (auto it = j.begin(); it != j.end(); ++it) {
      index_[it.key()] = it.value().get<std::string>();
    }
  }

  Mat<float> encode(const std::string& text) const override {
    if (tokenize(text).empty()) {
      throw InvalidInputError("encode_text: no tokens after tokenization");
    }
    auto it = index_.find(text);
    if (it == index_.end()) {
      throw MissingAssetError("no cached text features for: " + text);
    }
    return pcak_to_matrix<float>(pcak_read(dir_ / it->second), "text features");
  }

  Eigen::Index dim() const override {
    if (index_.empty()) return 0;
    return pcak_to_matrix<float>(pcak_read(dir_ / index_.begin()->second),
                                 "text features")
        .cols();
  }

  /// Writes a feature file and index entry; used to materialize caches.
  static void write_cache(const std::filesystem::path& dir,
                          const std::map<std::string, Mat<float>>& features) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json index;
    int n = 0;
    for (const auto& [text, mat] : features) {
      std::string name = "t" + std::to_string(n++) + ".pcak";
      pcak_write(dir / name, pcak_from_matrix(mat));
      index[text] = name;
    }
    std::ofstream f(dir / "index.json");
    f << index.dump(2) << "\n";
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> index_;
};

inline Mat<float> encode_text(const std::string& text, const TextEncoder& encoder) {
  Mat<float> out = encoder.encode(text);
  check_feature_matrix(out, "encode_text output");
  return out;
}

/// Textual knowledge for one sample: the chosen text, its token features and
/// the route that produced it.
struct TextKnowledge {
  std::string text;
  Mat<float> f_t;
  RouteDecision source;
};

}  // namespace pca::chat
