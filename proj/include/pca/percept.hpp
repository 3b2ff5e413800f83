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

// Percept stage: enhance a raw clip to reduce the domain gap, then extract
// visual knowledge tokens and per-class confidence scores through a pluggable
// extractor backend.

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pca/chat.hpp"
#include "pca/errors.hpp"
#include "pca/knowledge_cache.hpp"
#include "pca/matrix.hpp"
#include "pca/nn.hpp"
#include "pca/pcak.hpp"
#include "pca/rng.hpp"

namespace pca::percept {

inline constexpr int kDefaultFrameCount = 8;

/// A clip as a T x H x W x C tensor of pixel values in [0, 1].
struct VideoClip {
  std::string sample_id;
  int t = 0;
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<float> frames;  // row-major t, h, w, c

  size_t index(int frame, int y, int x, int ch) const {
    return ((static_cast<size_t>(frame) * h + y) * w + x) * c + ch;
  }
  float at(int frame, int y, int x, int ch) const {
    return frames[index(frame, y, x, ch)];
  }
  float& at(int frame, int y, int x, int ch) {
    return frames[index(frame, y, x, ch)];
  }

  void validate() const {
    if (t < 1 || h < 1 || w < 1 || c < 1) {
      throw InvalidInputError("clip: all dims must be positive");
    }
    if (frames.size() != static_cast<size_t>(t) * h * w * c) {
      throw ShapeError("clip: pixel buffer size does not match dims");
    }
    for (float v : frames) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw InvalidInputError("clip: pixel values must be in [0,1]");
      }
    }
  }

  PcakTensor to_pcak() const {
    PcakTensor out;
    out.dims = {static_cast<uint32_t>(t), static_cast<uint32_t>(h),
                static_cast<uint32_t>(w), static_cast<uint32_t>(c)};
    out.data = frames;
    return out;
  }

  static VideoClip from_pcak(const PcakTensor& tensor, std::string sample_id) {
    if (tensor.dims.size() != 4) {
      throw ShapeError("clip: expected rank-4 tensor");
    }
    VideoClip clip;
    clip.sample_id = std::move(sample_id);
    clip.t = static_cast<int>(tensor.dims[0]);
    clip.h = static_cast<int>(tensor.dims[1]);
    clip.w = static_cast<int>(tensor.dims[2]);
    clip.c = static_cast<int>(tensor.dims[3]);
    clip.frames = tensor.data;
    return clip;
  }
};

/// Per-frame pixel statistics: channel means followed by channel variances
/// (population variance over the frame's pixels). One row per frame, 2C
/// columns. This is the mock extractor's featurization.
template <typename T>
Mat<T> clip_stats(const VideoClip& clip) {
  Mat<T> out(clip.t, 2 * clip.c);
  const double inv_n = 1.0 / (static_cast<double>(clip.h) * clip.w);
  for (int f = 0; f < clip.t; ++f) {
    for (int ch = 0; ch < clip.c; ++ch) {
      double mean = 0.0;
      for (int y = 0; y < clip.h; ++y) {
        for (int x = 0; x < clip.w; ++x) {
          mean += clip.at(f, y, x, ch);
        }
      }
      mean *= inv_n;
      double var = 0.0;
      for (int y = 0; y < clip.h; ++y) {
        for (int x = 0; x < clip.w; ++x) {
          double d = clip.at(f, y, x, ch) - mean;
          var += d * d;
        }
      }
      var *= inv_n;
      out(f, ch) = static_cast<T>(mean);
      out(f, clip.c + ch) = static_cast<T>(var);
    }
  }
  return out;
}

/// Clip tokens for the trainable backbone: per-frame channel means only, one
/// row per frame, C columns. The backbone shares the extractor's view of the
/// frame brightness but not its dispersion statistics, so external knowledge
/// stays informative beyond the backbone's own input.
template <typename T>
Mat<T> clip_tokens(const VideoClip& clip) {
  return clip_stats<T>(clip).leftCols(clip.c);
}

/// Brightens (gamma_rate > 1) or darkens each pixel: out = in^(1/gamma_rate).
inline VideoClip gamma_correct(const VideoClip& clip, double gamma_rate) {
  if (gamma_rate <= 0.0) {
    throw InvalidInputError("gamma_correct: gamma_rate must be > 0");
  }
  VideoClip out = clip;
  const double exponent = 1.0 / gamma_rate;
  for (float& v : out.frames) {
    v = static_cast<float>(std::pow(static_cast<double>(v), exponent));
  }
  return out;
}

/// Average fusion: out = 0.5 * clip + 0.5 * masks, elementwise.
inline VideoClip mask_fuse(const VideoClip& clip, const VideoClip& masks) {
  if (clip.t != masks.t || clip.h != masks.h || clip.w != masks.w ||
      clip.c != masks.c) {
    throw ShapeError("mask_fuse: clip and mask shapes differ");
  }
  VideoClip out = clip;
  for (size_t i = 0; i < out.frames.size(); ++i) {
    out.frames[i] = 0.5f * clip.frames[i] + 0.5f * masks.frames[i];
  }
  return out;
}

enum class EnhancerKind { kIdentity, kGamma, kMaskFusion, kExternal };

/// Which enhancement to apply before knowledge extraction. File-backed kinds
/// resolve their source directory at construction.
struct EnhancerSpec {
  EnhancerKind kind = EnhancerKind::kIdentity;
  double gamma_rate = 1.0;
  std::filesystem::path source;

  static EnhancerSpec identity() { return EnhancerSpec{}; }

  static EnhancerSpec gamma(double rate) {
    if (rate <= 0.0) throw InvalidInputError("enhancer: gamma_rate must be > 0");
    EnhancerSpec s;
    s.kind = EnhancerKind::kGamma;
    s.gamma_rate = rate;
    return s;
  }

  static EnhancerSpec mask_fusion(const std::filesystem::path& mask_source) {
    if (!std::filesystem::is_directory(mask_source)) {
      throw MissingAssetError("enhancer: mask source directory not found: " +
                              mask_source.string());
    }
    EnhancerSpec s;
    s.kind = EnhancerKind::kMaskFusion;
    s.source = mask_source;
    return s;
  }

  static EnhancerSpec external(const std::filesystem::path& enhanced_source) {
    if (!std::filesystem::is_directory(enhanced_source)) {
      throw MissingAssetError("enhancer: enhanced source directory not found: " +
                              enhanced_source.string());
    }
    EnhancerSpec s;
    s.kind = EnhancerKind::kExternal;
    s.source = enhanced_source;
    return s;
  }
};

inline VideoClip load_clip_file(const std::filesystem::path& path,
                                const std::string& sample_id) {
  if (!std::filesystem::exists(path)) {
    throw MissingAssetError("no stored clip for sample " + sample_id + " at " +
                            path.string());
  }
  return VideoClip::from_pcak(pcak_read(path), sample_id);
}

/// Applies the configured enhancement. The external kind loads a
/// pre-enhanced clip keyed by sample_id from the source directory.
inline VideoClip enhance(const VideoClip& clip, const EnhancerSpec& spec) {
  switch (spec.kind) {
    case EnhancerKind::kIdentity:
      return clip;
    case EnhancerKind::kGamma:
      return gamma_correct(clip, spec.gamma_rate);
    case EnhancerKind::kMaskFusion: {
      VideoClip masks =
          load_clip_file(spec.source / (clip.sample_id + ".mask"), clip.sample_id);
      return mask_fuse(clip, masks);
    }
    case EnhancerKind::kExternal:
      return load_clip_file(spec.source / (clip.sample_id + ".clip"),
                            clip.sample_id);
  }
  throw ConfigError("enhance: unknown enhancer kind");
}

/// Visual knowledge tokens (one per frame) plus per-class confidences.
struct PerceptOutput {
  Mat<float> f_v;
  std::vector<float> s;
};

class VisualExtractor {
 public:
  virtual ~VisualExtractor() = default;
  virtual PerceptOutput extract(const VideoClip& clip,
                                chat::LabelMode label_mode) const = 0;
  virtual Eigen::Index feature_dim() const = 0;
};

/// Deterministic stand-in for a pretrained video model: per-frame pixel
/// statistics projected by a seeded fixed random matrix give the knowledge
/// tokens; a seeded linear head over the frame-pooled statistics gives the
/// class confidences. The head standardizes the pooled statistics against a
/// uniform-pixel reference (mean 0.5, variance 1/12) so the confidence logits
/// respond to deviations rather than to absolute brightness.
class MockVisualExtractor : public VisualExtractor {
 public:
  static constexpr double kRefMean = 0.5;
  static constexpr double kRefVar = 1.0 / 12.0;

  MockVisualExtractor(uint64_t seed, Eigen::Index feature_dim, int class_count,
                      double head_gain = 6.0)
      : seed_(seed),
        feature_dim_(feature_dim),
        class_count_(class_count),
        head_gain_(head_gain) {
    if (feature_dim < 1 || class_count < 1) {
      throw ConfigError("mock extractor: feature_dim and class_count must be >= 1");
    }
  }

  PerceptOutput extract(const VideoClip& clip,
                        chat::LabelMode label_mode) const override {
    clip.validate();
    Mat<double> stats = clip_stats<double>(clip);
    Mat<double> proj = projection(2 * clip.c);
    Mat<double> head = head_matrix(2 * clip.c);

    PerceptOutput out;
    out.f_v = (stats * proj).cast<float>();

    Mat<double> pooled = stats.colwise().mean();
    Mat<double> z(1, 2 * clip.c);
    for (int ch = 0; ch < clip.c; ++ch) {
      z(0, ch) = (pooled(0, ch) - kRefMean) / kRefMean;
      z(0, clip.c + ch) = (pooled(0, clip.c + ch) - kRefVar) / kRefVar;
    }
    Mat<double> logits = z * head * head_gain_;
    out.s.resize(static_cast<size_t>(class_count_));
    if (label_mode == chat::LabelMode::kSingle) {
      Mat<double> soft = nn::softmax_rows(logits);
      for (int j = 0; j < class_count_; ++j) {
        out.s[static_cast<size_t>(j)] = static_cast<float>(soft(0, j));
      }
    } else {
      for (int j = 0; j < class_count_; ++j) {
        out.s[static_cast<size_t>(j)] =
            static_cast<float>(1.0 / (1.0 + std::exp(-logits(0, j))));
      }
    }
    return out;
  }

  Mat<double> projection(Eigen::Index stat_dim) const {
    Rng rng(derive_seed(seed_, "proj"));
    return random_projection<double>(stat_dim, feature_dim_, rng);
  }

  Mat<double> head_matrix(Eigen::Index stat_dim) const {
    Rng rng(derive_seed(seed_, "head"));
    return random_normal<double>(stat_dim, class_count_, rng);
  }

  Eigen::Index feature_dim() const override { return feature_dim_; }
  int class_count() const { return class_count_; }
  double head_gain() const { return head_gain_; }

 private:
  uint64_t seed_;
  Eigen::Index feature_dim_;
  int class_count_;
  double head_gain_;
};

/// Replays (F_V, S) recorded in a knowledge cache directory.
class FileVisualExtractor : public VisualExtractor {
 public:
  explicit FileVisualExtractor(const std::filesystem::path& cache_dir)
      : reader_(cache_dir) {}

  PerceptOutput extract(const VideoClip& clip,
                        chat::LabelMode /*label_mode*/) const override {
    harness::KnowledgeBundle b = reader_.bundle(clip.sample_id);
    return PerceptOutput{b.f_v, b.s};
  }

  Eigen::Index feature_dim() const override {
    auto ids = reader_.sample_ids();
    if (ids.empty()) return 0;
    return reader_.bundle(ids.front()).f_v.cols();
  }

 private:
  harness::KnowledgeCacheReader reader_;
};

/// Runs the extractor and enforces the output contract: one token per frame,
/// scores in [0,1], single-label scores summing to 1.
inline PerceptOutput extract_visual_knowledge(const VideoClip& clip,
                                              const VisualExtractor& extractor,
                                              chat::LabelMode label_mode) {
  PerceptOutput out = extractor.extract(clip, label_mode);
  if (out.f_v.rows() != clip.t) {
    throw ShapeError("extract_visual_knowledge: expected one token per frame");
  }
  check_feature_matrix(out.f_v, "f_v");
  if (out.s.empty()) {
    throw InvalidInputError("extract_visual_knowledge: empty score vector");
  }
  double sum = 0.0;
  for (float v : out.s) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw InvalidInputError("extract_visual_knowledge: scores must be in [0,1]");
    }
    sum += v;
  }
  if (label_mode == chat::LabelMode::kSingle && std::abs(sum - 1.0) > 1e-6) {
    throw InvalidInputError(
        "extract_visual_knowledge: single-label scores must sum to 1");
  }
  return out;
}

}  // namespace pca::percept
