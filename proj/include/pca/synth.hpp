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

// Synthetic task generator. Each clip carries two independent signals:
//  - the true label, encoded temporally (which frame is brightened in
//    channel 0), which pools away in frame-averaged statistics and is only
//    recoverable by a model that looks at individual frames;
//  - a knowledge signal, encoded in the per-channel pixel variances, which
//    the mock extractor's frame-pooled confidence head picks up. The
//    knowledge signal agrees with the true label with probability
//    knowledge_informativeness.
// Planting inverts the extractor head: per class, the generator searches the
// feasible variance box for the pattern that maximizes that class's logit
// margin, and it picks an extractor seed whose head separates all classes.
// Samples are then verified against the actual extractor, redrawing the
// distractor noise until the planted class wins the argmax, so at
// informativeness 1.0 the extractor's prediction matches the label by
// construction.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pca/chat.hpp"
#include "pca/config.hpp"
#include "pca/errors.hpp"
#include "pca/pcak.hpp"
#include "pca/percept.hpp"
#include "pca/rng.hpp"

namespace pca::harness {

struct SyntheticTaskSpec {
  int class_count = 8;
  int train_samples = 400;
  int val_samples = 100;
  int frame_count = percept::kDefaultFrameCount;
  int height = 8;
  int width = 8;
  int channels = 3;
  double knowledge_informativeness = 0.9;
  uint64_t seed = 1;
  chat::LabelMode label_mode = chat::LabelMode::kSingle;
  Eigen::Index feature_dim = 16;
  double head_gain = 6.0;

  void validate() const {
    if (class_count < 2) throw ConfigError("synth: class_count must be >= 2");
    if (train_samples < 1 || val_samples < 1) {
      throw ConfigError("synth: both splits need at least one sample");
    }
    if (frame_count < 1 || height < 1 || width < 1 || channels < 1) {
      throw ConfigError("synth: dims must be positive");
    }
    if ((height * width) % 2 != 0) {
      throw ConfigError("synth: height*width must be even for exact statistics");
    }
    if (knowledge_informativeness < 0.0 || knowledge_informativeness > 1.0) {
      throw ConfigError("synth: knowledge_informativeness must be in [0,1]");
    }
  }
};

inline SyntheticTaskSpec synthetic_spec_from_json(const nlohmann::json& j) {
  detail::check_keys(j,
                     {"class_count", "train_samples", "val_samples", "frame_count",
                      "height", "width", "channels", "knowledge_informativeness",
                      "seed", "label_mode", "feature_dim", "head_gain"},
                     "synthetic spec");
  SyntheticTaskSpec s;
  detail::maybe(j, "class_count", s.class_count);
  detail::maybe(j, "train_samples", s.train_samples);
  detail::maybe(j, "val_samples", s.val_samples);
  detail::maybe(j, "frame_count", s.frame_count);
  detail::maybe(j, "height", s.height);
  detail::maybe(j, "width", s.width);
  detail::maybe(j, "channels", s.channels);
  detail::maybe(j, "knowledge_informativeness", s.knowledge_informativeness);
  detail::maybe(j, "seed", s.seed);
  if (j.contains("label_mode")) {
    s.label_mode = chat::label_mode_from_name(j.at("label_mode").get<std::string>());
  }
  long fd = s.feature_dim;
  detail::maybe(j, "feature_dim", fd);
  s.feature_dim = fd;
  detail::maybe(j, "head_gain", s.head_gain);
  s.validate();
  return s;
}

inline SyntheticTaskSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingAssetError("synthetic spec not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("synthetic spec parse error: " + std::string(e.what()));
  }
  return synthetic_spec_from_json(j);
}

inline std::vector<std::string> default_label_names(int class_count) {
  static const char* kActions[] = {
      "running",  "walking",  "jumping",  "waving",   "sitting",
      "standing", "climbing", "throwing", "catching", "pushing",
      "pulling",  "opening",  "closing",  "reading",  "typing",
      "drinking", "pouring",  "carrying", "kicking",  "clapping"};
  std::vector<std::string> names;
  for (int k = 0; k < class_count; ++k) {
    if (k < static_cast<int>(std::size(kActions))) {
      names.emplace_back(kActions[k]);
    } else {
      names.emplace_back("action" + std::to_string(k));
    }
  }
  return names;
}

struct DatasetMeta {
  int class_count = 0;
  chat::LabelMode label_mode = chat::LabelMode::kSingle;
  int frame_count = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  double knowledge_informativeness = 0.0;
  uint64_t seed = 0;
  std::vector<std::string> label_names;
  uint64_t extractor_seed = 0;
  Eigen::Index feature_dim = 0;
  double head_gain = 0.0;
  std::map<std::string, std::vector<std::string>> splits;
};

struct Dataset {
  std::filesystem::path dir;
  DatasetMeta meta;
  std::map<std::string, std::vector<float>> labels;

  const std::vector<std::string>& split(const std::string& name) const {
    auto it = meta.splits.find(name);
    if (it == meta.splits.end()) {
      throw MissingAssetError("dataset has no split named '" + name + "'");
    }
    return it->second;
  }

  const std::vector<float>& label(const std::string& sample_id) const {
    auto it = labels.find(sample_id);
    if (it == labels.end()) {
      throw MissingAssetError("dataset has no label for sample " + sample_id);
    }
    return it->second;
  }

  percept::VideoClip clip(const std::string& sample_id) const {
    auto path = dir / "clips" / (sample_id + ".clip");
    percept::VideoClip c = percept::load_clip_file(path, sample_id);
    if (c.t != meta.frame_count) {
      throw ShapeError("dataset clip " + sample_id +
                       " has unexpected frame count");
    }
    return c;
  }
};

namespace synth_detail {

// Planted-signal constants. Means carry the temporal label pattern plus
// distractor noise; variances carry the knowledge class pattern. The
// variance box is centered on the extractor's reference variance so the
// head's response to a planted pattern is dominated by the pattern itself.
inline constexpr double kBaseMean = 0.5;
inline constexpr double kMeanLo = 0.35;
inline constexpr double kMeanHi = 0.65;
inline constexpr double kTemporalBoost = 0.08;
inline constexpr double kMeanNoise = 0.055;
inline constexpr double kVarLo = 0.047;
inline constexpr double kVarHi = 0.120;
inline constexpr double kWeakScale = 0.45;
inline constexpr double kStrongProb = 0.65;
inline constexpr double kSeedMarginNeed = 0.5;
inline constexpr int kVarGridLevels = 9;
inline constexpr int kSeedCandidates = 64;
inline constexpr int kNoiseAttempts = 40;
inline constexpr int kVarEscalations = 3;

/// Best per-channel variance pattern for each class under a given head:
/// grid-search the feasible box for the pattern maximizing the class's logit
/// margin over all other classes (means held at their nominal values).
/// Returns one variance vector per class plus the worst-case margin.
struct PlantedCode {
  std::vector<std::vector<double>> class_vars;
  double min_margin = 0.0;
};

inline PlantedCode solve_variance_code(const Mat<double>& head, int channels,
                                       int class_count) {
  const double ref = percept::MockVisualExtractor::kRefVar;
  PlantedCode code;
  code.class_vars.assign(static_cast<size_t>(class_count),
                         std::vector<double>(static_cast<size_t>(channels), ref));
  code.min_margin = std::numeric_limits<double>::infinity();

  const int grid = kVarGridLevels;
  std::vector<int> digits(static_cast<size_t>(channels), 0);
  std::vector<double> candidate(static_cast<size_t>(channels));
  std::vector<double> best_margin(static_cast<size_t>(class_count),
                                  -std::numeric_limits<double>::infinity());

  bool done = false;
  while (!done) {
    for (int ch = 0; ch < channels; ++ch) {
      double t = static_cast<double>(digits[static_cast<size_t>(ch)]) / (grid - 1);
      candidate[static_cast<size_t>(ch)] = kVarLo + t * (kVarHi - kVarLo);
    }
    // logits restricted to the variance half of the standardized statistics
    std::vector<double> logits(static_cast<size_t>(class_count), 0.0);
    for (int c = 0; c < class_count; ++c) {
      double acc = 0.0;
      for (int ch = 0; ch < channels; ++ch) {
        double z = (candidate[static_cast<size_t>(ch)] - ref) / ref;
        acc += z * head(channels + ch, c);
      }
      logits[static_cast<size_t>(c)] = acc;
    }
    for (int k = 0; k < class_count; ++k) {
      double runner_up = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < class_count; ++c) {
        if (c != k) runner_up = std::max(runner_up, logits[static_cast<size_t>(c)]);
      }
      double margin = logits[static_cast<size_t>(k)] - runner_up;
      if (margin > best_margin[static_cast<size_t>(k)]) {
        best_margin[static_cast<size_t>(k)] = margin;
        code.class_vars[static_cast<size_t>(k)] = candidate;
      }
    }
    // next grid point
    done = true;
    for (int ch = 0; ch < channels; ++ch) {
      if (++digits[static_cast<size_t>(ch)] < grid) {
        done = false;
        break;
      }
      digits[static_cast<size_t>(ch)] = 0;
    }
  }
  for (double m : best_margin) code.min_margin = std::min(code.min_margin, m);
  return code;
}

/// Picks the first candidate extractor seed whose head separates every class
/// with a comfortable margin, together with the solved per-class patterns.
struct SelectedExtractor {
  uint64_t seed = 0;
  PlantedCode code;
};

inline SelectedExtractor select_extractor(const SyntheticTaskSpec& spec) {
  SelectedExtractor best;
  double best_margin = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < kSeedCandidates; ++i) {
    uint64_t candidate =
        derive_seed(spec.seed, "extractor", static_cast<uint64_t>(i));
    percept::MockVisualExtractor ex(candidate, spec.feature_dim, spec.class_count,
                                    spec.head_gain);
    PlantedCode code =
        solve_variance_code(ex.head_matrix(2 * spec.channels), spec.channels,
                            spec.class_count);
    if (code.min_margin > best_margin) {
      best_margin = code.min_margin;
      best.seed = candidate;
      best.code = std::move(code);
    }
    if (best_margin >= kSeedMarginNeed) break;
  }
  return best;
}

/// Variance pattern scaled toward the neutral reference for weak samples.
inline std::vector<double> scaled_vars(const std::vector<double>& vars,
                                       double scale) {
  const double ref = percept::MockVisualExtractor::kRefVar;
  std::vector<double> out(vars.size());
  for (size_t i = 0; i < vars.size(); ++i) {
    out[i] = ref + (vars[i] - ref) * scale;
  }
  return out;
}

/// Builds a clip with exact per-frame channel means and variances: every
/// pixel sits at mean +/- sqrt(var) in a checkerboard over the flat index.
inline percept::VideoClip build_clip(const std::string& id,
                                     const SyntheticTaskSpec& spec,
                                     const std::vector<int>& label_set,
                                     const std::vector<double>& vars, Rng& noise) {
  percept::VideoClip clip;
  clip.sample_id = id;
  clip.t = spec.frame_count;
  clip.h = spec.height;
  clip.w = spec.width;
  clip.c = spec.channels;
  clip.frames.resize(static_cast<size_t>(clip.t) * clip.h * clip.w * clip.c);

  for (int f = 0; f < clip.t; ++f) {
    for (int ch = 0; ch < clip.c; ++ch) {
      double mean = kBaseMean + noise.uniform(-kMeanNoise, kMeanNoise);
      if (ch == 0) {
        for (int y : label_set) {
          if (y % spec.frame_count == f) mean += kTemporalBoost;
        }
      }
      mean = std::clamp(mean, kMeanLo, kMeanHi);
      const double s = std::sqrt(vars[static_cast<size_t>(ch)]);
      for (int y = 0; y < clip.h; ++y) {
        for (int x = 0; x < clip.w; ++x) {
          const size_t flat = static_cast<size_t>(y) * clip.w + x;
          clip.at(f, y, x, ch) =
              static_cast<float>(flat % 2 == 0 ? mean + s : mean - s);
        }
      }
    }
  }
  return clip;
}

inline percept::VideoClip make_mask(const percept::VideoClip& clip) {
  percept::VideoClip mask = clip;
  for (int f = 0; f < clip.t; ++f) {
    for (int ch = 0; ch < clip.c; ++ch) {
      double mean = 0.0;
      for (int y = 0; y < clip.h; ++y) {
        for (int x = 0; x < clip.w; ++x) mean += clip.at(f, y, x, ch);
      }
      mean /= clip.h * clip.w;
      for (int y = 0; y < clip.h; ++y) {
        for (int x = 0; x < clip.w; ++x) {
          mask.at(f, y, x, ch) = clip.at(f, y, x, ch) >= mean ? 1.0f : 0.0f;
        }
      }
    }
  }
  return mask;
}

inline std::string caption_for(const std::string& label_name, Rng& rng) {
  static const char* kPhrases[] = {"in the dark", "on the street", "indoors",
                                   "near the camera", "in the distance"};
  return "a person " + label_name + " " + kPhrases[rng.uniform_index(5)];
}

inline std::string explanation_for(const std::string& label_name) {
  return "The label " + label_name + " describes a person " + label_name +
         " with clearly visible body movement.";
}

}  // namespace synth_detail

/// Generates the dataset directory: clips/, masks/, labels.json,
/// captions.json, explanations.json, meta.json and a ready-to-use
/// experiment config.json wired to this dataset's extractor settings.
/// Deterministic per spec; re-running produces byte-identical output.
inline void generate_synthetic(const SyntheticTaskSpec& spec,
                               const std::filesystem::path& out_dir) {
  namespace sd = synth_detail;
  spec.validate();
  std::filesystem::create_directories(out_dir / "clips");
  std::filesystem::create_directories(out_dir / "masks");

  const int total = spec.train_samples + spec.val_samples;
  const int k_classes = spec.class_count;
  const auto label_names = default_label_names(k_classes);
  sd::SelectedExtractor selected = sd::select_extractor(spec);
  percept::MockVisualExtractor extractor(selected.seed, spec.feature_dim,
                                         k_classes, spec.head_gain);

  nlohmann::ordered_json labels_json;
  nlohmann::ordered_json captions_json;
  std::vector<std::string> train_ids, val_ids;

  for (int idx = 0; idx < total; ++idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05d", idx);
    const std::string id(buf);
    Rng rng(derive_seed(spec.seed, "sample", static_cast<uint64_t>(idx)));

    // True label(s).
    std::vector<int> label_set;
    if (spec.label_mode == chat::LabelMode::kSingle) {
      label_set.push_back(static_cast<int>(rng.uniform_index(k_classes)));
    } else {
      int n = 1 + static_cast<int>(rng.uniform_index(std::min(3, k_classes)));
      while (static_cast<int>(label_set.size()) < n) {
        int y = static_cast<int>(rng.uniform_index(k_classes));
        if (std::find(label_set.begin(), label_set.end(), y) == label_set.end()) {
          label_set.push_back(y);
        }
      }
      std::sort(label_set.begin(), label_set.end());
    }

    // Knowledge class: the primary label with probability
    // knowledge_informativeness, otherwise redrawn uniformly over all
    // classes, so informativeness 0 leaves it independent of the label.
    const int primary = label_set.front();
    int knowledge_class = primary;
    if (rng.uniform() > spec.knowledge_informativeness) {
      knowledge_class = static_cast<int>(rng.uniform_index(k_classes));
    }

    double scale = rng.uniform() < sd::kStrongProb ? 1.0 : sd::kWeakScale;
    const auto& class_vars =
        selected.code.class_vars[static_cast<size_t>(knowledge_class)];

    percept::VideoClip clip;
    bool planted = false;
    for (int esc = 0; esc <= sd::kVarEscalations && !planted; ++esc) {
      auto vars = sd::scaled_vars(class_vars, scale);
      for (int attempt = 0; attempt < sd::kNoiseAttempts; ++attempt) {
        Rng noise(derive_seed(spec.seed, "noise",
                              (static_cast<uint64_t>(idx) << 20) ^
                                  (static_cast<uint64_t>(esc) << 10) ^
                                  static_cast<uint64_t>(attempt)));
        clip = sd::build_clip(id, spec, label_set, vars, noise);
        if (spec.label_mode == chat::LabelMode::kMulti) {
          planted = true;  // logistic scores; no argmax contract to enforce
          break;
        }
        auto out = extractor.extract(clip, spec.label_mode);
        int argmax = static_cast<int>(std::max_element(out.s.begin(), out.s.end()) -
                                      out.s.begin());
        if (argmax == knowledge_class) {
          planted = true;
          break;
        }
      }
      if (!planted) scale = std::min(scale * 1.45, 1.0);
    }

    pcak_write(out_dir / "clips" / (id + ".clip"), clip.to_pcak());
    pcak_write(out_dir / "masks" / (id + ".mask"),
               sd::make_mask(clip).to_pcak());

    std::vector<float> label_vec(static_cast<size_t>(k_classes), 0.0f);
    for (int y : label_set) label_vec[static_cast<size_t>(y)] = 1.0f;
    labels_json[id] = label_vec;
    Rng caption_rng(derive_seed(spec.seed, "caption", static_cast<uint64_t>(idx)));
    captions_json[id] = sd::caption_for(
        label_names[static_cast<size_t>(knowledge_class)], caption_rng);

    (idx < spec.train_samples ? train_ids : val_ids).push_back(id);
  }

  nlohmann::ordered_json explanations_json;
  for (const auto& name : label_names) {
    explanations_json[name] = sd::explanation_for(name);
  }

  nlohmann::ordered_json meta;
  meta["class_count"] = k_classes;
  meta["label_mode"] = chat::label_mode_name(spec.label_mode);
  meta["frame_count"] = spec.frame_count;
  meta["height"] = spec.height;
  meta["width"] = spec.width;
  meta["channels"] = spec.channels;
  meta["knowledge_informativeness"] = spec.knowledge_informativeness;
  meta["seed"] = spec.seed;
  meta["label_names"] = label_names;
  meta["extractor"] = {{"seed", selected.seed},
                       {"feature_dim", static_cast<long>(spec.feature_dim)},
                       {"head_gain", spec.head_gain}};
  meta["splits"] = {{"train", train_ids}, {"val", val_ids}};

  auto dump = [&](const std::string& name, const nlohmann::ordered_json& j) {
    std::ofstream f(out_dir / name, std::ios::trunc);
    if (!f) throw MissingAssetError("cannot write " + (out_dir / name).string());
    f << j.dump(2) << "\n";
  };
  dump("labels.json", labels_json);
  dump("captions.json", captions_json);
  dump("explanations.json", explanations_json);
  dump("meta.json", meta);

  // Ready-to-use experiment config matching this dataset.
  ExperimentConfig cfg;
  cfg.train.label_mode = spec.label_mode;
  cfg.backbone.label_mode = spec.label_mode;
  cfg.backbone.class_count = k_classes;
  cfg.backbone.input_dim = spec.channels;
  cfg.backbone.token_count = spec.frame_count;
  cfg.percept.extractor_seed = selected.seed;
  cfg.percept.feature_dim = spec.feature_dim;
  cfg.percept.head_gain = spec.head_gain;
  dump("config.json", experiment_config_to_json(cfg));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) {
    throw MissingAssetError("dataset meta not found: " + (dir / "meta.json").string());
  }
  nlohmann::json meta = nlohmann::json::parse(mf);

  Dataset ds;
  ds.dir = dir;
  ds.meta.class_count = meta.at("class_count").get<int>();
  ds.meta.label_mode =
      chat::label_mode_from_name(meta.at("label_mode").get<std::string>());
  ds.meta.frame_count = meta.at("frame_count").get<int>();
  ds.meta.height = meta.at("height").get<int>();
  ds.meta.width = meta.at("width").get<int>();
  ds.meta.channels = meta.at("channels").get<int>();
  ds.meta.knowledge_informativeness =
      meta.at("knowledge_informativeness").get<double>();
  ds.meta.seed = meta.at("seed").get<uint64_t>();
  ds.meta.label_names = meta.at("label_names").get<std::vector<std::string>>();
  ds.meta.extractor_seed = meta.at("extractor").at("seed").get<uint64_t>();
  ds.meta.feature_dim = meta.at("extractor").at("feature_dim").get<long>();
  ds.meta.head_gain = meta.at("extractor").at("head_gain").get<double>();
  for (auto it = meta.at("splits").begin(); it != meta.at("splits").end(); ++it) {
    ds.meta.splits[it.key()] = it.value().get<std::vector<std::string>>();
  }

  std::ifstream lf(dir / "labels.json");
  if (!lf) {
    throw MissingAssetError("dataset labels not found: " +
                            (dir / "labels.json").string());
  }
  nlohmann::json labels = nlohmann::json::parse(lf);
  for (auto it = labels.begin(); it != labels.end(); ++it) {
    ds.labels[it.key()] = it.value().get<std::vector<float>>();
  }
  return ds;
}

}  // namespace pca::harness
