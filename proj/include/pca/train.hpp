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

// Training loop: AdamW with decoupled weight decay, warmup+cosine schedule,
// deterministic batch order per seed, per-epoch checkpoints and a JSONL log
// with one record per optimizer step plus one per epoch.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pca/backbone.hpp"
#include "pca/config.hpp"
#include "pca/evaluate.hpp"
#include "pca/knowledge_cache.hpp"
#include "pca/pcak.hpp"
#include "pca/percept.hpp"
#include "pca/schedule.hpp"
#include "pca/synth.hpp"

namespace pca::harness {

/// AdamW with decoupled weight decay. State is kept per named parameter and
/// sized lazily on the first step.
template <typename T>
class AdamW {
 public:
  AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

  void step(ParamStore<T>& params, const ParamStore<T>& grads, double lr,
            const std::function<bool(const std::string&)>& frozen = {}) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& item : params.items()) {
      if (frozen && frozen(item.name)) continue;
      const Mat<T>& g = grads.at(item.name);
      auto [mit, inserted] = moments_.try_emplace(item.name);
      if (inserted) {
        mit->second.m = Mat<T>::Zero(g.rows(), g.cols());
        mit->second.v = Mat<T>::Zero(g.rows(), g.cols());
      }
      Mat<T>& m = mit->second.m;
      Mat<T>& v = mit->second.v;
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        const double gi = static_cast<double>(g.data()[i]);
        double mi = beta1_ * static_cast<double>(m.data()[i]) + (1.0 - beta1_) * gi;
        double vi =
            beta2_ * static_cast<double>(v.data()[i]) + (1.0 - beta2_) * gi * gi;
        m.data()[i] = static_cast<T>(mi);
        v.data()[i] = static_cast<T>(vi);
        const double m_hat = mi / bc1;
        const double v_hat = vi / bc2;
        const double p = static_cast<double>(item.value.data()[i]);
        item.value.data()[i] = static_cast<T>(
            p - lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * p));
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    Mat<T> m;
    Mat<T> v;
  };
  double beta1_, beta2_, weight_decay_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

// --- checkpoints ------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  backbone::ModelState<float> model;
  std::string config_hash;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const backbone::ModelState<float>& model,
                            const std::string& config_hash) {
  nlohmann::ordered_json header;
  header["config_hash"] = config_hash;
  header["step"] = model.step;
  header["seed"] = model.seed;
  header["variant"] = adapt::variant_name(model.variant);
  header["label_mode"] = chat::label_mode_name(model.cfg.label_mode);
  header["backbone"] = backbone_config_to_json(model.cfg);
  header["plan"] = {{"visual_sites", model.plan.visual_sites},
                    {"textual_sites", model.plan.textual_sites}};
  header["adapter_dims"] = {
      {"visual_dim", static_cast<long>(model.adapter_dims.visual_dim)},
      {"text_dim", static_cast<long>(model.adapter_dims.text_dim)},
      {"prompt_dim", static_cast<long>(model.adapter_dims.prompt_dim)},
      {"n_prompts", static_cast<long>(model.adapter_dims.n_prompts)},
      {"n_heads", model.adapter_dims.n_heads}};
  std::vector<std::string> names;
  for (const auto& item : model.params.items()) names.push_back(item.name);
  header["params"] = names;

  std::string bytes = "PCKP";
  pca::detail::put_u32_le(bytes, kCheckpointVersion);
  std::string header_str = header.dump();
  pca::detail::put_u32_le(bytes, static_cast<uint32_t>(header_str.size()));
  bytes += header_str;
  for (const auto& item : model.params.items()) {
    std::string blob = pcak_encode(pcak_from_matrix(item.value));
    pca::detail::put_u32_le(bytes, static_cast<uint32_t>(blob.size()));
    bytes += blob;
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw MissingAssetError("cannot write checkpoint: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingAssetError("checkpoint not found: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "PCKP") != 0) {
    throw InvalidInputError("checkpoint: bad magic in " + path.string());
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  uint32_t version = pca::detail::get_u32_le(p + 4);
  if (version != kCheckpointVersion) {
    throw InvalidInputError("checkpoint: unsupported version");
  }
  uint32_t header_len = pca::detail::get_u32_le(p + 8);
  size_t offset = 12;
  if (bytes.size() < offset + header_len) {
    throw InvalidInputError("checkpoint: truncated header");
  }
  nlohmann::json header = nlohmann::json::parse(bytes.substr(offset, header_len));
  offset += header_len;

  Checkpoint ckpt;
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  backbone::ModelState<float>& model = ckpt.model;
  model.step = header.at("step").get<int64_t>();
  model.seed = header.at("seed").get<uint64_t>();
  model.variant = adapt::variant_from_name(header.at("variant").get<std::string>());
  model.cfg = backbone_config_from_json(
      header.at("backbone"),
      chat::label_mode_from_name(header.at("label_mode").get<std::string>()));
  model.plan.visual_sites =
      header.at("plan").at("visual_sites").get<std::vector<int>>();
  model.plan.textual_sites =
      header.at("plan").at("textual_sites").get<std::vector<int>>();
  const auto& ad = header.at("adapter_dims");
  model.adapter_dims.block_dim = model.cfg.d_model;
  model.adapter_dims.visual_dim = ad.at("visual_dim").get<long>();
  model.adapter_dims.text_dim = ad.at("text_dim").get<long>();
  model.adapter_dims.prompt_dim = ad.at("prompt_dim").get<long>();
  model.adapter_dims.n_prompts = ad.at("n_prompts").get<long>();
  model.adapter_dims.n_heads = ad.at("n_heads").get<int>();

  for (const auto& name : header.at("params")) {
    if (bytes.size() < offset + 4) {
      throw InvalidInputError("checkpoint: truncated parameter table");
    }
    uint32_t blob_len = pca::detail::get_u32_le(
        reinterpret_cast<const unsigned char*>(bytes.data()) + offset);
    offset += 4;
    if (bytes.size() < offset + blob_len) {
      throw InvalidInputError("checkpoint: truncated parameter blob");
    }
    PcakTensor t = pcak_decode(bytes.substr(offset, blob_len),
                               "checkpoint param " + name.get<std::string>());
    offset += blob_len;
    model.params.add(name.get<std::string>(),
                     pcak_to_matrix<float>(t, name.get<std::string>()));
  }
  return ckpt;
}

// --- training loop ----------------------------------------------------------

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log_path;
  EvalReport final_val;
  double final_mean_loss = 0.0;
};

inline backbone::ModelState<float> build_model_from_config(
    const ExperimentConfig& cfg) {
  return backbone::build_model<float>(cfg.backbone, cfg.plan, cfg.adapter_dims(),
                                      cfg.train.variant, cfg.train.seed);
}

inline TrainResult run_training(const ExperimentConfig& cfg, const Dataset& dataset,
                                const KnowledgeCacheReader& cache,
                                const std::filesystem::path& out_dir) {
  cfg.validate();
  const std::string expected_hash = cache_config_hash(cfg);
  if (cache.config_hash() != expected_hash) {
    throw ConfigError("knowledge cache was built under a different configuration "
                      "(hash " + cache.config_hash() + ", expected " +
                      expected_hash + "); rebuild it");
  }
  std::filesystem::create_directories(out_dir);

  const auto& train_ids = dataset.split("train");
  const TrainConfig& tc = cfg.train;

  // Preload tokens and knowledge; a missing bundle fails here, named.
  std::map<std::string, Mat<float>> tokens;
  std::map<std::string, backbone::KnowledgeInput<float>> knowledge;
  std::map<std::string, std::vector<float>> targets;
  for (const auto& id : train_ids) {
    KnowledgeBundle bundle = cache.bundle(id);
    tokens[id] = percept::clip_tokens<float>(dataset.clip(id));
    knowledge[id] = knowledge_view(bundle, tc.knowledge_mode);
    targets[id] = bundle.label;
  }

  auto model = build_model_from_config(cfg);
  AdamW<float> optimizer(tc.beta1, tc.beta2, tc.weight_decay);
  std::function<bool(const std::string&)> frozen;
  if (tc.freeze_backbone) {
    frozen = [](const std::string& name) {
      return name.rfind("backbone.", 0) == 0;
    };
  }

  const long n = static_cast<long>(train_ids.size());
  const long steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;

  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) {
    throw MissingAssetError("cannot write training log in " + out_dir.string());
  }

  TrainResult result;
  result.log_path = out_dir / "train_log.jsonl";
  long step = 0;
  for (int epoch = 0; epoch < tc.total_epochs; ++epoch) {
    std::vector<std::string> order = train_ids;
    Rng shuffle_rng(derive_seed(tc.seed, "shuffle", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }

    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (long start = 0; start < n; start += tc.batch_size) {
      const long end = std::min(n, start + tc.batch_size);
      Tape<float> tape;
      auto leaves = backbone::register_leaves(tape, model.params);
      std::vector<int> losses;
      for (long i = start; i < end; ++i) {
        const std::string& id = order[static_cast<size_t>(i)];
        uint64_t drop_seed = derive_seed(
            tc.seed, "dropout",
            (static_cast<uint64_t>(step) << 16) | static_cast<uint64_t>(i - start));
        int logits = backbone::forward_graph(tape, leaves, model, tokens.at(id),
                                             &knowledge.at(id),
                                             backbone::Mode::kTrain, drop_seed);
        losses.push_back(
            backbone::loss_graph(tape, logits, targets.at(id), tc.label_mode));
      }
      int loss_node = tape.mean_of_scalars(losses);
      const double loss_value = tape.value(loss_node)(0, 0);
      if (!std::isfinite(loss_value)) {
        throw NumericalError("training diverged: non-finite loss at step " +
                             std::to_string(step));
      }
      tape.backward(loss_node);

      ParamStore<float> grads;
      for (const auto& item : model.params.items()) {
        grads.add(item.name, tape.grad(leaves.at(item.name)));
      }
      const double lr = lr_at_step(step, steps_per_epoch, tc);
      optimizer.step(model.params, grads, lr, frozen);

      nlohmann::ordered_json rec;
      rec["type"] = "step";
      rec["step"] = step;
      rec["epoch"] = epoch;
      rec["lr"] = lr;
      rec["loss"] = loss_value;
      log << rec.dump() << "\n";

      epoch_loss += loss_value;
      ++epoch_batches;
      ++step;
      model.step = step;
    }

    EvalOutput val = evaluate_model(model, dataset, cache, "val", tc.knowledge_mode);
    nlohmann::ordered_json rec;
    rec["type"] = "epoch";
    rec["epoch"] = epoch;
    rec["mean_loss"] = epoch_loss / static_cast<double>(epoch_batches);
    rec["val_micro_f1"] = val.report.micro_f1;
    rec["val_top1"] = val.report.top1;
    rec["val_top5"] = val.report.top5;
    rec["val_map"] = val.report.map;
    log << rec.dump() << "\n";

    save_checkpoint(out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".pckp"),
                    model, expected_hash);
    result.final_val = val.report;
    result.final_mean_loss = epoch_loss / static_cast<double>(epoch_batches);
  }

  result.final_checkpoint = out_dir / "checkpoint_final.pckp";
  save_checkpoint(result.final_checkpoint, model, expected_hash);
  return result;
}

}  // namespace pca::harness
