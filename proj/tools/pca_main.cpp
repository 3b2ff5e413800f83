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

// pca: knowledge-transfer pipeline driver.
//   gen-synth    generate a synthetic dataset
//   build-cache  run the percept+chat pass and persist knowledge bundles
//   train        train the adapter-equipped backbone on a cached dataset
//   eval         evaluate a checkpoint on a split with selected knowledge
//   ablate       sweep one configuration axis and print a comparison table
//   gradcheck    verify analytic gradients against central differences

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pca/config.hpp"
#include "pca/evaluate.hpp"
#include "pca/gradcheck.hpp"
#include "pca/pipeline.hpp"
#include "pca/synth.hpp"
#include "pca/train.hpp"

namespace fs = std::filesystem;
using namespace pca;
using namespace pca::harness;

namespace {

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  if (out.empty()) throw ConfigError("ablate: --values must list at least one value");
  return out;
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["micro_f1"] = r.micro_f1;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["map"] = r.map;
  return j;
}

int run_gen_synth(const std::string& spec_path, const std::string& out) {
  SyntheticTaskSpec spec = load_synthetic_spec(spec_path);
  generate_synthetic(spec, out);
  std::printf("generated %d train / %d val samples with %d classes in %s\n",
              spec.train_samples, spec.val_samples, spec.class_count,
              out.c_str());
  return kExitOk;
}

int run_build_cache(const std::string& data, const std::string& config,
                    const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config);
  Dataset ds = load_dataset(data);
  build_knowledge_cache(cfg, ds, out);
  KnowledgeCacheReader reader(out);
  std::printf("knowledge cache: %zu samples, config hash %s, at %s\n",
              reader.sample_ids().size(), reader.config_hash().c_str(),
              out.c_str());
  return kExitOk;
}

int run_train(const std::string& config, const std::string& data,
              const std::string& cache, const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config);
  Dataset ds = load_dataset(data);
  KnowledgeCacheReader reader(cache);
  TrainResult result = run_training(cfg, ds, reader, out);
  nlohmann::ordered_json summary;
  summary["checkpoint"] = result.final_checkpoint.string();
  summary["log"] = result.log_path.string();
  summary["final_mean_loss"] = result.final_mean_loss;
  summary["val"] = report_to_json(result.final_val);
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

int run_eval(const std::string& checkpoint, const std::string& split,
             const std::string& knowledge, const std::string& data,
             const std::string& cache) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  Dataset ds = load_dataset(data);
  KnowledgeCacheReader reader(cache);
  if (reader.config_hash() != ckpt.config_hash) {
    throw ConfigError("checkpoint and knowledge cache carry different config "
                      "hashes (" + ckpt.config_hash + " vs " +
                      reader.config_hash() + ")");
  }
  EvalOutput out = evaluate_model(ckpt.model, ds, reader, split,
                                  knowledge_mode_from_name(knowledge));
  nlohmann::ordered_json j;
  j["split"] = split;
  j["knowledge"] = knowledge;
  j["metrics"] = report_to_json(out.report);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run_ablate(const std::string& axis, const std::string& values_csv,
               const std::string& config, const std::string& data,
               const std::string& out) {
  ExperimentConfig base = load_experiment_config(config);
  Dataset ds = load_dataset(data);
  std::vector<std::string> values = split_values(values_csv);
  fs::create_directories(out);

  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::printf("%-12s %-10s %-10s %-10s %-10s\n", axis.c_str(), "micro_f1",
              "top1", "top5", "map");
  for (const std::string& value : values) {
    ExperimentConfig cfg = base;
    if (axis == "variant") {
      cfg.train.variant = adapt::variant_from_name(value);
    } else if (axis == "sigma") {
      cfg.train.sigma = std::stod(value);
    } else if (axis == "block-num") {
      cfg.train.block_num = std::stoi(value);
      cfg.plan = backbone::InsertionPlan::default_plan(cfg.backbone.depth,
                                                       cfg.train.block_num, true);
    } else if (axis == "query-dim") {
      cfg.train.prompt_dim = std::stol(value);
    } else if (axis == "knowledge") {
      cfg.train.knowledge_mode = knowledge_mode_from_name(value);
    } else {
      throw ConfigError("ablate: unknown axis '" + axis + "'");
    }
    cfg.validate();

    fs::path run_dir = fs::path(out) / (axis + "_" + value);
    fs::path cache_dir = fs::path(out) / ("cache_" + cache_config_hash(cfg));
    if (!fs::exists(cache_dir / "index.jsonl")) {
      build_knowledge_cache(cfg, ds, cache_dir);
    }
    KnowledgeCacheReader reader(cache_dir);
    TrainResult result = run_training(cfg, ds, reader, run_dir);

    std::printf("%-12s %-10.4f %-10.4f %-10.4f %-10.4f\n", value.c_str(),
                result.final_val.micro_f1, result.final_val.top1,
                result.final_val.top5, result.final_val.map);
    nlohmann::ordered_json row;
    row["value"] = value;
    row["val"] = report_to_json(result.final_val);
    row["checkpoint"] = result.final_checkpoint.string();
    rows.push_back(row);
  }

  nlohmann::ordered_json report;
  report["axis"] = axis;
  report["rows"] = rows;
  std::ofstream f(fs::path(out) / "ablate_report.json");
  f << report.dump(2) << "\n";
  return kExitOk;
}

int run_gradcheck(double eps, double tol) {
  // Depth-2 double-precision fixture with two insertion sites and both
  // modalities, gates opened so gradients reach every adapter parameter.
  backbone::BackboneConfig cfg;
  cfg.depth = 2;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.head_dropout = 0.0;
  cfg.label_mode = chat::LabelMode::kSingle;
  cfg.class_count = 3;
  cfg.input_dim = 4;
  cfg.token_count = 3;
  adapt::AdapterDims dims;
  dims.visual_dim = 5;
  dims.text_dim = 4;
  dims.prompt_dim = 8;
  dims.n_prompts = 2;
  dims.n_heads = 2;
  backbone::InsertionPlan plan;
  plan.visual_sites = {0, 1};
  plan.textual_sites = {1};

  auto model = backbone::build_model<double>(cfg, plan, dims,
                                             adapt::StructureVariant::kAdapt, 35);
  model.params.at("adapter.site0.w1")(0, 0) = 0.4;
  model.params.at("adapter.site1.w1")(0, 0) = 0.35;
  model.params.at("adapter.site1.w2")(0, 0) = 0.25;

  Rng rng(derive_seed(35, "gradcheck"));
  Mat<double> tokens = random_normal<double>(3, 4, rng);
  backbone::KnowledgeInput<double> knowledge;
  knowledge.f_v = random_normal<double>(4, 5, rng);
  knowledge.f_t = random_normal<double>(3, 4, rng);
  std::vector<float> target = {0, 1, 0};

  auto eval_loss = [&](const ParamStore<double>& ps) {
    Tape<double> t;
    adapt::LeafMap leaves;
    for (const auto& item : ps.items()) leaves[item.name] = t.leaf(item.value);
    auto m = model;
    m.params = ps;
    int logits = backbone::forward_graph(t, leaves, m, tokens, &knowledge,
                                         backbone::Mode::kTrain, 42);
    return t.value(backbone::loss_graph(t, logits, target, cfg.label_mode))(0, 0);
  };
  DifferentiableLoss<double> loss;
  loss.value = eval_loss;
  loss.gradients = [&](const ParamStore<double>& ps) {
    Tape<double> t;
    adapt::LeafMap leaves;
    for (const auto& item : ps.items()) leaves[item.name] = t.leaf(item.value);
    auto m = model;
    m.params = ps;
    int logits = backbone::forward_graph(t, leaves, m, tokens, &knowledge,
                                         backbone::Mode::kTrain, 42);
    t.backward(backbone::loss_graph(t, logits, target, cfg.label_mode));
    ParamStore<double> grads;
    for (const auto& [name, id] : leaves) grads.add(name, t.grad(id));
    return grads;
  };

  auto report = grad_check(loss, model.params, eps, tol);
  std::printf("gradcheck: %zu parameters, %zu scalars, eps %.1e, tol %.1e\n",
              report.per_param.size(), model.params.scalar_count(), report.eps,
              report.tol);
  for (const auto& p : report.per_param) {
    if (p.max_rel_err >= tol) {
      std::printf("  FAIL %-32s max rel err %.3e\n", p.name.c_str(),
                  p.max_rel_err);
    }
  }
  std::printf("max relative error %.3e -> %s\n", report.max_rel_err,
              report.pass ? "pass" : "FAIL");
  if (!report.pass) {
    throw NumericalError("gradient check failed");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Percept-Chat-Adapt knowledge-transfer pipeline"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, data_dir, config_path, cache_dir;
  std::string checkpoint_path, split_name = "val", knowledge = "both";
  std::string axis, values;
  double eps = 1e-5, tol = 1e-4;

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "synthetic task spec (JSON)")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  auto* cache = app.add_subcommand("build-cache",
                                   "run percept+chat and persist knowledge");
  cache->add_option("--data", data_dir, "dataset directory")->required();
  cache->add_option("--config", config_path, "experiment config (JSON)")->required();
  cache->add_option("--out", out_dir, "cache output directory")->required();

  auto* train = app.add_subcommand("train", "train on a cached dataset");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--cache", cache_dir, "knowledge cache directory")->required();
  train->add_option("--out", out_dir, "run output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--split", split_name, "dataset split name");
  eval->add_option("--knowledge", knowledge, "none|visual|textual|both");
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--cache", cache_dir, "knowledge cache directory")->required();

  auto* ablate = app.add_subcommand("ablate", "sweep one configuration axis");
  ablate->add_option("--axis", axis,
                     "variant|sigma|block-num|query-dim|knowledge")->required();
  ablate->add_option("--values", values, "comma-separated values")->required();
  ablate->add_option("--config", config_path, "base experiment config")->required();
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--out", out_dir, "sweep output directory")->required();

  auto* gc = app.add_subcommand("gradcheck",
                                "check analytic gradients on a fixture model");
  gc->add_option("--eps", eps, "finite-difference step");
  gc->add_option("--tol", tol, "max relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return run_gen_synth(spec_path, out_dir);
    if (cache->parsed()) return run_build_cache(data_dir, config_path, out_dir);
    if (train->parsed()) return run_train(config_path, data_dir, cache_dir, out_dir);
    if (eval->parsed()) {
      return run_eval(checkpoint_path, split_name, knowledge, data_dir, cache_dir);
    }
    if (ablate->parsed()) {
      return run_ablate(axis, values, config_path, data_dir, out_dir);
    }
    if (gc->parsed()) return run_gradcheck(eps, tol);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const MissingAssetError& e) {
    std::fprintf(stderr, "missing asset: %s\n", e.what());
    return kExitMissingAsset;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const DeterminismError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
