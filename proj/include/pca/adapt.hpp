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

// Adapt stage: compress external knowledge through normed learnable prompts
// with cross-attention, then fuse the adapted features into backbone block
// features by gated weighted addition. Four fusion structures are supported;
// the full adapt block adds self-attention and FFN on top of the prompt
// compression.

#include <map>
#include <optional>
#include <type_traits>
#include <string>

#include "pca/errors.hpp"
#include "pca/matrix.hpp"
#include "pca/nn.hpp"
#include "pca/tape.hpp"

namespace pca::adapt {

inline constexpr double kLayerNormEps = 1e-5;

enum class StructureVariant { kAddition, kResCross, kResPrompt, kAdapt };

inline std::string variant_name(StructureVariant v) {
  switch (v) {
    case StructureVariant::kAddition: return "addition";
    case StructureVariant::kResCross: return "res_cross";
    case StructureVariant::kResPrompt: return "res_prompt";
    case StructureVariant::kAdapt: return "adapt";
  }
  throw ConfigError("unknown structure variant");
}

inline StructureVariant variant_from_name(const std::string& name) {
  if (name == "addition") return StructureVariant::kAddition;
  if (name == "res_cross") return StructureVariant::kResCross;
  if (name == "res_prompt") return StructureVariant::kResPrompt;
  if (name == "adapt") return StructureVariant::kAdapt;
  throw ConfigError("unknown structure variant: " + name);
}

enum class Modality { kVisual, kTextual };

struct AdapterDims {
  Eigen::Index block_dim = 64;    // backbone feature width at the insertion site
  Eigen::Index visual_dim = 16;   // external visual knowledge width
  Eigen::Index text_dim = 16;     // external textual knowledge width
  Eigen::Index prompt_dim = 128;  // learnable query width
  Eigen::Index n_prompts = 8;
  int n_heads = 4;

  void validate() const {
    if (block_dim < 2 || prompt_dim < 2 || n_prompts < 1) {
      throw ConfigError("adapter dims: block_dim/prompt_dim >= 2, n_prompts >= 1");
    }
    if (prompt_dim % n_heads != 0 || block_dim % n_heads != 0) {
      throw ConfigError("adapter dims: widths must be divisible by n_heads");
    }
  }
};

/// All learnable state of one adapter site. Which members are populated
/// depends on the structure variant; the gates w1, w2 always exist and start
/// at zero, so a freshly inserted adapter is an exact no-op.
template <typename T>
struct AdaptParams {
  StructureVariant variant = StructureVariant::kAdapt;
  AdapterDims dims;
  bool has_textual = false;

  Mat<T> prompts;  // n_prompts x prompt_dim, standard-normal initialized
  nn::AttentionParams<T> compress_v;
  nn::AttentionParams<T> compress_t;
  nn::AttentionParams<T> self_attn;
  nn::FeedForwardParams<T> ffn;
  nn::AttentionParams<T> fuse_v;
  nn::AttentionParams<T> fuse_t;
  Mat<T> add_proj_v;  // visual_dim x block_dim
  Mat<T> add_proj_t;  // text_dim x block_dim
  Mat<T> w1;          // 1x1 gate on visual-adapted features
  Mat<T> w2;          // 1x1 gate on textual-adapted features
};

template <typename T>
AdaptParams<T> make_adapt_params(StructureVariant variant, const AdapterDims& dims,
                                 bool has_textual, uint64_t seed) {
  dims.validate();
  AdaptParams<T> p;
  p.variant = variant;
  p.dims = dims;
  p.has_textual = has_textual;
  p.w1 = Mat<T>::Zero(1, 1);
  p.w2 = Mat<T>::Zero(1, 1);

  const bool prompts_used = variant == StructureVariant::kResPrompt ||
                            variant == StructureVariant::kAdapt;
  if (prompts_used) {
    Rng rng(derive_seed(seed, "prompts"));
    p.prompts = random_normal<T>(dims.n_prompts, dims.prompt_dim, rng);
    Rng rng_cv(derive_seed(seed, "compress_v"));
    p.compress_v = nn::make_attention_params<T>(dims.prompt_dim, dims.visual_dim,
                                                dims.prompt_dim, dims.n_heads, rng_cv);
    if (has_textual) {
      Rng rng_ct(derive_seed(seed, "compress_t"));
      p.compress_t = nn::make_attention_params<T>(dims.prompt_dim, dims.text_dim,
                                                  dims.prompt_dim, dims.n_heads,
                                                  rng_ct);
    }
  }
  if (variant == StructureVariant::kAdapt) {
    Rng rng_sa(derive_seed(seed, "self_attn"));
    p.self_attn = nn::make_attention_params<T>(dims.prompt_dim, dims.prompt_dim,
                                               dims.prompt_dim, dims.n_heads, rng_sa);
    Rng rng_ffn(derive_seed(seed, "ffn"));
    p.ffn = nn::make_feed_forward_params<T>(dims.prompt_dim, 4 * dims.prompt_dim,
                                            dims.prompt_dim, rng_ffn);
  }
  if (variant == StructureVariant::kResCross) {
    Rng rng_fv(derive_seed(seed, "fuse_v"));
    p.fuse_v = nn::make_attention_params<T>(dims.block_dim, dims.visual_dim,
                                            dims.block_dim, dims.n_heads, rng_fv);
    if (has_textual) {
      Rng rng_ft(derive_seed(seed, "fuse_t"));
      p.fuse_t = nn::make_attention_params<T>(dims.block_dim, dims.text_dim,
                                              dims.block_dim, dims.n_heads, rng_ft);
    }
  } else if (prompts_used) {
    Rng rng_fv(derive_seed(seed, "fuse_v"));
    p.fuse_v = nn::make_attention_params<T>(dims.block_dim, dims.prompt_dim,
                                            dims.block_dim, dims.n_heads, rng_fv);
    if (has_textual) {
      Rng rng_ft(derive_seed(seed, "fuse_t"));
      p.fuse_t = nn::make_attention_params<T>(dims.block_dim, dims.prompt_dim,
                                              dims.block_dim, dims.n_heads, rng_ft);
    }
  }
  if (variant == StructureVariant::kAddition) {
    Rng rng_av(derive_seed(seed, "add_proj_v"));
    p.add_proj_v = random_projection<T>(dims.visual_dim, dims.block_dim, rng_av);
    if (has_textual) {
      Rng rng_at(derive_seed(seed, "add_proj_t"));
      p.add_proj_t = random_projection<T>(dims.text_dim, dims.block_dim, rng_at);
    }
  }
  return p;
}

namespace detail {

template <typename T>
void register_attention(ParamStore<T>& store, const std::string& prefix,
                        const nn::AttentionParams<T>& a) {
  store.add(prefix + ".w_q", a.w_q);
  store.add(prefix + ".w_k", a.w_k);
  store.add(prefix + ".w_v", a.w_v);
  store.add(prefix + ".w_o", a.w_o);
}

template <typename T>
nn::AttentionParams<T> load_attention(const ParamStore<T>& store,
                                      const std::string& prefix, int n_heads) {
  nn::AttentionParams<T> a;
  a.w_q = store.at(prefix + ".w_q");
  a.w_k = store.at(prefix + ".w_k");
  a.w_v = store.at(prefix + ".w_v");
  a.w_o = store.at(prefix + ".w_o");
  a.n_heads = n_heads;
  return a;
}

template <typename T>
void register_ffn(ParamStore<T>& store, const std::string& prefix,
                  const nn::FeedForwardParams<T>& f) {
  store.add(prefix + ".w1", f.w1);
  store.add(prefix + ".b1", f.b1);
  store.add(prefix + ".w2", f.w2);
  store.add(prefix + ".b2", f.b2);
}

template <typename T>
nn::FeedForwardParams<T> load_ffn(const ParamStore<T>& store,
                                  const std::string& prefix) {
  nn::FeedForwardParams<T> f;
  f.w1 = store.at(prefix + ".w1");
  f.b1 = store.at(prefix + ".b1");
  f.w2 = store.at(prefix + ".w2");
  f.b2 = store.at(prefix + ".b2");
  return f;
}

}  // namespace detail

template <typename T>
void register_adapt_params(ParamStore<T>& store, const std::string& prefix,
                           const AdaptParams<T>& p) {
  const bool prompts_used = p.variant == StructureVariant::kResPrompt ||
                            p.variant == StructureVariant::kAdapt;
  store.add(prefix + ".w1", p.w1);
  if (p.has_textual) store.add(prefix + ".w2", p.w2);
  if (prompts_used) {
    store.add(prefix + ".prompts", p.prompts);
    detail::register_attention(store, prefix + ".compress_v", p.compress_v);
    if (p.has_textual) {
      detail::register_attention(store, prefix + ".compress_t", p.compress_t);
    }
  }
  if (p.variant == StructureVariant::kAdapt) {
    detail::register_attention(store, prefix + ".self_attn", p.self_attn);
    detail::register_ffn(store, prefix + ".ffn", p.ffn);
  }
  if (p.variant != StructureVariant::kAddition) {
    detail::register_attention(store, prefix + ".fuse_v", p.fuse_v);
    if (p.has_textual) {
      detail::register_attention(store, prefix + ".fuse_t", p.fuse_t);
    }
  } else {
    store.add(prefix + ".add_proj_v", p.add_proj_v);
    if (p.has_textual) store.add(prefix + ".add_proj_t", p.add_proj_t);
  }
}

template <typename T>
AdaptParams<T> load_adapt_params(const ParamStore<T>& store,
                                 const std::string& prefix,
                                 StructureVariant variant, const AdapterDims& dims,
                                 bool has_textual) {
  AdaptParams<T> p;
  p.variant = variant;
  p.dims = dims;
  p.has_textual = has_textual;
  const bool prompts_used = variant == StructureVariant::kResPrompt ||
                            variant == StructureVariant::kAdapt;
  p.w1 = store.at(prefix + ".w1");
  if (has_textual) p.w2 = store.at(prefix + ".w2");
  else p.w2 = Mat<T>::Zero(1, 1);
  if (prompts_used) {
    p.prompts = store.at(prefix + ".prompts");
    p.compress_v = detail::load_attention(store, prefix + ".compress_v", dims.n_heads);
    if (has_textual) {
      p.compress_t = detail::load_attention(store, prefix + ".compress_t", dims.n_heads);
    }
  }
  if (variant == StructureVariant::kAdapt) {
    p.self_attn = detail::load_attention(store, prefix + ".self_attn", dims.n_heads);
    p.ffn = detail::load_ffn(store, prefix + ".ffn");
  }
  if (variant != StructureVariant::kAddition) {
    p.fuse_v = detail::load_attention(store, prefix + ".fuse_v", dims.n_heads);
    if (has_textual) {
      p.fuse_t = detail::load_attention(store, prefix + ".fuse_t", dims.n_heads);
    }
  } else {
    p.add_proj_v = store.at(prefix + ".add_proj_v");
    if (has_textual) p.add_proj_t = store.at(prefix + ".add_proj_t");
  }
  return p;
}

namespace detail {

/// Cross-attention of the normed learnable prompts against knowledge tokens.
template <typename T>
Mat<T> compress_ca(const AdaptParams<T>& p, const Mat<T>& f, Modality modality) {
  const nn::AttentionParams<T>& ca =
      modality == Modality::kVisual ? p.compress_v : p.compress_t;
  Mat<T> normed = nn::layer_norm(p.prompts, static_cast<T>(kLayerNormEps));
  return nn::multi_head_attention(normed, f, ca);
}

}  // namespace detail

/// Compresses variable-length knowledge tokens into n_prompts adapted tokens:
/// cross-attention with the normed learnable prompts, then pre-norm residual
/// self-attention and FFN.
template <typename T>
Mat<T> compress_knowledge(const AdaptParams<T>& p, const Mat<T>& f,
                          Modality modality) {
  check_feature_matrix(f, "compress_knowledge input");
  const Eigen::Index expected =
      modality == Modality::kVisual ? p.dims.visual_dim : p.dims.text_dim;
  if (f.cols() != expected) {
    throw ShapeError("compress_knowledge: knowledge width " +
                     std::to_string(f.cols()) + " != configured " +
                     std::to_string(expected));
  }
  Mat<T> h = detail::compress_ca(p, f, modality);
  const T eps = static_cast<T>(kLayerNormEps);
  h = h + nn::multi_head_attention(nn::layer_norm(h, eps), nn::layer_norm(h, eps),
                                   p.self_attn);
  h = h + nn::feed_forward(nn::layer_norm(h, eps), p.ffn);
  return h;
}

/// Fuses adapted knowledge into block features by gated weighted addition:
/// out = f_b + w1 * CA(f_b, f_v_tilde) + w2 * CA(f_b, f_t_tilde). A term is
/// skipped entirely when its gate is exactly zero, which keeps the zero-gate
/// output bitwise equal to f_b.
template <typename T>
Mat<T> fuse_into_block(const AdaptParams<T>& p, const Mat<T>& f_b,
                       const Mat<T>& f_v_tilde,
                       const std::optional<Mat<std::type_identity_t<T>>>& f_t_tilde) {
  if (f_b.cols() != p.dims.block_dim) {
    throw ShapeError("fuse_into_block: block width mismatch");
  }
  Mat<T> out = f_b;
  if (p.w1(0, 0) != T(0)) {
    out += p.w1(0, 0) * nn::multi_head_attention(f_b, f_v_tilde, p.fuse_v);
  }
  if (f_t_tilde.has_value() && p.has_textual && p.w2(0, 0) != T(0)) {
    out += p.w2(0, 0) * nn::multi_head_attention(f_b, *f_t_tilde, p.fuse_t);
  }
  return out;
}

namespace detail {

/// Mean-pool knowledge tokens, project to block width, broadcast over block
/// tokens. The dimension-matching mechanism of the plain addition variant.
template <typename T>
Mat<T> pooled_projection(const Mat<T>& f, const Mat<T>& proj, Eigen::Index rows) {
  if (f.cols() != proj.rows()) {
    throw ShapeError("addition variant: knowledge width mismatch");
  }
  Mat<T> pooled = f.colwise().mean();
  Mat<T> projected = pooled * proj;
  Mat<T> out(rows, projected.cols());
  out.rowwise() = projected.row(0);
  return out;
}

}  // namespace detail

/// Runs one of the four fusion structures. All variants accept the same
/// inputs and return a matrix with f_b's shape.
template <typename T>
Mat<T> variant_forward(StructureVariant variant, const AdaptParams<T>& p,
                       const Mat<T>& f_b, const Mat<T>& f_v,
                       const std::optional<Mat<std::type_identity_t<T>>>& f_t) {
  if (variant != p.variant) {
    throw ConfigError("variant_forward: params were built for " +
                      variant_name(p.variant) + ", not " + variant_name(variant));
  }
  check_feature_matrix(f_b, "variant_forward block features");
  const bool textual = f_t.has_value() && p.has_textual;
  switch (variant) {
    case StructureVariant::kAddition: {
      Mat<T> out = f_b;
      if (p.w1(0, 0) != T(0)) {
        out += p.w1(0, 0) *
               detail::pooled_projection(f_v, p.add_proj_v, f_b.rows());
      }
      if (textual && p.w2(0, 0) != T(0)) {
        out += p.w2(0, 0) *
               detail::pooled_projection(*f_t, p.add_proj_t, f_b.rows());
      }
      return out;
    }
    case StructureVariant::kResCross: {
      Mat<T> out = f_b;
      if (p.w1(0, 0) != T(0)) {
        out += p.w1(0, 0) * nn::multi_head_attention(f_b, f_v, p.fuse_v);
      }
      if (textual && p.w2(0, 0) != T(0)) {
        out += p.w2(0, 0) * nn::multi_head_attention(f_b, *f_t, p.fuse_t);
      }
      return out;
    }
    case StructureVariant::kResPrompt: {
      Mat<T> v_tilde = detail::compress_ca(p, f_v, Modality::kVisual);
      std::optional<Mat<T>> t_tilde;
      if (textual) t_tilde = detail::compress_ca(p, *f_t, Modality::kTextual);
      return fuse_into_block(p, f_b, v_tilde, t_tilde);
    }
    case StructureVariant::kAdapt: {
      Mat<T> v_tilde = compress_knowledge(p, f_v, Modality::kVisual);
      std::optional<Mat<T>> t_tilde;
      if (textual) t_tilde = compress_knowledge(p, *f_t, Modality::kTextual);
      return fuse_into_block(p, f_b, v_tilde, t_tilde);
    }
  }
  throw ConfigError("variant_forward: unknown variant");
}

// --- tape graph -------------------------------------------------------------

using LeafMap = std::map<std::string, int>;

namespace detail {

inline TapeAttentionIds bind_attention(const LeafMap& leaves,
                                       const std::string& prefix, int n_heads) {
  TapeAttentionIds ids;
  ids.w_q = leaves.at(prefix + ".w_q");
  ids.w_k = leaves.at(prefix + ".w_k");
  ids.w_v = leaves.at(prefix + ".w_v");
  ids.w_o = leaves.at(prefix + ".w_o");
  ids.n_heads = n_heads;
  return ids;
}

inline TapeFeedForwardIds bind_ffn(const LeafMap& leaves, const std::string& prefix) {
  return TapeFeedForwardIds{leaves.at(prefix + ".w1"), leaves.at(prefix + ".b1"),
                            leaves.at(prefix + ".w2"), leaves.at(prefix + ".b2")};
}

template <typename T>
int tape_compress(Tape<T>& t, const LeafMap& leaves, const std::string& prefix,
                  const AdapterDims& dims, StructureVariant variant, int f,
                  Modality modality) {
  const std::string ca_prefix =
      prefix + (modality == Modality::kVisual ? ".compress_v" : ".compress_t");
  const T eps = static_cast<T>(kLayerNormEps);
  int normed = t.layer_norm_rows(leaves.at(prefix + ".prompts"), eps);
  int h = tape_attention(t, normed, f,
                         bind_attention(leaves, ca_prefix, dims.n_heads));
  if (variant == StructureVariant::kAdapt) {
    int hn = t.layer_norm_rows(h, eps);
    h = t.add(h, tape_attention(t, hn, hn,
                                bind_attention(leaves, prefix + ".self_attn",
                                               dims.n_heads)));
    h = t.add(h, tape_feed_forward(t, t.layer_norm_rows(h, eps),
                                   bind_ffn(leaves, prefix + ".ffn")));
  }
  return h;
}

template <typename T>
int tape_pooled_projection(Tape<T>& t, int f, int proj, Eigen::Index rows) {
  int pooled = t.mean_pool_rows(f);
  return t.broadcast_rows(t.matmul(pooled, proj), rows);
}

}  // namespace detail

/// Builds one adapter site on the tape. f_t < 0 means no textual knowledge at
/// this call. When skip_zero_gates is set (evaluation), gate terms with an
/// exactly zero gate are not added to the graph at all, so the output node is
/// bitwise identical to f_b when both gates are zero.
template <typename T>
int tape_variant_forward(Tape<T>& t, const LeafMap& leaves,
                         const std::string& prefix, StructureVariant variant,
                         const AdapterDims& dims, bool has_textual, int f_b,
                         int f_v, int f_t, bool skip_zero_gates) {
  const Eigen::Index rows = t.value(f_b).rows();
  const bool textual = f_t >= 0 && has_textual;
  const int w1 = leaves.at(prefix + ".w1");
  const int w2 = textual ? leaves.at(prefix + ".w2") : -1;
  const bool use_v =
      f_v >= 0 && !(skip_zero_gates && t.value(w1)(0, 0) == T(0));
  const bool use_t =
      textual && !(skip_zero_gates && t.value(w2)(0, 0) == T(0));

  int out = f_b;
  switch (variant) {
    case StructureVariant::kAddition: {
      if (use_v) {
        int pv = detail::tape_pooled_projection(
            t, f_v, leaves.at(prefix + ".add_proj_v"), rows);
        out = t.add(out, t.scale_by(pv, w1));
      }
      if (use_t) {
        int pt = detail::tape_pooled_projection(
            t, f_t, leaves.at(prefix + ".add_proj_t"), rows);
        out = t.add(out, t.scale_by(pt, w2));
      }
      return out;
    }
    case StructureVariant::kResCross: {
      if (use_v) {
        int gv = tape_attention(
            t, f_b, f_v,
            detail::bind_attention(leaves, prefix + ".fuse_v", dims.n_heads));
        out = t.add(out, t.scale_by(gv, w1));
      }
      if (use_t) {
        int gt = tape_attention(
            t, f_b, f_t,
            detail::bind_attention(leaves, prefix + ".fuse_t", dims.n_heads));
        out = t.add(out, t.scale_by(gt, w2));
      }
      return out;
    }
    case StructureVariant::kResPrompt:
    case StructureVariant::kAdapt: {
      if (use_v) {
        int v_tilde = detail::tape_compress(t, leaves, prefix, dims, variant, f_v,
                                            Modality::kVisual);
        int gv = tape_attention(
            t, f_b, v_tilde,
            detail::bind_attention(leaves, prefix + ".fuse_v", dims.n_heads));
        out = t.add(out, t.scale_by(gv, w1));
      }
      if (use_t) {
        int t_tilde = detail::tape_compress(t, leaves, prefix, dims, variant, f_t,
                                            Modality::kTextual);
        int gt = tape_attention(
            t, f_b, t_tilde,
            detail::bind_attention(leaves, prefix + ".fuse_t", dims.n_heads));
        out = t.add(out, t.scale_by(gt, w2));
      }
      return out;
    }
  }
  throw ConfigError("tape_variant_forward: unknown variant");
}

}  // namespace pca::adapt
