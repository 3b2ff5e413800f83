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

#include <cmath>
#include <string>

#include "pca/errors.hpp"
#include "pca/matrix.hpp"

namespace pca::nn {

/// Row-wise softmax with max subtraction. Each output row is nonnegative and
/// sums to 1.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& m) {
  if (!all_finite(m)) {
    throw InvalidInputError("softmax_rows: non-finite input");
  }
  Mat<T> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    T row_max = m.row(i).maxCoeff();
    T sum = T(0);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out(i, j) = std::exp(m(i, j) - row_max);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

/// Row-wise normalization to zero mean and unit variance (population
/// variance, no learned scale or shift).
template <typename T>
Mat<T> layer_norm(const Mat<T>& m, T eps) {
  if (m.cols() < 2) {
    throw InvalidInputError("layer_norm: dim must be >= 2");
  }
  if (eps <= T(0)) {
    throw InvalidInputError("layer_norm: eps must be > 0");
  }
  Mat<T> out(m.rows(), m.cols());
  const T inv_d = T(1) / static_cast<T>(m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    T mean = m.row(i).sum() * inv_d;
    T var = T(0);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      T d = m(i, j) - mean;
      var += d * d;
    }
    var *= inv_d;
    T inv_std = T(1) / std::sqrt(var + eps);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out(i, j) = (m(i, j) - mean) * inv_std;
    }
  }
  return out;
}

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename T>
T gelu_scalar(T x) {
  return static_cast<T>(T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2))));
}

/// Derivative of exact GELU: Phi(x) + x * phi(x).
template <typename T>
T gelu_grad_scalar(T x) {
  T phi = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
  return static_cast<T>(T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2))) + x * phi);
}

template <typename T>
Mat<T> gelu(const Mat<T>& m) {
  return m.unaryExpr([](T x) { return gelu_scalar(x); });
}

/// Projection weights for (cross- or self-) attention. Inputs are multiplied
/// on the right: q_in (n x d_q) * w_q (d_q x d_model) and so on. The query
/// side and key/value side may have different input widths.
template <typename T>
struct AttentionParams {
  Mat<T> w_q;  // d_q x d_model
  Mat<T> w_k;  // d_kv x d_model
  Mat<T> w_v;  // d_kv x d_model
  Mat<T> w_o;  // d_model x d_model
  int n_heads = 1;

  Eigen::Index d_q() const { return w_q.rows(); }
  Eigen::Index d_kv() const { return w_k.rows(); }
  Eigen::Index d_model() const { return w_q.cols(); }

  void validate() const {
    if (n_heads < 1) throw ConfigError("attention: n_heads must be >= 1");
    if (d_model() % n_heads != 0) {
      throw ConfigError("attention: d_model not divisible by n_heads");
    }
    if (w_k.cols() != d_model() || w_v.cols() != d_model() ||
        w_o.rows() != d_model() || w_o.cols() != d_model() ||
        w_k.rows() != w_v.rows()) {
      throw ShapeError("attention: inconsistent parameter shapes");
    }
  }
};

template <typename T>
AttentionParams<T> make_attention_params(Eigen::Index d_q, Eigen::Index d_kv,
                                         Eigen::Index d_model, int n_heads,
                                         Rng& rng) {
  AttentionParams<T> p;
  p.w_q = random_projection<T>(d_q, d_model, rng);
  p.w_k = random_projection<T>(d_kv, d_model, rng);
  p.w_v = random_projection<T>(d_kv, d_model, rng);
  p.w_o = random_projection<T>(d_model, d_model, rng);
  p.n_heads = n_heads;
  p.validate();
  return p;
}

/// Scaled dot-product multi-head attention. Per head h:
/// softmax(Q_h K_h^T / sqrt(head_dim)) V_h; heads concatenated, then
/// projected by w_o. Output shape: q_in.rows() x d_model.
template <typename T>
Mat<T> multi_head_attention(const Mat<T>& q_in, const Mat<T>& kv_in,
                            const AttentionParams<T>& params) {
  params.validate();
  if (q_in.cols() != params.d_q()) {
    throw ShapeError("attention: query input dim " + std::to_string(q_in.cols()) +
                     " != d_q " + std::to_string(params.d_q()));
  }
  if (kv_in.cols() != params.d_kv()) {
    throw ShapeError("attention: key/value input dim " +
                     std::to_string(kv_in.cols()) + " != d_kv " +
                     std::to_string(params.d_kv()));
  }
  const Eigen::Index d_model = params.d_model();
  const Eigen::Index head_dim = d_model / params.n_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

  Mat<T> q = q_in * params.w_q;
  Mat<T> k = kv_in * params.w_k;
  Mat<T> v = kv_in * params.w_v;

  Mat<T> concat(q_in.rows(), d_model);
  for (int h = 0; h < params.n_heads; ++h) {
    const Eigen::Index c0 = h * head_dim;
    Mat<T> qh = q.middleCols(c0, head_dim);
    Mat<T> kh = k.middleCols(c0, head_dim);
    Mat<T> vh = v.middleCols(c0, head_dim);
    Mat<T> logits = (qh * kh.transpose()) * scale;
    Mat<T> attn = softmax_rows(logits);
    concat.middleCols(c0, head_dim) = attn * vh;
  }
  return concat * params.w_o;
}

template <typename T>
struct FeedForwardParams {
  Mat<T> w1;  // d x inner
  Mat<T> b1;  // 1 x inner
  Mat<T> w2;  // inner x d_out
  Mat<T> b2;  // 1 x d_out
};

template <typename T>
FeedForwardParams<T> make_feed_forward_params(Eigen::Index d, Eigen::Index inner,
                                              Eigen::Index d_out, Rng& rng) {
  FeedForwardParams<T> p;
  p.w1 = random_projection<T>(d, inner, rng);
  p.b1 = Mat<T>::Zero(1, inner);
  p.w2 = random_projection<T>(inner, d_out, rng);
  p.b2 = Mat<T>::Zero(1, d_out);
  return p;
}

/// Position-wise feed forward: gelu(m * w1 + b1) * w2 + b2.
template <typename T>
Mat<T> feed_forward(const Mat<T>& m, const Mat<T>& w1, const Mat<T>& w2,
                    const Mat<T>& b1, const Mat<T>& b2) {
  if (m.cols() != w1.rows() || w1.cols() != w2.rows() ||
      b1.cols() != w1.cols() || b2.cols() != w2.cols() || b1.rows() != 1 ||
      b2.rows() != 1) {
    throw ShapeError("feed_forward: inconsistent shapes");
  }
  Mat<T> hidden = m * w1;
  hidden.rowwise() += b1.row(0);
  hidden = gelu(hidden);
  Mat<T> out = hidden * w2;
  out.rowwise() += b2.row(0);
  return out;
}

template <typename T>
Mat<T> feed_forward(const Mat<T>& m, const FeedForwardParams<T>& p) {
  return feed_forward(m, p.w1, p.w2, p.b1, p.b2);
}

}  // namespace pca::nn
