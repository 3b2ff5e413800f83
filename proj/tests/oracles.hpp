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

// Loop-based double-precision reference implementations used as independent
// oracles. These deliberately avoid Eigen and every fast-path kernel in
// include/pca; they are plain scalar loops over nested vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Grid = std::vector<Vec>;

inline Vec softmax_row(const Vec& row) {
  long double mx = row[0];
  for (double v : row) mx = std::max<long double>(mx, v);
  std::vector<long double> e(row.size());
  long double sum = 0.0L;
  for (size_t j = 0; j < row.size(); ++j) {
    e[j] = expl(static_cast<long double>(row[j]) - mx);
    sum += e[j];
  }
  Vec out(row.size());
  for (size_t j = 0; j < row.size(); ++j) {
    out[j] = static_cast<double>(e[j] / sum);
  }
  return out;
}

inline Grid softmax_rows(const Grid& m) {
  Grid out;
  for (const auto& row : m) out.push_back(softmax_row(row));
  return out;
}

inline Vec layer_norm_row(const Vec& row, double eps) {
  long double mean = 0.0L;
  for (double v : row) mean += v;
  mean /= static_cast<long double>(row.size());
  long double var = 0.0L;
  for (double v : row) var += (v - mean) * (v - mean);
  var /= static_cast<long double>(row.size());
  long double inv = 1.0L / sqrtl(var + static_cast<long double>(eps));
  Vec out(row.size());
  for (size_t j = 0; j < row.size(); ++j) {
    out[j] = static_cast<double>((row[j] - mean) * inv);
  }
  return out;
}

inline double gelu(double x) {
  long double xl = x;
  return static_cast<double>(0.5L * xl * (1.0L + erfl(xl / sqrtl(2.0L))));
}

inline Grid matmul(const Grid& a, const Grid& b) {
  Grid out(a.size(), Vec(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t k = 0; k < b.size(); ++k) {
      for (size_t j = 0; j < b[0].size(); ++j) {
        out[i][j] += a[i][k] * b[k][j];
      }
    }
  }
  return out;
}

/// Dense per-element multi-head attention: explicit loops over queries, keys
/// and heads, softmax per query row, concatenation, output projection.
inline Grid multi_head_attention(const Grid& q_in, const Grid& kv_in,
                                 const Grid& w_q, const Grid& w_k,
                                 const Grid& w_v, const Grid& w_o, int n_heads) {
  const size_t n_q = q_in.size();
  const size_t n_kv = kv_in.size();
  const size_t d_model = w_q[0].size();
  const size_t head_dim = d_model / static_cast<size_t>(n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Grid q = matmul(q_in, w_q);
  Grid k = matmul(kv_in, w_k);
  Grid v = matmul(kv_in, w_v);

  Grid concat(n_q, Vec(d_model, 0.0));
  for (int h = 0; h < n_heads; ++h) {
    const size_t c0 = static_cast<size_t>(h) * head_dim;
    for (size_t i = 0; i < n_q; ++i) {
      Vec logits(n_kv, 0.0);
      for (size_t t = 0; t < n_kv; ++t) {
        double dot = 0.0;
        for (size_t j = 0; j < head_dim; ++j) {
          dot += q[i][c0 + j] * k[t][c0 + j];
        }
        logits[t] = dot * scale;
      }
      Vec attn = softmax_row(logits);
      for (size_t j = 0; j < head_dim; ++j) {
        double acc = 0.0;
        for (size_t t = 0; t < n_kv; ++t) {
          acc += attn[t] * v[t][c0 + j];
        }
        concat[i][c0 + j] = acc;
      }
    }
  }
  return matmul(concat, w_o);
}

inline Grid feed_forward(const Grid& m, const Grid& w1, const Grid& w2,
                         const Vec& b1, const Vec& b2) {
  Grid hidden = matmul(m, w1);
  for (auto& row : hidden) {
    for (size_t j = 0; j < row.size(); ++j) row[j] = gelu(row[j] + b1[j]);
  }
  Grid out = matmul(hidden, w2);
  for (auto& row : out) {
    for (size_t j = 0; j < row.size(); ++j) row[j] += b2[j];
  }
  return out;
}

// --- metric oracles -------------------------------------------------------

/// Micro F1 by exhaustive confusion counting over every (sample, class) cell.
inline double micro_f1(const Grid& scores, const Grid& targets,
                       double bin_threshold) {
  long tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    for (size_t j = 0; j < scores[i].size(); ++j) {
      bool pred = scores[i][j] >= bin_threshold;
      bool truth = targets[i][j] >= 0.5;
      if (pred && truth) ++tp;
      else if (pred && !truth) ++fp;
      else if (!pred && truth) ++fn;
    }
  }
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

/// Top-k accuracy by full ranking; ties broken by lower class index first.
inline double top_k_accuracy(const Grid& scores, const std::vector<int>& targets,
                             int k) {
  size_t hits = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    std::vector<size_t> order(scores[i].size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return scores[i][a] > scores[i][b];
    });
    for (int r = 0; r < k; ++r) {
      if (order[static_cast<size_t>(r)] == static_cast<size_t>(targets[i])) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

/// Average precision for one class: rank samples by descending score (ties by
/// sample index), average precision at each positive.
inline double average_precision(const Vec& scores, const std::vector<int>& labels) {
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, ap = 0.0;
  size_t positives = 0;
  for (int l : labels) positives += (l != 0);
  for (size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 0) {
      hits += 1.0;
      ap += hits / static_cast<double>(r + 1);
    }
  }
  return positives == 0 ? 0.0 : ap / static_cast<double>(positives);
}

/// Mean of per-class APs; classes with no positives are excluded.
inline double mean_average_precision(const Grid& scores, const Grid& targets) {
  const size_t classes = scores[0].size();
  double sum = 0.0;
  size_t counted = 0;
  for (size_t c = 0; c < classes; ++c) {
    Vec s;
    std::vector<int> l;
    size_t pos = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      s.push_back(scores[i][c]);
      int li = targets[i][c] >= 0.5 ? 1 : 0;
      pos += static_cast<size_t>(li);
      l.push_back(li);
    }
    if (pos == 0) continue;
    sum += average_precision(s, l);
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

// --- optimizer oracle -------------------------------------------------------

/// One AdamW step in closed form for a single scalar parameter.
inline double adamw_single_step(double theta, double grad, double lr,
                                double beta1, double beta2, double eps,
                                double weight_decay, int t) {
  double m = (1.0 - beta1) * grad;
  double v = (1.0 - beta2) * grad * grad;
  double m_hat = m / (1.0 - std::pow(beta1, t));
  double v_hat = v / (1.0 - std::pow(beta2, t));
  return theta - lr * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta);
}

}  // namespace oracle
