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
#include <functional>
#include <vector>

#include "pca/errors.hpp"
#include "pca/matrix.hpp"
#include "pca/nn.hpp"

namespace pca {

/// Reverse-mode tape over dense matrices. Forward calls append nodes; a
/// single backward() pass accumulates gradients in reverse node order.
/// Forward kernels are shared with the pure functions in pca::nn, so the
/// tape computes the same values as the direct path.
template <typename T>
class Tape {
 public:
  using M = Mat<T>;
  using NodeId = int;

  NodeId leaf(M value) { return push(std::move(value), nullptr); }

  const M& value(NodeId id) const { return nodes_[id].value; }
  const M& grad(NodeId id) const { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

  NodeId matmul(NodeId a, NodeId b) {
    const M& av = nodes_[a].value;
    const M& bv = nodes_[b].value;
    if (av.cols() != bv.rows()) throw ShapeError("tape matmul: inner dims differ");
    return push(av * bv, [a, b](Tape& t, const M& g) {
      t.nodes_[a].grad.noalias() += g * t.nodes_[b].value.transpose();
      t.nodes_[b].grad.noalias() += t.nodes_[a].value.transpose() * g;
    });
  }

  NodeId transpose(NodeId a) {
    return push(nodes_[a].value.transpose(), [a](Tape& t, const M& g) {
      t.nodes_[a].grad += g.transpose();
    });
  }

  NodeId add(NodeId a, NodeId b) {
    const M& av = nodes_[a].value;
    const M& bv = nodes_[b].value;
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
      throw ShapeError("tape add: shape mismatch");
    }
    return push(av + bv, [a, b](Tape& t, const M& g) {
      t.nodes_[a].grad += g;
      t.nodes_[b].grad += g;
    });
  }

  /// bias is 1 x d, broadcast over the rows of a.
  NodeId add_rowvec(NodeId a, NodeId bias) {
    const M& av = nodes_[a].value;
    const M& bv = nodes_[bias].value;
    if (bv.rows() != 1 || bv.cols() != av.cols()) {
      throw ShapeError("tape add_rowvec: bias must be 1 x cols(a)");
    }
    M out = av;
    out.rowwise() += bv.row(0);
    return push(std::move(out), [a, bias](Tape& t, const M& g) {
      t.nodes_[a].grad += g;
      t.nodes_[bias].grad += g.colwise().sum();
    });
  }

  /// Multiplies a by a learnable scalar held in a 1x1 node.
  NodeId scale_by(NodeId a, NodeId s) {
    const M& sv = nodes_[s].value;
    if (sv.rows() != 1 || sv.cols() != 1) {
      throw ShapeError("tape scale_by: scale node must be 1x1");
    }
    return push(nodes_[a].value * sv(0, 0), [a, s](Tape& t, const M& g) {
      t.nodes_[a].grad += g * t.nodes_[s].value(0, 0);
      t.nodes_[s].grad(0, 0) += (g.array() * t.nodes_[a].value.array()).sum();
    });
  }

  NodeId scale_const(NodeId a, T c) {
    return push(nodes_[a].value * c, [a, c](Tape& t, const M& g) {
      t.nodes_[a].grad += g * c;
    });
  }

  NodeId row_softmax(NodeId a) {
    M y = nn::softmax_rows(nodes_[a].value);
    NodeId out = push(std::move(y), nullptr);
    nodes_[out].backward = [a, out](Tape& t, const M& g) {
      const M& yv = t.nodes_[out].value;
      M dx(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        T dot = g.row(i).dot(yv.row(i));
        dx.row(i) = yv.row(i).array() * (g.row(i).array() - dot);
      }
      t.nodes_[a].grad += dx;
    };
    return out;
  }

  NodeId layer_norm_rows(NodeId a, T eps) {
    M y = nn::layer_norm(nodes_[a].value, eps);
    NodeId out = push(std::move(y), nullptr);
    nodes_[out].backward = [a, out, eps](Tape& t, const M& g) {
      const M& xv = t.nodes_[a].value;
      const M& yv = t.nodes_[out].value;
      const Eigen::Index d = xv.cols();
      const T inv_d = T(1) / static_cast<T>(d);
      M dx(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        T mean = xv.row(i).sum() * inv_d;
        T var = T(0);
        for (Eigen::Index j = 0; j < d; ++j) {
          T dv = xv(i, j) - mean;
          var += dv * dv;
        }
        var *= inv_d;
        T inv_std = T(1) / std::sqrt(var + eps);
        T g_mean = g.row(i).sum() * inv_d;
        T gy_mean = (g.row(i).array() * yv.row(i).array()).sum() * inv_d;
        dx.row(i) =
            ((g.row(i).array() - g_mean) - yv.row(i).array() * gy_mean) * inv_std;
      }
      t.nodes_[a].grad += dx;
    };
    return out;
  }

  NodeId gelu(NodeId a) {
    return push(nn::gelu(nodes_[a].value), [a](Tape& t, const M& g) {
      const M& xv = t.nodes_[a].value;
      t.nodes_[a].grad.array() +=
          g.array() * xv.unaryExpr([](T x) { return nn::gelu_grad_scalar(x); }).array();
    });
  }

  /// n x d -> 1 x d, average over rows.
  NodeId mean_pool_rows(NodeId a) {
    const M& av = nodes_[a].value;
    M out = av.colwise().mean();
    const T inv_n = T(1) / static_cast<T>(av.rows());
    return push(std::move(out), [a, inv_n](Tape& t, const M& g) {
      t.nodes_[a].grad.rowwise() += (g.row(0) * inv_n);
    });
  }

  /// 1 x d -> n x d, repeat the single row.
  NodeId broadcast_rows(NodeId a, Eigen::Index n) {
    const M& av = nodes_[a].value;
    if (av.rows() != 1) throw ShapeError("tape broadcast_rows: input must be 1 x d");
    M out(n, av.cols());
    out.rowwise() = av.row(0);
    return push(std::move(out), [a](Tape& t, const M& g) {
      t.nodes_[a].grad += g.colwise().sum();
    });
  }

  NodeId slice_cols(NodeId a, Eigen::Index c0, Eigen::Index width) {
    return push(nodes_[a].value.middleCols(c0, width),
                [a, c0, width](Tape& t, const M& g) {
                  t.nodes_[a].grad.middleCols(c0, width) += g;
                });
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    Eigen::Index rows = nodes_[parts[0]].value.rows();
    Eigen::Index cols = 0;
    for (NodeId p : parts) cols += nodes_[p].value.cols();
    M out(rows, cols);
    Eigen::Index c = 0;
    for (NodeId p : parts) {
      out.middleCols(c, nodes_[p].value.cols()) = nodes_[p].value;
      c += nodes_[p].value.cols();
    }
    std::vector<NodeId> ids = parts;
    return push(std::move(out), [ids](Tape& t, const M& g) {
      Eigen::Index c = 0;
      for (NodeId p : ids) {
        Eigen::Index w = t.nodes_[p].value.cols();
        t.nodes_[p].grad += g.middleCols(c, w);
        c += w;
      }
    });
  }

  /// Elementwise multiply by a constant mask (dropout and knowledge masking).
  NodeId hadamard_const(NodeId a, M mask) {
    const M& av = nodes_[a].value;
    if (mask.rows() != av.rows() || mask.cols() != av.cols()) {
      throw ShapeError("tape hadamard_const: mask shape mismatch");
    }
    M out = av.array() * mask.array();
    return push(std::move(out), [a, mask](Tape& t, const M& g) {
      t.nodes_[a].grad.array() += g.array() * mask.array();
    });
  }

  /// Mean cross entropy over rows: mean_i(logsumexp(z_i) - z_i[target_i]).
  NodeId cross_entropy(NodeId logits, std::vector<int> targets) {
    const M& z = nodes_[logits].value;
    if (static_cast<Eigen::Index>(targets.size()) != z.rows()) {
      throw InvalidInputError("cross_entropy: one target per row required");
    }
    for (int c : targets) {
      if (c < 0 || c >= z.cols()) {
        throw InvalidInputError("cross_entropy: target class out of range");
      }
    }
    T total = T(0);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      T zmax = z.row(i).maxCoeff();
      T lse = T(0);
      for (Eigen::Index j = 0; j < z.cols(); ++j) lse += std::exp(z(i, j) - zmax);
      lse = std::log(lse) + zmax;
      total += lse - z(i, targets[static_cast<size_t>(i)]);
    }
    M out(1, 1);
    out(0, 0) = total / static_cast<T>(z.rows());
    return push(std::move(out), [logits, targets](Tape& t, const M& g) {
      const M& zv = t.nodes_[logits].value;
      M soft = nn::softmax_rows(zv);
      const T w = g(0, 0) / static_cast<T>(zv.rows());
      for (Eigen::Index i = 0; i < zv.rows(); ++i) {
        soft(i, targets[static_cast<size_t>(i)]) -= T(1);
      }
      t.nodes_[logits].grad += soft * w;
    });
  }

  /// Mean binary cross entropy with logits over all cells, computed in the
  /// overflow-safe softplus form.
  NodeId binary_cross_entropy(NodeId logits, M targets) {
    const M& z = nodes_[logits].value;
    if (targets.rows() != z.rows() || targets.cols() != z.cols()) {
      throw ShapeError("binary_cross_entropy: target shape mismatch");
    }
    T total = T(0);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      T zi = z.data()[i];
      T ti = targets.data()[i];
      total += std::max(zi, T(0)) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
    }
    M out(1, 1);
    out(0, 0) = total / static_cast<T>(z.size());
    return push(std::move(out), [logits, targets](Tape& t, const M& g) {
      const M& zv = t.nodes_[logits].value;
      const T w = g(0, 0) / static_cast<T>(zv.size());
      M dz = (T(1) / (T(1) + (-zv.array()).exp()) - targets.array()) * w;
      t.nodes_[logits].grad += dz.matrix();
    });
  }

  /// Accumulates `count` equally weighted 1x1 loss nodes into their mean.
  NodeId mean_of_scalars(const std::vector<NodeId>& losses) {
    T total = T(0);
    for (NodeId l : losses) total += nodes_[l].value(0, 0);
    M out(1, 1);
    out(0, 0) = total / static_cast<T>(losses.size());
    std::vector<NodeId> ids = losses;
    return push(std::move(out), [ids](Tape& t, const M& g) {
      const T w = g(0, 0) / static_cast<T>(ids.size());
      for (NodeId l : ids) t.nodes_[l].grad(0, 0) += w;
    });
  }

  /// Runs the backward pass from a 1x1 loss node. Gradients accumulate into
  /// grad(id) for every node, in particular the parameter leaves.
  void backward(NodeId loss) {
    const M& lv = nodes_[loss].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ShapeError("tape backward: loss node must be 1x1");
    }
    for (auto& n : nodes_) n.grad = M::Zero(n.value.rows(), n.value.cols());
    nodes_[loss].grad(0, 0) = T(1);
    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      if (nodes_[id].backward) nodes_[id].backward(*this, nodes_[id].grad);
    }
  }

 private:
  struct Node {
    M value;
    M grad;
    std::function<void(Tape&, const M&)> backward;
  };

  NodeId push(M value, std::function<void(Tape&, const M&)> backward) {
    nodes_.push_back(Node{std::move(value), M(), std::move(backward)});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

/// Attention parameter leaves registered on a tape.
struct TapeAttentionIds {
  int w_q = -1;
  int w_k = -1;
  int w_v = -1;
  int w_o = -1;
  int n_heads = 1;
};

/// Multi-head attention built from tape primitives; mirrors
/// nn::multi_head_attention.
template <typename T>
int tape_attention(Tape<T>& t, int q_in, int kv_in, const TapeAttentionIds& p) {
  const Eigen::Index d_model = t.value(p.w_q).cols();
  if (d_model % p.n_heads != 0) {
    throw ConfigError("tape_attention: d_model not divisible by n_heads");
  }
  const Eigen::Index head_dim = d_model / p.n_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

  int q = t.matmul(q_in, p.w_q);
  int k = t.matmul(kv_in, p.w_k);
  int v = t.matmul(kv_in, p.w_v);

  std::vector<int> heads;
  heads.reserve(static_cast<size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h) {
    const Eigen::Index c0 = h * head_dim;
    int qh = t.slice_cols(q, c0, head_dim);
    int kh = t.slice_cols(k, c0, head_dim);
    int vh = t.slice_cols(v, c0, head_dim);
    int logits = t.scale_const(t.matmul(qh, t.transpose(kh)), scale);
    int attn = t.row_softmax(logits);
    heads.push_back(t.matmul(attn, vh));
  }
  int concat = t.concat_cols(heads);
  return t.matmul(concat, p.w_o);
}

struct TapeFeedForwardIds {
  int w1 = -1;
  int b1 = -1;
  int w2 = -1;
  int b2 = -1;
};

template <typename T>
int tape_feed_forward(Tape<T>& t, int x, const TapeFeedForwardIds& p) {
  int h = t.add_rowvec(t.matmul(x, p.w1), p.b1);
  h = t.gelu(h);
  return t.add_rowvec(t.matmul(h, p.w2), p.b2);
}

}  // namespace pca
