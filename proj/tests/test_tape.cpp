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
#include <catch2/catch_amalgamated.hpp>
#include <functional>
#include <map>
#include <string>

#include "pca/gradcheck.hpp"
#include "pca/tape.hpp"
#include "test_helpers.hpp"

using pca::Mat;
using pca::ParamStore;
using pca::Tape;

namespace {

using LeafMap = std::map<std::string, int>;

LeafMap register_leaves(Tape<double>& t, const ParamStore<double>& ps) {
  LeafMap ids;
  for (const auto& item : ps.items()) ids[item.name] = t.leaf(item.value);
  return ids;
}

// Reduces an arbitrary node to 1x1 by mean pooling and a fixed projection, so
// any op can be gradient-checked through a scalar loss.
int scalarize(Tape<double>& t, int x, uint64_t seed) {
  int pooled = t.mean_pool_rows(x);
  Mat<double> proj = testutil::random_mat<double>(t.value(pooled).cols(), 1, seed);
  return t.matmul(pooled, t.leaf(proj));
}

using GraphBuilder = std::function<int(Tape<double>&, const LeafMap&)>;

pca::DifferentiableLoss<double> tape_loss(GraphBuilder build) {
  pca::DifferentiableLoss<double> loss;
  loss.value = [build](const ParamStore<double>& ps) {
    Tape<double> t;
    auto ids = register_leaves(t, ps);
    return t.value(build(t, ids))(0, 0);
  };
  loss.gradients = [build](const ParamStore<double>& ps) {
    Tape<double> t;
    auto ids = register_leaves(t, ps);
    t.backward(build(t, ids));
    ParamStore<double> grads;
    for (const auto& [name, id] : ids) grads.add(name, t.grad(id));
    return grads;
  };
  return loss;
}

void expect_grads_ok(const GraphBuilder& build, const ParamStore<double>& ps,
                     double tol = 1e-6) {
  auto report = pca::grad_check(tape_loss(build), ps, 1e-6, tol);
  INFO("max rel err " << report.max_rel_err);
  CHECK(report.pass);
}

}  // namespace

TEST_CASE("grad_check facility") {
  SECTION("quadratic loss") {
    ParamStore<double> ps;
    Mat<double> theta(1, 1);
    theta << 3.0;
    ps.add("theta", theta);
    pca::DifferentiableLoss<double> loss;
    loss.value = [](const ParamStore<double>& p) {
      double x = p.at("theta")(0, 0);
      return x * x;
    };
    loss.gradients = [](const ParamStore<double>& p) {
      ParamStore<double> g;
      Mat<double> gm(1, 1);
      gm << 2.0 * p.at("theta")(0, 0);
      g.add("theta", gm);
      return g;
    };
    auto report = pca::grad_check(loss, ps, 1e-5, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-8);
  }

  SECTION("constant loss has zero gradients and passes") {
    ParamStore<double> ps;
    ps.add("theta", Mat<double>::Ones(2, 2));
    pca::DifferentiableLoss<double> loss;
    loss.value = [](const ParamStore<double>&) { return 5.0; };
    loss.gradients = [](const ParamStore<double>& p) {
      ParamStore<double> g;
      g.add("theta", Mat<double>::Zero(2, 2));
      return g;
    };
    CHECK(pca::grad_check(loss, ps, 1e-5, 1e-4).pass);
  }

  SECTION("non-deterministic loss is rejected") {
    ParamStore<double> ps;
    ps.add("theta", Mat<double>::Ones(1, 1));
    int counter = 0;
    pca::DifferentiableLoss<double> loss;
    loss.value = [&counter](const ParamStore<double>&) {
      return static_cast<double>(counter++);
    };
    loss.gradients = [](const ParamStore<double>& p) {
      ParamStore<double> g;
      g.add("theta", Mat<double>::Zero(1, 1));
      return g;
    };
    CHECK_THROWS_AS(pca::grad_check(loss, ps, 1e-5, 1e-4),
                    pca::DeterminismError);
  }
}

TEST_CASE("tape op gradients match central differences") {
  ParamStore<double> ps;
  ps.add("a", testutil::random_mat<double>(3, 4, 11));
  ps.add("b", testutil::random_mat<double>(4, 5, 12));
  ps.add("c", testutil::random_mat<double>(3, 4, 13));
  ps.add("bias", testutil::random_mat<double>(1, 4, 14));
  ps.add("gate", testutil::random_mat<double>(1, 1, 15));

  SECTION("matmul") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      return scalarize(t, t.matmul(id.at("a"), id.at("b")), 1);
    }, ps);
  }

  SECTION("add and add_rowvec") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      int sum = t.add(id.at("a"), id.at("c"));
      return scalarize(t, t.add_rowvec(sum, id.at("bias")), 2);
    }, ps);
  }

  SECTION("scale_by learnable scalar and scale_const") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      int scaled = t.scale_by(id.at("a"), id.at("gate"));
      return scalarize(t, t.scale_const(scaled, 0.37), 3);
    }, ps);
  }

  SECTION("transpose") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      return scalarize(t, t.transpose(id.at("a")), 4);
    }, ps);
  }

  SECTION("row_softmax") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      return scalarize(t, t.row_softmax(id.at("a")), 5);
    }, ps);
  }

  SECTION("layer_norm_rows including gradient through statistics") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      return scalarize(t, t.layer_norm_rows(id.at("a"), 1e-5), 6);
    }, ps);
  }

  SECTION("gelu") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      return scalarize(t, t.gelu(id.at("a")), 7);
    }, ps);
  }

  SECTION("mean_pool_rows and broadcast_rows") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      int pooled = t.mean_pool_rows(id.at("a"));
      return scalarize(t, t.broadcast_rows(pooled, 5), 8);
    }, ps);
  }

  SECTION("slice_cols and concat_cols") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      int left = t.slice_cols(id.at("a"), 0, 2);
      int right = t.slice_cols(id.at("a"), 2, 2);
      return scalarize(t, t.concat_cols({right, left}), 9);
    }, ps);
  }

  SECTION("hadamard_const") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      Mat<double> mask = testutil::random_mat<double>(3, 4, 99);
      return scalarize(t, t.hadamard_const(id.at("a"), mask), 10);
    }, ps);
  }

  SECTION("cross_entropy") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      return t.cross_entropy(id.at("a"), {1, 3, 0});
    }, ps);
  }

  SECTION("binary_cross_entropy") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      Mat<double> targets(3, 4);
      targets << 1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 1, 0;
      return t.binary_cross_entropy(id.at("a"), targets);
    }, ps);
  }

  SECTION("mean_of_scalars") {
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      int l1 = t.cross_entropy(id.at("a"), {1, 3, 0});
      int l2 = t.cross_entropy(id.at("c"), {0, 2, 2});
      return t.mean_of_scalars({l1, l2});
    }, ps);
  }
}

TEST_CASE("tape attention matches the pure fast path and is differentiable") {
  pca::Rng rng(500);
  auto params = pca::nn::make_attention_params<double>(4, 6, 8, 2, rng);
  Mat<double> q = pca::random_normal<double>(3, 4, rng);
  Mat<double> kv = pca::random_normal<double>(5, 6, rng);

  SECTION("values equal the pure implementation") {
    Tape<double> t;
    pca::TapeAttentionIds ids;
    ids.w_q = t.leaf(params.w_q);
    ids.w_k = t.leaf(params.w_k);
    ids.w_v = t.leaf(params.w_v);
    ids.w_o = t.leaf(params.w_o);
    ids.n_heads = params.n_heads;
    int out = pca::tape_attention(t, t.leaf(q), t.leaf(kv), ids);
    CHECK(testutil::max_abs_diff(t.value(out),
                                 pca::nn::multi_head_attention(q, kv, params)) <
          1e-12);
  }

  SECTION("gradients through all projections and both inputs") {
    ParamStore<double> ps;
    ps.add("w_q", params.w_q);
    ps.add("w_k", params.w_k);
    ps.add("w_v", params.w_v);
    ps.add("w_o", params.w_o);
    ps.add("q", q);
    ps.add("kv", kv);
    expect_grads_ok([&](Tape<double>& t, const LeafMap& id) {
      pca::TapeAttentionIds aids;
      aids.w_q = id.at("w_q");
      aids.w_k = id.at("w_k");
      aids.w_v = id.at("w_v");
      aids.w_o = id.at("w_o");
      aids.n_heads = 2;
      return scalarize(t, pca::tape_attention(t, id.at("q"), id.at("kv"), aids), 20);
    }, ps);
  }
}

TEST_CASE("tape feed forward matches the pure fast path and is differentiable") {
  pca::Rng rng(700);
  auto p = pca::nn::make_feed_forward_params<double>(4, 8, 4, rng);
  pca::Rng rng_b(701);
  p.b1 = pca::random_normal<double>(1, 8, rng_b, 0.2);
  p.b2 = pca::random_normal<double>(1, 4, rng_b, 0.2);
  Mat<double> x = pca::random_normal<double>(3, 4, rng);

  SECTION("values equal the pure implementation") {
    Tape<double> t;
    pca::TapeFeedForwardIds ids{t.leaf(p.w1), t.leaf(p.b1), t.leaf(p.w2),
                                t.leaf(p.b2)};
    int out = pca::tape_feed_forward(t, t.leaf(x), ids);
    CHECK(testutil::max_abs_diff(t.value(out), pca::nn::feed_forward(x, p)) < 1e-12);
  }

  SECTION("gradients through weights, biases and input") {
    ParamStore<double> ps;
    ps.add("w1", p.w1);
    ps.add("b1", p.b1);
    ps.add("w2", p.w2);
    ps.add("b2", p.b2);
    ps.add("x", x);
    expect_grads_ok([](Tape<double>& t, const LeafMap& id) {
      pca::TapeFeedForwardIds ids{id.at("w1"), id.at("b1"), id.at("w2"),
                                  id.at("b2")};
      return scalarize(t, pca::tape_feed_forward(t, id.at("x"), ids), 21);
    }, ps);
  }
}
