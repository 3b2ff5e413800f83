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
#include <cmath>
#include <filesystem>

#include "pca/percept.hpp"
#include "test_helpers.hpp"

using pca::Mat;
using pca::percept::VideoClip;

namespace {

VideoClip make_clip(const std::string& id, int t = 4, int h = 4, int w = 4,
                    int c = 3, uint64_t seed = 1) {
  VideoClip clip;
  clip.sample_id = id;
  clip.t = t;
  clip.h = h;
  clip.w = w;
  clip.c = c;
  clip.frames.resize(static_cast<size_t>(t) * h * w * c);
  pca::Rng rng(seed);
  for (float& v : clip.frames) v = static_cast<float>(rng.uniform());
  return clip;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pca_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("pcak container round trip") {
  auto dir = temp_dir("pcak");

  SECTION("matrix round trip is exact") {
    Mat<float> m = testutil::random_mat<float>(5, 7, 3);
    pca::pcak_write(dir / "m.pcak", pca::pcak_from_matrix(m));
    Mat<float> back =
        pca::pcak_to_matrix<float>(pca::pcak_read(dir / "m.pcak"), "m");
    CHECK(back.rows() == 5);
    CHECK(back.cols() == 7);
    CHECK((back - m).cwiseAbs().maxCoeff() == 0.0f);
  }

  SECTION("header layout is bit-exact") {
    pca::PcakTensor t;
    t.dims = {2, 3};
    t.data = {0, 1, 2, 3, 4, 5};
    std::string bytes = pca::pcak_encode(t);
    REQUIRE(bytes.size() == 9 + 8 + 24);
    CHECK(bytes.substr(0, 4) == "PCAK");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version LE
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);  // rank
    CHECK(static_cast<unsigned char>(bytes[9]) == 2);  // first dim LE
    CHECK(static_cast<unsigned char>(bytes[13]) == 3);
  }

  SECTION("corrupted payload is rejected") {
    pca::PcakTensor t;
    t.dims = {2, 2};
    t.data = {1, 2, 3, 4};
    std::string bytes = pca::pcak_encode(t);
    bytes.pop_back();
    CHECK_THROWS_AS(pca::pcak_decode(bytes, "test"), pca::InvalidInputError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(pca::pcak_decode(bad, "test"), pca::InvalidInputError);
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("gamma_correct") {
  VideoClip clip = make_clip("v0");

  SECTION("rate 1 is the identity") {
    VideoClip out = pca::percept::gamma_correct(clip, 1.0);
    CHECK(out.frames == clip.frames);
  }

  SECTION("0 and 1 are fixed points") {
    VideoClip edges = clip;
    edges.frames[0] = 0.0f;
    edges.frames[1] = 1.0f;
    for (double rate : {0.4, 1.0, 1.8, 3.0}) {
      VideoClip out = pca::percept::gamma_correct(edges, rate);
      CHECK(out.frames[0] == 0.0f);
      CHECK(out.frames[1] == 1.0f);
    }
  }

  SECTION("matches power-function oracle at rate 1.8") {
    VideoClip one = clip;
    one.frames[0] = 0.25f;
    VideoClip out = pca::percept::gamma_correct(one, 1.8);
    long double expected = powl(0.25L, 1.0L / 1.8L);
    CHECK(out.frames[0] ==
          Catch::Approx(static_cast<double>(expected)).margin(1e-6));
    CHECK(out.frames[0] == Catch::Approx(0.46294).margin(1e-5));
  }

  SECTION("strictly monotone per pixel and brightens for rate > 1") {
    pca::Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      double a = rng.uniform(0.01, 0.98);
      double b = a + rng.uniform(0.001, 1.0 - a - 0.001);
      VideoClip two = make_clip("m", 1, 1, 2, 1);
      two.frames = {static_cast<float>(a), static_cast<float>(b)};
      double rate = rng.uniform(0.2, 4.0);
      VideoClip out = pca::percept::gamma_correct(two, rate);
      CHECK(out.frames[0] < out.frames[1]);
      if (rate > 1.0) CHECK(out.frames[0] >= two.frames[0]);
    }
  }

  SECTION("non-positive rate rejected") {
    CHECK_THROWS_AS(pca::percept::gamma_correct(clip, 0.0),
                    pca::InvalidInputError);
    CHECK_THROWS_AS(pca::percept::gamma_correct(clip, -1.8),
                    pca::InvalidInputError);
  }
}

TEST_CASE("mask_fuse") {
  VideoClip clip = make_clip("v1");

  SECTION("fusing a clip with itself is the identity") {
    VideoClip out = pca::percept::mask_fuse(clip, clip);
    for (size_t i = 0; i < clip.frames.size(); ++i) {
      CHECK(out.frames[i] == Catch::Approx(clip.frames[i]).margin(1e-7));
    }
  }

  SECTION("all-zero mask halves the clip") {
    VideoClip zeros = clip;
    std::fill(zeros.frames.begin(), zeros.frames.end(), 0.0f);
    VideoClip out = pca::percept::mask_fuse(clip, zeros);
    for (size_t i = 0; i < clip.frames.size(); ++i) {
      CHECK(out.frames[i] == Catch::Approx(clip.frames[i] / 2).margin(1e-7));
    }
  }

  SECTION("elementwise mean") {
    VideoClip a = make_clip("a", 1, 1, 1, 1);
    VideoClip b = a;
    a.frames = {0.4f};
    b.frames = {1.0f};
    CHECK(pca::percept::mask_fuse(a, b).frames[0] == Catch::Approx(0.7).margin(1e-7));
  }

  SECTION("shape mismatch rejected") {
    VideoClip small = make_clip("s", 2, 4, 4, 3);
    CHECK_THROWS_AS(pca::percept::mask_fuse(clip, small), pca::ShapeError);
  }
}

TEST_CASE("enhance dispatch") {
  VideoClip clip = make_clip("v2");

  SECTION("identity") {
    VideoClip out = pca::percept::enhance(clip, pca::percept::EnhancerSpec::identity());
    CHECK(out.frames == clip.frames);
  }

  SECTION("gamma spec equals gamma_correct") {
    auto spec = pca::percept::EnhancerSpec::gamma(1.8);
    VideoClip out = pca::percept::enhance(clip, spec);
    VideoClip direct = pca::percept::gamma_correct(clip, 1.8);
    CHECK(out.frames == direct.frames);
  }

  SECTION("external loads stored clip and misses are errors") {
    auto dir = temp_dir("external");
    VideoClip stored = make_clip("v2", 4, 4, 4, 3, 77);
    pca::pcak_write(dir / "v2.clip", stored.to_pcak());
    auto spec = pca::percept::EnhancerSpec::external(dir);
    VideoClip out = pca::percept::enhance(clip, spec);
    CHECK(out.frames == stored.frames);

    VideoClip other = make_clip("absent");
    CHECK_THROWS_AS(pca::percept::enhance(other, spec), pca::MissingAssetError);
    std::filesystem::remove_all(dir);
  }

  SECTION("mask fusion loads the mask by sample id") {
    auto dir = temp_dir("masks");
    VideoClip mask = make_clip("v2", 4, 4, 4, 3, 88);
    pca::pcak_write(dir / "v2.mask", mask.to_pcak());
    auto spec = pca::percept::EnhancerSpec::mask_fusion(dir);
    VideoClip out = pca::percept::enhance(clip, spec);
    VideoClip direct = pca::percept::mask_fuse(clip, mask);
    CHECK(out.frames == direct.frames);
    std::filesystem::remove_all(dir);
  }

  SECTION("file-backed specs require an existing directory") {
    CHECK_THROWS_AS(pca::percept::EnhancerSpec::external("/nonexistent/dir"),
                    pca::MissingAssetError);
    CHECK_THROWS_AS(pca::percept::EnhancerSpec::mask_fusion("/nonexistent/dir"),
                    pca::MissingAssetError);
  }
}

TEST_CASE("mock visual extractor") {
  VideoClip clip = make_clip("v3", 4, 4, 4, 3, 5);
  pca::percept::MockVisualExtractor extractor(123, 6, 5);

  SECTION("deterministic per (seed, clip)") {
    auto a = pca::percept::extract_visual_knowledge(clip, extractor,
                                                    pca::chat::LabelMode::kSingle);
    auto b = pca::percept::extract_visual_knowledge(clip, extractor,
                                                    pca::chat::LabelMode::kSingle);
    CHECK((a.f_v - b.f_v).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(a.s == b.s);
  }

  SECTION("single-label scores sum to 1") {
    auto out = pca::percept::extract_visual_knowledge(clip, extractor,
                                                      pca::chat::LabelMode::kSingle);
    double sum = 0.0;
    for (float v : out.s) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  SECTION("multi-label scores lie in [0,1] independently") {
    auto out = pca::percept::extract_visual_knowledge(clip, extractor,
                                                      pca::chat::LabelMode::kMulti);
    for (float v : out.s) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  SECTION("output shapes: one token per frame, feature_dim wide") {
    auto out = pca::percept::extract_visual_knowledge(clip, extractor,
                                                      pca::chat::LabelMode::kSingle);
    CHECK(out.f_v.rows() == clip.t);
    CHECK(out.f_v.cols() == 6);
    CHECK(out.s.size() == 5);
  }

  SECTION("matches hand-composed pooling and projection oracle") {
    // All-zero clip plus a generic clip, both against a double-precision
    // reimplementation of stats -> projection.
    VideoClip zero = make_clip("z", 3, 2, 2, 2);
    std::fill(zero.frames.begin(), zero.frames.end(), 0.0f);
    pca::percept::MockVisualExtractor ex(9, 4, 3);

    for (const VideoClip& probe : {zero, make_clip("r", 3, 2, 2, 2, 21)}) {
      auto out = pca::percept::extract_visual_knowledge(
          probe, ex, pca::chat::LabelMode::kSingle);

      // Independent stats: plain accumulation loops.
      const int stat_dim = 2 * probe.c;
      std::vector<std::vector<double>> stats(
          static_cast<size_t>(probe.t),
          std::vector<double>(static_cast<size_t>(stat_dim), 0.0));
      for (int f = 0; f < probe.t; ++f) {
        for (int ch = 0; ch < probe.c; ++ch) {
          double mean = 0.0;
          for (int y = 0; y < probe.h; ++y)
            for (int x = 0; x < probe.w; ++x) mean += probe.at(f, y, x, ch);
          mean /= probe.h * probe.w;
          double var = 0.0;
          for (int y = 0; y < probe.h; ++y)
            for (int x = 0; x < probe.w; ++x) {
              double d = probe.at(f, y, x, ch) - mean;
              var += d * d;
            }
          var /= probe.h * probe.w;
          stats[static_cast<size_t>(f)][static_cast<size_t>(ch)] = mean;
          stats[static_cast<size_t>(f)][static_cast<size_t>(probe.c + ch)] = var;
        }
      }
      Mat<double> proj = ex.projection(stat_dim);
      for (int f = 0; f < probe.t; ++f) {
        for (int j = 0; j < 4; ++j) {
          double expect = 0.0;
          for (int k = 0; k < stat_dim; ++k) {
            expect += stats[static_cast<size_t>(f)][static_cast<size_t>(k)] * proj(k, j);
          }
          CHECK(out.f_v(f, j) == Catch::Approx(expect).margin(1e-6));
        }
      }
    }
  }
}

TEST_CASE("file-backed extraction round trips through the cache") {
  auto dir = temp_dir("fvcache");
  VideoClip clip = make_clip("v9", 4, 4, 4, 3, 31);
  pca::percept::MockVisualExtractor mock(55, 6, 4);
  auto original = pca::percept::extract_visual_knowledge(
      clip, mock, pca::chat::LabelMode::kSingle);

  {
    pca::harness::KnowledgeCacheWriter writer(dir, "hash0");
    pca::harness::KnowledgeBundle b;
    b.sample_id = "v9";
    b.f_v = original.f_v;
    b.s = original.s;
    b.text = "placeholder";
    b.f_t = Mat<float>::Ones(1, 2);
    b.route = pca::chat::route_knowledge(
        std::vector<double>(original.s.begin(), original.s.end()), 0.5);
    b.label = {1, 0, 0, 0};
    writer.write_sample(b);
    writer.finalize();
  }

  pca::percept::FileVisualExtractor file_backed(dir);
  auto replayed = pca::percept::extract_visual_knowledge(
      clip, file_backed, pca::chat::LabelMode::kSingle);
  CHECK((replayed.f_v - original.f_v).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(replayed.s == original.s);

  VideoClip other = make_clip("unknown", 4, 4, 4, 3);
  CHECK_THROWS_AS(pca::percept::extract_visual_knowledge(
                      other, file_backed, pca::chat::LabelMode::kSingle),
                  pca::MissingAssetError);
  std::filesystem::remove_all(dir);
}
