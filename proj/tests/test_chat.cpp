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
#include <filesystem>
#include <fstream>

#include "pca/chat.hpp"
#include "test_helpers.hpp"

using namespace pca::chat;

TEST_CASE("route_knowledge") {
  SECTION("clear cases") {
    CHECK(route_knowledge({0.9, 0.1}, 0.5).path == RoutePath::kPromptPath);
    CHECK(route_knowledge({0.3, 0.3}, 0.5).path == RoutePath::kCaptionPath);
  }

  SECTION("boundary is inclusive") {
    auto d = route_knowledge({0.5, 0.2}, 0.5);
    CHECK(d.path == RoutePath::kPromptPath);
    CHECK(d.max_score == 0.5);
    CHECK(d.threshold == 0.5);
  }

  SECTION("empty scores rejected") {
    CHECK_THROWS_AS(route_knowledge({}, 0.5), pca::InvalidInputError);
  }

  SECTION("out-of-range scores and sigma rejected") {
    CHECK_THROWS_AS(route_knowledge({1.2}, 0.5), pca::InvalidInputError);
    CHECK_THROWS_AS(route_knowledge({-0.1}, 0.5), pca::InvalidInputError);
    CHECK_THROWS_AS(route_knowledge({0.5}, 1.5), pca::InvalidInputError);
  }

  SECTION("total and exclusive against the literal predicate") {
    // 10^4 random (s, sigma) pairs plus constructed exact-boundary cases.
    pca::Rng rng(13);
    int checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
      size_t n = 1 + rng.uniform_index(6);
      std::vector<double> s(n);
      for (double& v : s) v = rng.uniform(0.0, 1.0);
      double sigma = rng.uniform(0.0, 1.0);
      if (trial % 10 == 0) {
        // Force the >= boundary exactly.
        sigma = s[rng.uniform_index(n)];
      }
      double max_score = *std::max_element(s.begin(), s.end());
      auto d = route_knowledge(s, sigma);
      bool expect_prompt = max_score >= sigma;
      CHECK(d.path == (expect_prompt ? RoutePath::kPromptPath
                                     : RoutePath::kCaptionPath));
      ++checked;
    }
    CHECK(checked == 10000);
  }
}

TEST_CASE("expand_prompt") {
  PromptTemplate tmpl;
  tmpl.subject = "A man is";
  tmpl.adverbial = "on the street";

  SECTION("multi mode renders every candidate in score order") {
    std::string out = expand_prompt({0.9, 0.6, 0.1}, 0.5,
                                    {"opening", "closing", "running"}, tmpl,
                                    LabelMode::kMulti);
    CHECK(out == "A man is opening on the street. A man is closing on the street");
  }

  SECTION("single mode renders only the top label") {
    std::string out =
        expand_prompt({0.2, 0.8}, 0.5, {"a", "b"}, tmpl, LabelMode::kSingle);
    CHECK(out == "A man is b on the street");
  }

  SECTION("ties break toward the lower index") {
    std::string out = expand_prompt({0.7, 0.7}, 0.5, {"first", "second"}, tmpl,
                                    LabelMode::kMulti);
    CHECK(out ==
          "A man is first on the street. A man is second on the street");
  }

  SECTION("empty adverbial leaves no trailing space") {
    PromptTemplate bare;
    bare.subject = "A man is";
    std::string out =
        expand_prompt({0.9}, 0.5, {"running"}, bare, LabelMode::kSingle);
    CHECK(out == "A man is running");
  }

  SECTION("caption-path scores are a contract violation") {
    CHECK_THROWS_AS(
        expand_prompt({0.1, 0.2}, 0.5, {"a", "b"}, tmpl, LabelMode::kMulti),
        pca::ContractViolationError);
  }

  SECTION("multi mode on a prompt route always yields at least one candidate") {
    pca::Rng rng(77);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> s(4);
      for (double& v : s) v = rng.uniform(0.0, 1.0);
      double sigma = rng.uniform(0.0, 1.0);
      if (route_knowledge(s, sigma).path != RoutePath::kPromptPath) continue;
      auto cands = candidate_labels(s, sigma, LabelMode::kMulti);
      CHECK(!cands.empty());
    }
  }
}

TEST_CASE("summarize_explanations") {
  std::map<std::string, std::string> expl = {
      {"obstruction", "Obstruction is caused by hard debris."},
      {"deposit", "Deposit builds up as settled dirt."}};

  SECTION("one candidate returns its explanation verbatim") {
    CHECK(summarize_explanations({"deposit"}, expl) ==
          "Deposit builds up as settled dirt.");
  }

  SECTION("two candidates join with a single space in order") {
    CHECK(summarize_explanations({"obstruction", "deposit"}, expl) ==
          "Obstruction is caused by hard debris. Deposit builds up as settled "
          "dirt.");
  }

  SECTION("missing explanation is a missing asset") {
    CHECK_THROWS_AS(summarize_explanations({"unknown"}, expl),
                    pca::MissingAssetError);
  }
}

TEST_CASE("caption providers") {
  SECTION("file provider looks up by sample id") {
    auto dir = std::filesystem::temp_directory_path() / "pca_test_captions";
    std::filesystem::create_directories(dir);
    {
      std::ofstream f(dir / "captions.json");
      f << R"({"v1": "a man walks"})";
    }
    FileCaptionProvider provider(dir / "captions.json");
    CHECK(get_caption("v1", provider) == "a man walks");
    CHECK_THROWS_AS(get_caption("v2", provider), pca::MissingAssetError);
    std::filesystem::remove_all(dir);
  }

  SECTION("missing caption file is a missing asset") {
    CHECK_THROWS_AS(FileCaptionProvider("/nonexistent/captions.json"),
                    pca::MissingAssetError);
  }

  SECTION("mock provider is deterministic") {
    MockCaptionProvider provider(42);
    CHECK(provider.caption("vid7") == provider.caption("vid7"));
    CHECK(provider.caption("vid7") != provider.caption("vid8"));
    CHECK(provider.caption("vid7").substr(0, 8) == "a person");
  }
}

TEST_CASE("tokenize") {
  CHECK(tokenize("A Man, walking!") ==
        std::vector<std::string>{"a", "man", "walking"});
  CHECK(tokenize("  spaced   out  ") == std::vector<std::string>{"spaced", "out"});
  CHECK(tokenize("...!!!").empty());
}

TEST_CASE("encode_text with the mock encoder") {
  MockTextEncoder encoder(7, 5);

  SECTION("deterministic") {
    auto a = encode_text("a man walks", encoder);
    auto b = encode_text("a man walks", encoder);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
  }

  SECTION("repeated tokens share rows") {
    auto out = encode_text("walk walk", encoder);
    REQUIRE(out.rows() == 2);
    CHECK((out.row(0) - out.row(1)).cwiseAbs().maxCoeff() == 0.0f);
  }

  SECTION("token vector equals an independent reimplementation") {
    // Re-derives the keyed generator from scratch: FNV-1a tag/token hashing,
    // splitmix64 stream derivation, mt19937_64 and Box-Muller.
    auto impl = encoder.token_vector("walk");

    auto fnv = [](const std::string& s) {
      uint64_t h = 0xcbf29ce484222325ULL;
      for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
      return h;
    };
    auto splitmix = [](uint64_t state) {
      state += 0x9e3779b97f4a7c15ULL;
      uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      return z ^ (z >> 31);
    };
    uint64_t tag_stream = splitmix(7ull ^ fnv("token"));
    uint64_t token_seed =
        splitmix(tag_stream ^ (fnv("walk") * 0x9e3779b97f4a7c15ULL + 1));

    std::mt19937_64 eng(token_seed);
    for (int j = 0; j < 5; ++j) {
      double u1 = static_cast<double>((eng() >> 11) + 1) * 0x1.0p-53;
      double u2 = static_cast<double>((eng() >> 11) + 1) * 0x1.0p-53;
      double n = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      CHECK(impl(0, j) == Catch::Approx(n).margin(1e-7));
    }
  }

  SECTION("truncation to max_text_tokens") {
    MockTextEncoder tiny(7, 3, 4);
    std::string text = "one two three four five six";
    auto out = tiny.encode(text);
    CHECK(out.rows() == 4);
  }

  SECTION("empty text rejected") {
    CHECK_THROWS_AS(encode_text("", encoder), pca::InvalidInputError);
    CHECK_THROWS_AS(encode_text("?!.,", encoder), pca::InvalidInputError);
  }

  SECTION("row count bounded and outputs finite") {
    pca::Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      std::string text;
      int words = 1 + static_cast<int>(rng.uniform_index(40));
      for (int i = 0; i < words; ++i) {
        text += "w" + std::to_string(rng.uniform_index(10)) + " ";
      }
      auto out = encode_text(text, encoder);
      CHECK(out.rows() >= 1);
      CHECK(out.rows() <= kDefaultMaxTextTokens);
      CHECK(pca::all_finite(out));
    }
  }
}

TEST_CASE("file-backed text encoder") {
  auto dir = std::filesystem::temp_directory_path() / "pca_test_textcache";
  std::filesystem::remove_all(dir);

  MockTextEncoder mock(11, 4);
  std::map<std::string, pca::Mat<float>> features;
  features["a man walks"] = mock.encode("a man walks");
  features["a person turning"] = mock.encode("a person turning");
  FileTextEncoder::write_cache(dir, features);

  FileTextEncoder file_backed(dir);
  CHECK((file_backed.encode("a man walks") - features["a man walks"])
            .cwiseAbs()
            .maxCoeff() == 0.0f);
  CHECK_THROWS_AS(file_backed.encode("unknown text"), pca::MissingAssetError);
  CHECK_THROWS_AS(FileTextEncoder("/nonexistent/dir"), pca::MissingAssetError);

  std::filesystem::remove_all(dir);
}
