#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "embedkit/encoder.hpp"

using namespace embedkit;

TEST_SUITE("encoder") {

TEST_CASE("format_query wraps instruction and query") {
  CHECK(format_query("Retrieve relevant passages.", "what is rust") ==
        "Retrieve relevant passages. what is rust<|endoftext|>");
  CHECK(format_query("", "what is rust") == "what is rust<|endoftext|>");
  CHECK_THROWS_AS(format_query("anything", ""), Error);
}

TEST_CASE("featurize counts n-gram multiplicities") {
  // "ab" only has one 2-gram and nothing longer.
  FeatureVector fv = featurize("ab", 2048, 2, 4);
  REQUIRE(fv.nnz() == 1);
  CHECK(fv.weights[0] == 1.0);
  CHECK(fv.feature_dim == 2048);

  // "aaaa": "aa" x3, "aaa" x2, "aaaa" x1 — three distinct grams.
  FeatureVector rep = featurize("aaaa", 2048, 2, 4);
  REQUIRE(rep.nnz() == 3);
  Vec64 weights = rep.weights;
  std::sort(weights.begin(), weights.end());
  CHECK(weights == Vec64{1.0, 2.0, 3.0});
}

TEST_CASE("featurize emits strictly increasing indices") {
  FeatureVector fv =
      featurize("the quick brown fox jumps over the lazy dog", 512, 2, 4);
  REQUIRE(fv.nnz() > 10);
  for (std::size_t i = 1; i < fv.nnz(); ++i) {
    CHECK(fv.indices[i] > fv.indices[i - 1]);
  }
  for (std::uint32_t idx : fv.indices) CHECK(idx < 512);
}

TEST_CASE("featurize validates its domain") {
  CHECK_THROWS_AS(featurize("text", 128, 2, 4), Error);   // F too small
  CHECK_THROWS_AS(featurize("text", 512, 0, 4), Error);   // lo < 1
  CHECK_THROWS_AS(featurize("text", 512, 3, 2), Error);   // lo > hi
  CHECK_THROWS_AS(featurize("text", 512, 2, 6), Error);   // hi > 5
}

TEST_CASE("pre-norm output matches a dense-matrix oracle") {
  for (ArchTag arch : {ArchTag::linear, ArchTag::mlp1}) {
    CAPTURE(static_cast<int>(arch));
    EncoderParams p = init_params(Seed{31}, 256, 8, arch);
    const std::string text = "oracle check, dense path";
    FeatureVector fv = featurize(text, 256, 2, 4);

    // Scatter into a dense vector, then a plain row-by-row multiply.
    Vec64 dense(256, 0.0);
    for (std::size_t t = 0; t < fv.nnz(); ++t) dense[fv.indices[t]] = fv.weights[t];
    Vec64 a(8, 0.0);
    for (std::size_t f = 0; f < 256; ++f) {
      for (std::size_t c = 0; c < 8; ++c) a[c] += dense[f] * p.projection.at(f, c);
    }
    Vec64 expected = a;
    if (arch == ArchTag::mlp1) {
      for (std::size_t r = 0; r < 8; ++r) {
        double s = p.hidden_b[r];
        for (std::size_t c = 0; c < 8; ++c) s += p.hidden_w.at(r, c) * a[c];
        expected[r] = std::tanh(s);
      }
    }

    Vec64 got = embed_pre_norm(p, text);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("embeddings are unit norm") {
  EncoderParams p = init_params(Seed{7}, 512, 16, ArchTag::mlp1);
  for (const char* text : {"a", "hello world", "longer text with more bytes"}) {
    Vec64 e = embed(p, text);
    CHECK(l2_norm(e) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("truncated embedding is the renormalized prefix") {
  EncoderParams p = init_params(Seed{7}, 512, 16, ArchTag::linear);
  const std::string text = "matryoshka prefix property";
  Vec64 pre = embed_pre_norm(p, text);
  pre.resize(8);
  Vec64 expected = l2_normalize(pre);
  Vec64 got = embed(p, text, 8);
  REQUIRE(got.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  }

  CHECK_THROWS_AS(embed(p, text, 4), Error);   // below the floor
  CHECK_THROWS_AS(embed(p, text, 17), Error);  // beyond D
}

TEST_CASE("instruction changes the query embedding") {
  EncoderParams p = init_params(Seed{7}, 512, 16, ArchTag::linear);
  Vec64 a = embed(p, format_query("Find code.", "binary search"));
  Vec64 b = embed(p, format_query("Find papers.", "binary search"));
  CHECK(cosine(a, b) < 1.0 - 1e-6);
}

TEST_CASE("embedding the empty string is degenerate") {
  EncoderParams p = init_params(Seed{7}, 512, 16, ArchTag::linear);
  CHECK_THROWS_AS(embed(p, ""), Error);
  try {
    embed(p, "");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_input);
  }
}

TEST_CASE("init is deterministic per seed") {
  EncoderParams a = init_params(Seed{99}, 512, 16, ArchTag::mlp1);
  EncoderParams b = init_params(Seed{99}, 512, 16, ArchTag::mlp1);
  CHECK(a.projection.values == b.projection.values);
  CHECK(a.hidden_w.values == b.hidden_w.values);
  CHECK(a.hidden_b == b.hidden_b);

  EncoderParams c = init_params(Seed{100}, 512, 16, ArchTag::mlp1);
  CHECK(a.projection.values != c.projection.values);

  CHECK_THROWS_AS(init_params(Seed{0}, 512, 4, ArchTag::linear), Error);
  CHECK_THROWS_AS(init_params(Seed{0}, 8, 16, ArchTag::linear), Error);
}

TEST_CASE("flatten and unflatten round-trip") {
  for (ArchTag arch : {ArchTag::linear, ArchTag::mlp1}) {
    EncoderParams p = init_params(Seed{5}, 256, 8, arch);
    Vec64 flat = flatten_params(p);
    CHECK(flat.size() == p.param_count());

    EncoderParams q = init_params(Seed{6}, 256, 8, arch);
    unflatten_params(q, flat);
    CHECK(q.projection.values == p.projection.values);
    if (arch == ArchTag::mlp1) {
      CHECK(q.hidden_w.values == p.hidden_w.values);
      CHECK(q.hidden_b == p.hidden_b);
    }

    flat.push_back(0.0);
    CHECK_THROWS_AS(unflatten_params(q, flat), Error);
  }
}

}  // TEST_SUITE
