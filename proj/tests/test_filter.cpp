#include <catch2/catch_amalgamated.hpp>

#include "ssmmt/filter.hpp"
#include "ssmmt/synth.hpp"

#include "support/tmpdir.hpp"

using namespace ssmmt;

TEST_CASE("relevance weights: uniform, hand-computed and limit cases") {
  auto uniform = relevance_weights({1.0, 1.0, 1.0, 1.0, 1.0}, 1.0);
  for (double w : uniform) CHECK(w == Catch::Approx(0.2).margin(1e-12));

  // logits (1,0,0,0,0): weights (e/(e+4), 1/(e+4) x4)
  auto w = relevance_weights({1, 0, 0, 0, 0}, 1.0);
  double e = std::exp(1.0);
  CHECK(w[0] == Catch::Approx(e / (e + 4)).margin(1e-9));
  // e/(e+4) = 0.4046097..., 1/(e+4) = 0.1488476...
  CHECK(w[0] == Catch::Approx(0.40461).margin(1e-5));
  for (int i = 1; i < 5; ++i) {
    CHECK(w[size_t(i)] == Catch::Approx(1.0 / (e + 4)).margin(1e-9));
    CHECK(w[size_t(i)] == Catch::Approx(0.14885).margin(1e-5));
  }

  // T -> 0 approaches one-hot on the argmax.
  auto hard = relevance_weights({0.3, 0.9, 0.1}, 1e-3);
  CHECK(hard[1] == Catch::Approx(1.0).margin(1e-9));
  CHECK(hard[0] + hard[2] <= 1e-9);

  CHECK_THROWS_AS(relevance_weights({}, 1.0), UsageError);
  CHECK_THROWS_AS(relevance_weights({1.0}, 0.0), UsageError);
}

TEST_CASE("weights are shift-invariant and temperature preserves the argmax") {
  std::vector<double> logits = {0.2, -1.0, 3.1, 0.0, 1.4};
  auto base = relevance_weights(logits, 1.0);
  std::vector<double> shifted = logits;
  for (auto& z : shifted) z += 17.3;
  auto shifted_w = relevance_weights(shifted, 1.0);
  for (size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i] == Catch::Approx(shifted_w[i]).margin(1e-9));
  }
  for (double t : {0.3, 1.0, 4.0}) {
    auto w = relevance_weights(logits, t);
    CHECK(std::max_element(w.begin(), w.end()) - w.begin() == 2);
  }
}

TEST_CASE("entropy spans [0, ln K] and hits ln K only at uniform") {
  auto uniform = relevance_weights({0, 0, 0, 0, 0}, 1.0);
  CHECK(weight_entropy(uniform) == Catch::Approx(std::log(5.0)).margin(1e-9));
  auto hard = relevance_weights({40.0, 0, 0, 0, 0}, 1.0);
  CHECK(weight_entropy(hard) <= 1e-9);
  auto mid = relevance_weights({1.0, 0.5, 0, 0, 0}, 1.0);
  CHECK(weight_entropy(mid) > 0);
  CHECK(weight_entropy(mid) < std::log(5.0) - 1e-9);
}

TEST_CASE("pool is a convex combination") {
  std::vector<float> fa = {1, 0, 2};
  std::vector<float> fb = {0, 1, 4};
  std::vector<float> fc = {3, 3, 0};
  std::vector<const std::vector<float>*> feats = {&fa, &fb, &fc};

  auto one_hot = pool(feats, {0.0, 1.0, 0.0});
  CHECK(one_hot == std::vector<double>{0, 1, 4});

  std::vector<const std::vector<float>*> same = {&fa, &fa, &fa};
  auto uniform = pool(same, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  for (size_t d = 0; d < 3; ++d) CHECK(uniform[d] == Catch::Approx(double(fa[d])).margin(1e-12));

  // Hand-computed weighted sum.
  auto mix = pool(feats, {0.5, 0.25, 0.25});
  CHECK(mix[0] == Catch::Approx(0.5 * 1 + 0.25 * 0 + 0.25 * 3).margin(1e-12));
  CHECK(mix[1] == Catch::Approx(0.5 * 0 + 0.25 * 1 + 0.25 * 3).margin(1e-12));
  CHECK(mix[2] == Catch::Approx(0.5 * 2 + 0.25 * 4 + 0.25 * 0).margin(1e-12));

  CHECK_THROWS_AS(pool(feats, {0.5, 0.5}), UsageError);
  CHECK_THROWS_AS(pool(feats, {0.5, 0.4, 0.4}), UsageError);
}

namespace {

struct FilterFixture {
  TmpDir tmp{"filter"};
  SynthSpec spec;
  SynthOutput synth;
  RetrievalManifest manifest;
  FeatureStore features;
  Vocabulary vocab;
  MatcherConfig cfg;
  ParamSet params;

  FilterFixture() {
    spec.n_sentences = 24;
    spec.n_ambiguous_words = 2;
    spec.concept_count = 8;
    spec.seed = 31;
    synth = generate_synth(spec);
    BlobCache cache(tmp.path);
    FixtureClient client(spec.seed, spec.concept_count);
    manifest = build_manifest(synth.keywords, client, 1, cache);
    StubExtractor ex(16);
    features = extract_all(manifest, ex, cache);
    std::vector<Sentence> all;
    for (const auto& p : synth.corpus) {
      all.push_back(p.src);
      all.push_back(p.tgt);
    }
    vocab = build_vocab(all, 2);
    cfg.model.d_model = 16;
    cfg.model.n_heads = 2;
    cfg.model.n_layers_enc = 1;
    cfg.model.n_layers_dec = 1;
    cfg.model.d_ff = 32;
    cfg.model.max_len = 32;
    cfg.model.src_vocab = vocab.size();
    cfg.model.tgt_vocab = vocab.size();
    cfg.model.d_img = 16;
    cfg.d_match = 16;
    params = init_matcher_params<float>(cfg, 5);
  }
};

}  // namespace

TEST_CASE_METHOD(FilterFixture, "build_contexts: weights on the simplex, deterministic file") {
  auto contexts = build_contexts(synth.corpus, vocab, manifest, features, cfg, params);
  REQUIRE(contexts.size() == synth.corpus.size());
  for (const auto& c : contexts) {
    REQUIRE(c.image_ids.size() == size_t(spec.k_candidates));
    double sum = 0;
    for (float w : c.weights) {
      CHECK(w >= 0);
      sum += double(w);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    CHECK(c.entropy >= 0);
    CHECK(c.entropy <= std::log(double(spec.k_candidates)) + 1e-9);
    CHECK(!c.no_visual);
  }
  auto bytes1 = contexts_to_bytes(contexts, features.d_img, 1.0, "hash");
  auto again = build_contexts(synth.corpus, vocab, manifest, features, cfg, params);
  CHECK(contexts_to_bytes(again, features.d_img, 1.0, "hash") == bytes1);

  auto file = contexts_from_bytes(bytes1);
  CHECK(file.d_img == features.d_img);
  REQUIRE(file.contexts.size() == contexts.size());
  for (size_t i = 0; i < contexts.size(); ++i) {
    CHECK(file.contexts[i] == contexts[i]);
  }
}

TEST_CASE_METHOD(FilterFixture, "single candidate gets weight 1 and exact pooled feature") {
  std::vector<KeywordSet> one = {{0, {synth.answer_key[0].planted_keyword}}};
  BlobCache cache(tmp / "single");
  FixtureClient client(spec.seed, spec.concept_count);
  auto m1 = build_manifest(one, client, 1, cache);
  StubExtractor ex(16);
  auto f1 = extract_all(m1, ex, cache);
  std::vector<SentencePair> corpus1 = {synth.corpus[0]};
  auto contexts = build_contexts(corpus1, vocab, m1, f1, cfg, params);
  REQUIRE(contexts.size() == 1);
  REQUIRE(contexts[0].weights.size() == 1);
  CHECK(contexts[0].weights[0] == 1.0f);
  const auto& feat = f1.get(contexts[0].image_ids[0]);
  for (size_t d = 0; d < feat.size(); ++d) {
    CHECK(contexts[0].pooled[d] == Catch::Approx(double(feat[d])).margin(1e-7));
  }
}

TEST_CASE_METHOD(FilterFixture, "sentence with zero candidates degrades to no-visual") {
  std::vector<SentencePair> extra = synth.corpus;
  SentencePair orphan;
  orphan.src = Sentence{999, {"today", "often", "."}};
  orphan.tgt = Sentence{999, {"heute", "oft", "."}};
  extra.push_back(orphan);
  auto contexts = build_contexts(extra, vocab, manifest, features, cfg, params);
  const VisualContext* c = nullptr;
  for (const auto& ctx : contexts) {
    if (ctx.sentence_id == 999) c = &ctx;
  }
  REQUIRE(c != nullptr);
  CHECK(c->no_visual);
  CHECK(c->image_ids.empty());
  for (float v : c->pooled) CHECK(v == 0.0f);
}

TEST_CASE_METHOD(FilterFixture, "candidate cap keeps the top-scoring images") {
  FilterOptions opts;
  opts.candidate_cap = 3;
  auto contexts = build_contexts(synth.corpus, vocab, manifest, features, cfg, params, opts);
  for (const auto& c : contexts) {
    CHECK(c.image_ids.size() <= 3);
    double sum = 0;
    for (float w : c.weights) sum += double(w);
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE_METHOD(FilterFixture, "planted index matches the canonical candidate order") {
  for (const auto& key : synth.answer_key) {
    auto cands = sentence_candidates(manifest, features, key.id);
    REQUIRE(int(cands.size()) == spec.k_candidates);
    REQUIRE(key.planted_index < int(cands.size()));
    CHECK(cands[size_t(key.planted_index)].first == key.planted_image_id);
  }
}
