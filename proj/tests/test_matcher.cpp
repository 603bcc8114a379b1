#include <catch2/catch_amalgamated.hpp>

#include "ssmmt/matcher.hpp"
#include "ssmmt/synth.hpp"

#include "support/tmpdir.hpp"

using namespace ssmmt;

namespace {

Sentence fig4() {
  return Sentence{0, tokenize("the police were raiding the building .")};
}

MatcherConfig small_matcher_cfg(int vocab, int d_img) {
  MatcherConfig cfg;
  cfg.model.d_model = 32;
  cfg.model.n_heads = 4;
  cfg.model.n_layers_enc = 1;
  cfg.model.n_layers_dec = 1;
  cfg.model.d_ff = 64;
  cfg.model.max_len = 32;
  cfg.model.src_vocab = vocab;
  cfg.model.tgt_vocab = vocab;
  cfg.model.d_img = d_img;
  cfg.d_match = 32;
  return cfg;
}

}  // namespace

TEST_CASE("labeling rule on the example sentence") {
  CHECK(label("raiding", fig4()) == 1);
  CHECK(label("swimming", fig4()) == 0);
  CHECK(label("RAIDING", fig4()) == 1);  // case-folded like the tokenizer
  CHECK_THROWS_AS(label("", fig4()), UsageError);
}

TEST_CASE("labeling rule agrees with set membership on 10^4 random pairs") {
  Rng rng(99);
  std::vector<std::string> pool;
  for (int w = 0; w < 40; ++w) {
    std::string word;
    for (int c = 0; c < 2 + int(rng.uniform_int(5)); ++c) {
      word.push_back(char('a' + rng.uniform_int(26)));
    }
    pool.push_back(word);
  }
  int64_t checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    Sentence s;
    s.id = trial;
    int len = 1 + int(rng.uniform_int(9));
    for (int t = 0; t < len; ++t) s.tokens.push_back(pool[size_t(rng.uniform_int(pool.size()))]);
    const auto& kw = pool[size_t(rng.uniform_int(pool.size()))];
    int expect = std::count(s.tokens.begin(), s.tokens.end(), kw) > 0 ? 1 : 0;
    REQUIRE(label(kw, s) == expect);
    ++checked;
  }
  CHECK(checked == 10000);
}

TEST_CASE("build_pairs produces balanced positives and negatives") {
  TmpDir tmp("pairs");
  BlobCache cache(tmp.path);
  FixtureClient client(3, 16);
  // One sentence, one keyword present in it, k=5.
  std::vector<SentencePair> corpus(1);
  corpus[0].src = Sentence{0, {"police", "officers"}};
  corpus[0].tgt = Sentence{0, {"polizei", "beamte"}};
  auto manifest = build_manifest({{0, {"police", "riot"}}}, client, 5, cache);
  // "police" is in the sentence (5 positives); "riot" is not (negative pool).
  auto pairs = build_pairs(manifest, corpus, 1, 7);
  int n_pos = 0, n_neg = 0;
  for (const auto& e : pairs) (e.label ? n_pos : n_neg)++;
  CHECK(n_pos == 5);
  CHECK(n_neg == 5);
  for (const auto& e : pairs) {
    if (e.label == 0) CHECK(e.keyword == "riot");  // only valid negative source
  }

  // Determinism.
  auto again = build_pairs(manifest, corpus, 1, 7);
  CHECK(pairs == again);
  auto other_seed = build_pairs(manifest, corpus, 1, 8);
  CHECK(pairs.size() == other_seed.size());

  // Corpus/manifest id mismatch.
  std::vector<SentencePair> wrong(1);
  wrong[0].src = Sentence{5, {"x"}};
  wrong[0].tgt = Sentence{5, {"y"}};
  CHECK_THROWS_AS(build_pairs(manifest, wrong, 1, 7), DataError);
}

TEST_CASE("match examples round-trip through jsonl") {
  std::vector<MatchExample> ex = {{0, "police", std::string(64, 'a'), 1},
                                  {1, "riot", std::string(64, 'b'), 0}};
  auto text = match_examples_to_jsonl(ex);
  CHECK(match_examples_from_jsonl(text) == ex);
}

TEST_CASE("auc ranks separable scores at 1 and ties at one half") {
  CHECK(auc_score({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(auc_score({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}) == 0.0);
  CHECK(auc_score({0.5, 0.5, 0.5, 0.5}, {1, 1, 0, 0}) == 0.5);
  CHECK_THROWS_AS(auc_score({0.5}, {1}), DataError);
}

TEST_CASE("random-parameter matcher scores like chance on balanced data") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng(seed);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 2000; ++i) {
      scores.push_back(rng.normal());
      labels.push_back(i % 2);
    }
    double a = auc_score(scores, labels);
    CHECK(a > 0.4);
    CHECK(a < 0.6);
  }
}

TEST_CASE("match_logit: zero projections give the bias, and it is bilinear in f") {
  auto cfg = small_matcher_cfg(11, 8);
  auto params = init_matcher_params<double>(cfg, 1);
  for (auto& v : params.at("matcher/head/text_proj").data) v = 0;
  for (auto& v : params.at("matcher/head/img_proj").data) v = 0;
  params.at("matcher/head/bias").at(0, 0) = 0.37;

  Graph<double> g;
  ParamBinder<double> p(g, params, false);
  Rng rng(4);
  auto s = g.constant(random_normal<double>(1, cfg.model.d_model, rng, 1.0));
  auto f = g.constant(random_normal<double>(1, cfg.model.d_img, rng, 1.0));
  CHECK(g.value(match_logit(g, cfg, p, s, f)).at(0, 0) == Catch::Approx(0.37).margin(1e-12));
}

TEST_CASE("match_logit equals hand-computed bilinear arithmetic") {
  MatcherConfig cfg;
  cfg.model.d_model = 4;
  cfg.model.n_heads = 2;
  cfg.model.src_vocab = 5;
  cfg.model.tgt_vocab = 5;
  cfg.model.d_img = 3;
  cfg.d_match = 4;
  auto params = init_matcher_params<double>(cfg, 9);
  Rng rng(17);
  for (auto& v : params.at("matcher/head/text_proj").data) v = rng.normal();
  for (auto& v : params.at("matcher/head/img_proj").data) v = rng.normal();
  params.at("matcher/head/bias").at(0, 0) = 0.11;

  Tensor<double> s = random_normal<double>(1, 4, rng, 1.0);
  Tensor<double> f = random_normal<double>(1, 3, rng, 1.0);

  // Hand arithmetic: ts = s P_t, fi = f P_i, logit = ts.fi / sqrt(4) + b.
  const auto& Pt = params.at("matcher/head/text_proj");
  const auto& Pi = params.at("matcher/head/img_proj");
  std::vector<double> ts(4, 0), fi(4, 0);
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 4; ++i) ts[size_t(j)] += s.at(0, i) * Pt.at(i, j);
    for (int i = 0; i < 3; ++i) fi[size_t(j)] += f.at(0, i) * Pi.at(i, j);
  }
  double expect = 0.11;
  for (int j = 0; j < 4; ++j) expect += ts[size_t(j)] * fi[size_t(j)] / 2.0;

  Graph<double> g;
  ParamBinder<double> p(g, params, false);
  auto z = match_logit(g, cfg, p, g.constant(s), g.constant(f));
  CHECK(g.value(z).at(0, 0) == Catch::Approx(expect).margin(1e-12));

  // Scaling f by c > 0 scales (logit - bias) by c.
  Tensor<double> f3 = f;
  for (auto& v : f3.data) v *= 3.0;
  auto z3 = match_logit(g, cfg, p, g.constant(s), g.constant(f3));
  CHECK(g.value(z3).at(0, 0) - 0.11 ==
        Catch::Approx(3.0 * (g.value(z).at(0, 0) - 0.11)).margin(1e-10));
}

TEST_CASE("matcher loss with zero logits is ln 2 and is batch-order invariant") {
  SynthSpec spec;
  spec.n_sentences = 16;
  spec.n_ambiguous_words = 2;
  spec.concept_count = 8;
  spec.seed = 5;
  auto synth = generate_synth(spec);
  TmpDir tmp("mloss");
  BlobCache cache(tmp.path);
  FixtureClient client(spec.seed, spec.concept_count);
  auto manifest = build_manifest(synth.keywords, client, 1, cache);
  StubExtractor ex(16);
  auto features = extract_all(manifest, ex, cache);
  auto vocab = build_vocab([&] {
    std::vector<Sentence> ss;
    for (const auto& p : synth.corpus) ss.push_back(p.src);
    for (const auto& p : synth.corpus) ss.push_back(p.tgt);
    return ss;
  }(), 2);
  auto cfg = small_matcher_cfg(vocab.size(), 16);
  auto pairs = build_pairs(manifest, synth.corpus, 1, 3);

  std::map<int64_t, std::vector<int>> ids;
  for (const auto& p : synth.corpus) ids[p.src.id] = encode(vocab, p.src.tokens);

  // Zero head -> all logits equal bias = 0 -> loss = ln 2 for any labels.
  auto params = init_matcher_params<float>(cfg, 1);
  for (auto& v : params.at("matcher/head/text_proj").data) v = 0;
  for (auto& v : params.at("matcher/head/img_proj").data) v = 0;
  std::vector<const MatchExample*> batch;
  for (const auto& e : pairs) batch.push_back(&e);
  {
    Graph<float> g;
    ParamBinder<float> p(g, params, false);
    auto loss = matcher_loss(g, cfg, p, batch, ids, features);
    CHECK(double(g.value(loss).at(0, 0)) == Catch::Approx(std::log(2.0)).epsilon(1e-6));
  }

  // Permutation invariance of the batch mean (within fp tolerance).
  auto params2 = init_matcher_params<float>(cfg, 2);
  auto run_loss = [&](const std::vector<const MatchExample*>& b) {
    Graph<float> g;
    ParamBinder<float> p(g, params2, false);
    return double(g.value(matcher_loss(g, cfg, p, b, ids, features)).at(0, 0));
  };
  auto reversed = batch;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(std::abs(run_loss(batch) - run_loss(reversed)) <= 1e-6);

  std::vector<const MatchExample*> empty;
  Graph<float> g;
  ParamBinder<float> p(g, params2, false);
  CHECK_THROWS_AS(matcher_loss(g, cfg, p, empty, ids, features), UsageError);
}

TEST_CASE("train_matcher: lr=0 freezes, seeds reproduce, single-label errors") {
  SynthSpec spec;
  spec.n_sentences = 24;
  spec.n_ambiguous_words = 2;
  spec.concept_count = 8;
  spec.seed = 11;
  auto synth = generate_synth(spec);
  TmpDir tmp("mtrain");
  BlobCache cache(tmp.path);
  FixtureClient client(spec.seed, spec.concept_count);
  auto manifest = build_manifest(synth.keywords, client, 1, cache);
  StubExtractor ex(16);
  auto features = extract_all(manifest, ex, cache);
  std::vector<Sentence> all;
  for (const auto& p : synth.corpus) {
    all.push_back(p.src);
    all.push_back(p.tgt);
  }
  auto vocab = build_vocab(all, 2);
  auto cfg = small_matcher_cfg(vocab.size(), 16);
  auto pairs = build_pairs(manifest, synth.corpus, 1, 3);

  TrainMatcherOptions opts;
  opts.epochs = 2;
  opts.seed = 42;

  SECTION("lr = 0 leaves parameters and loss unchanged") {
    auto o2 = opts;
    o2.lr = 0.0;
    auto res = train_matcher(pairs, synth.corpus, vocab, features, cfg, o2);
    auto fresh = init_matcher_params<float>(cfg, o2.seed);
    for (const auto& [name, t] : fresh) {
      CHECK(res.params.at(name).data == t.data);
    }
    REQUIRE(res.log.size() == 2);
    CHECK(res.log[0].train_loss == Catch::Approx(res.log[1].train_loss).margin(1e-5));
  }

  SECTION("same seed twice gives identical checkpoints") {
    auto r1 = train_matcher(pairs, synth.corpus, vocab, features, cfg, opts);
    auto r2 = train_matcher(pairs, synth.corpus, vocab, features, cfg, opts);
    auto c1 = checkpoint_to_bytes(matcher_checkpoint(r1, opts.seed));
    auto c2 = checkpoint_to_bytes(matcher_checkpoint(r2, opts.seed));
    CHECK(c1 == c2);
  }

  SECTION("single-label dataset is rejected") {
    std::vector<MatchExample> only_pos;
    for (const auto& e : pairs) {
      if (e.label == 1) only_pos.push_back(e);
    }
    CHECK_THROWS_AS(train_matcher(only_pos, synth.corpus, vocab, features, cfg, opts),
                    DataError);
  }
}

TEST_CASE("matcher learns the synthetic task to high held-out auc") {
  SynthSpec spec;
  spec.n_sentences = 96;
  spec.n_ambiguous_words = 2;
  spec.concept_count = 8;
  spec.seed = 21;
  auto synth = generate_synth(spec);
  TmpDir tmp("mlearn");
  BlobCache cache(tmp.path);
  FixtureClient client(spec.seed, spec.concept_count);
  auto manifest = build_manifest(synth.keywords, client, 1, cache);
  StubExtractor ex(32);
  auto features = extract_all(manifest, ex, cache);
  std::vector<Sentence> all;
  for (const auto& p : synth.corpus) {
    all.push_back(p.src);
    all.push_back(p.tgt);
  }
  auto vocab = build_vocab(all, 2);
  auto cfg = small_matcher_cfg(vocab.size(), 32);
  auto pairs = build_pairs(manifest, synth.corpus, 1, 3);

  TrainMatcherOptions opts;
  opts.epochs = 15;
  opts.lr = 2e-3;
  opts.seed = 7;
  auto res = train_matcher(pairs, synth.corpus, vocab, features, cfg, opts);
  INFO("final auc " << res.final_auc);
  CHECK(res.final_auc >= 0.9);
}
