#include <catch2/catch_amalgamated.hpp>

#include "ssmmt/corpus.hpp"

#include "support/tmpdir.hpp"

using namespace ssmmt;

static Sentence sent(int64_t id, std::vector<std::string> toks) {
  return Sentence{id, std::move(toks)};
}

TEST_CASE("tokenize lowercases, splits punctuation and whitespace") {
  CHECK(tokenize("the police were raiding the building .") ==
        std::vector<std::string>{"the", "police", "were", "raiding", "the", "building", "."});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("Die Polizei!") == std::vector<std::string>{"die", "polizei", "!"});
  CHECK(tokenize("a,b") == std::vector<std::string>{"a", ",", "b"});
  CHECK(tokenize("  spaced\tout \n") == std::vector<std::string>{"spaced", "out"});
}

TEST_CASE("tokenize keeps multi-byte utf-8 intact") {
  auto toks = tokenize("das Gebäude .");
  REQUIRE(toks.size() == 3);
  CHECK(toks[1] == "gebäude");
  CHECK_THROWS_AS(tokenize(std::string("bad\xC3")), DataError);
}

TEST_CASE("tokenize is idempotent") {
  Rng rng(11);
  std::vector<std::string> texts = {"The police, were raiding;the building.",
                                    "a  B c!d?e", "Ünïcode blßib .", "x"};
  for (const auto& t : texts) {
    auto once = tokenize(t);
    auto twice = tokenize(join_tokens(once));
    CHECK(once == twice);
  }
}

TEST_CASE("build_vocab orders by frequency then lexicographically after specials") {
  auto v = build_vocab({sent(0, {"a", "a", "b"})}, 1);
  CHECK(v.id_to_token[0] == "<pad>");
  CHECK(v.id_to_token[1] == "<unk>");
  CHECK(v.id_to_token[2] == "<bos>");
  CHECK(v.id_to_token[3] == "<eos>");
  CHECK(v.id_to_token[4] == "<mask>");
  CHECK(v.lookup("a") == 5);
  CHECK(v.lookup("b") == 6);

  auto v2 = build_vocab({sent(0, {"a", "a", "b"})}, 2);
  CHECK(v2.contains("a"));
  CHECK(!v2.contains("b"));
  CHECK(v2.lookup("b") == Vocabulary::kUnk);

  auto fig4 = tokenize("the police were raiding the building .");
  auto v3 = build_vocab({sent(0, fig4)});
  CHECK(v3.size() == Vocabulary::kNumSpecials + 6);
}

TEST_CASE("build_vocab rejects an empty corpus and is deterministic") {
  CHECK_THROWS_AS(build_vocab({}), DataError);
  std::vector<Sentence> corpus = {sent(0, {"z", "q", "z"}), sent(1, {"m", "q"})};
  auto a = build_vocab(corpus);
  auto b = build_vocab(corpus);
  CHECK(a.id_to_token == b.id_to_token);
}

TEST_CASE("encode/decode round-trip and error paths") {
  auto v = build_vocab({sent(0, {"hello", "world"})});
  auto ids = encode(v, {"hello", "world"});
  CHECK(decode(v, ids) == std::vector<std::string>{"hello", "world"});
  CHECK(encode(v, {"unseen"})[0] == Vocabulary::kUnk);
  CHECK_THROWS_AS(decode(v, {v.size()}), DataError);
  CHECK_THROWS_AS(decode(v, {-1}), DataError);
}

TEST_CASE("decode-encode identity on random in-vocab corpora") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Sentence> corpus;
    std::vector<std::string> pool;
    for (int w = 0; w < 30; ++w) {
      std::string word;
      for (int c = 0; c < 3 + int(rng.uniform_int(5)); ++c) {
        word.push_back(char('a' + rng.uniform_int(26)));
      }
      pool.push_back(word);
    }
    for (int s = 0; s < 5; ++s) {
      std::vector<std::string> toks;
      for (int t = 0; t < 1 + int(rng.uniform_int(8)); ++t) {
        toks.push_back(pool[size_t(rng.uniform_int(pool.size()))]);
      }
      corpus.push_back(sent(s, toks));
    }
    auto v = build_vocab(corpus);
    for (const auto& s : corpus) {
      CHECK(decode(v, encode(v, s.tokens)) == s.tokens);
    }
  }
}

TEST_CASE("extract_keywords filters, dedupes and truncates") {
  auto fig4 = sent(0, tokenize("the police were raiding the building ."));
  std::set<std::string> stop = {"the", "were"};
  IdfTable idf;  // empty: all ties, sentence order preserved
  auto ks = extract_keywords(fig4, stop, idf, 3);
  CHECK(ks.keywords == std::vector<std::string>{"police", "raiding", "building"});

  auto all_stop = sent(1, tokenize("the the ."));
  CHECK(extract_keywords(all_stop, stop, idf, 3).keywords.empty());

  auto one = extract_keywords(fig4, stop, idf, 1);
  CHECK(one.keywords == std::vector<std::string>{"police"});

  CHECK_THROWS_AS(extract_keywords(fig4, stop, idf, 0), UsageError);
}

TEST_CASE("extract_keywords ranks by descending idf") {
  std::vector<Sentence> corpus = {
      sent(0, {"common", "rare", "common", "."}),
      sent(1, {"common", "x"}),
      sent(2, {"common", "y"}),
  };
  auto idf = build_idf(corpus);
  auto ks = extract_keywords(corpus[0], {}, idf, 2);
  // "rare" appears in one document, "common" in three.
  CHECK(ks.keywords == std::vector<std::string>{"rare", "common"});
}

TEST_CASE("keywords are always a subset of sentence tokens") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> toks;
    for (int t = 0; t < 1 + int(rng.uniform_int(10)); ++t) {
      std::string w(1 + rng.uniform_int(4), char('a' + rng.uniform_int(6)));
      toks.push_back(w);
    }
    Sentence s{0, toks};
    auto ks = extract_keywords(s, {"a"}, IdfTable{}, 3);
    for (const auto& kw : ks.keywords) {
      CHECK(std::count(toks.begin(), toks.end(), kw) > 0);
    }
  }
}

TEST_CASE("parallel corpus loading rejects blank lines and mismatches") {
  TmpDir tmp("corpus");
  write_file_atomic(tmp / "s.txt", "a b\nc d\n");
  write_file_atomic(tmp / "t.txt", "x y\nz w\n");
  auto pairs = load_parallel_corpus(tmp / "s.txt", tmp / "t.txt");
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].src.id == pairs[0].tgt.id);
  CHECK(pairs[1].src.tokens == std::vector<std::string>{"c", "d"});

  write_file_atomic(tmp / "blank.txt", "a b\n\n");
  write_file_atomic(tmp / "t3.txt", "x\ny\n");
  CHECK_THROWS_AS(load_parallel_corpus(tmp / "blank.txt", tmp / "t3.txt"), DataError);

  write_file_atomic(tmp / "short.txt", "only one\n");
  CHECK_THROWS_AS(load_parallel_corpus(tmp / "short.txt", tmp / "t.txt"), DataError);
}

TEST_CASE("keyword sets round-trip through jsonl") {
  std::vector<KeywordSet> sets = {{0, {"police", "raiding"}}, {1, {}}, {2, {"x"}}};
  auto text = keyword_sets_to_jsonl(sets);
  auto back = keyword_sets_from_jsonl(text);
  REQUIRE(back.size() == 3);
  CHECK(back[0].sentence_id == 0);
  CHECK(back[0].keywords == sets[0].keywords);
  CHECK(back[1].keywords.empty());
  CHECK_THROWS_AS(keyword_sets_from_jsonl("not json\n"), DataError);
}
