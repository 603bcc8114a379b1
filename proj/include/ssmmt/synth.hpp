#pragma once

// Synthetic sense-disambiguation benchmark. Each source sentence carries one
// ambiguous word whose correct translation (one of two senses) is encoded
// ONLY in the concept id of a single planted candidate image; the remaining
// K-1 candidates come from object concepts unrelated to any sense and absent
// from the sentence. Construction details:
//
//  - The planted image is retrieved through the ordinary fixture client via a
//    sentence-unique query token (a pseudoword that also appears in the
//    source sentence, so the membership rule labels its pairs 1). The
//    generator rejection-samples the pseudoword until the fixture PRF maps it
//    to the sense's concept, so the plain `retrieve` stage reproduces the
//    planted structure byte for byte.
//  - Distractor queries are object words that occur in no sentence (their
//    pairs label 0), drawn per sentence from concepts disjoint from the
//    sense concepts.
//  - Senses are balanced exactly within every (word, sense) cell and the
//    train/eval split is stratified over cells, so a text-only model's best
//    sense accuracy is 1/2 by construction. Build the vocabulary with
//    min_freq=2: each pseudoword occurs once, so it encodes to <unk> and
//    leaks nothing through the text path.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/corpus.hpp"
#include "ssmmt/features.hpp"
#include "ssmmt/retrieval.hpp"

namespace ssmmt {

struct SynthSpec {
  int n_sentences = 200;
  int n_ambiguous_words = 4;
  int senses_per_word = 2;  // fixed by the task
  int k_candidates = 5;     // per-sentence candidate set size
  int concept_count = 16;
  int filler_per_sentence = 3;
  double eval_fraction = 0.2;
  uint64_t seed = 0;

  void validate() const {
    if (n_sentences < 1 || n_ambiguous_words < 1 || k_candidates < 2 || concept_count < 1 ||
        filler_per_sentence < 0) {
      throw UsageError("synth spec: all counts must be >= 1 (and K >= 2)");
    }
    if (senses_per_word != 2) throw UsageError("synth spec: senses_per_word is fixed at 2");
    if (n_ambiguous_words > 8) throw UsageError("synth spec: at most 8 ambiguous words");
    int sense_concepts = 2 * n_ambiguous_words;
    int object_concepts = concept_count - sense_concepts;
    if (object_concepts < k_candidates - 1) {
      throw UsageError("synth spec: concept_count too small for senses plus distractors");
    }
    if (eval_fraction <= 0.0 || eval_fraction >= 1.0) {
      throw UsageError("synth spec: eval_fraction must be in (0,1)");
    }
  }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"n_sentences", s.n_sentences},
                     {"n_ambiguous_words", s.n_ambiguous_words},
                     {"senses_per_word", s.senses_per_word},
                     {"k_candidates", s.k_candidates},
                     {"concept_count", s.concept_count},
                     {"filler_per_sentence", s.filler_per_sentence},
                     {"eval_fraction", s.eval_fraction},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  j.at("n_sentences").get_to(s.n_sentences);
  j.at("n_ambiguous_words").get_to(s.n_ambiguous_words);
  j.at("senses_per_word").get_to(s.senses_per_word);
  j.at("k_candidates").get_to(s.k_candidates);
  j.at("concept_count").get_to(s.concept_count);
  j.at("filler_per_sentence").get_to(s.filler_per_sentence);
  j.at("eval_fraction").get_to(s.eval_fraction);
  j.at("seed").get_to(s.seed);
}

struct AnswerKeyEntry {
  int64_t id = 0;
  std::string split;  // "train" | "eval"
  std::string ambiguous;
  int sense = 0;
  std::string correct_target;
  std::string wrong_target;
  std::string planted_keyword;
  int64_t planted_concept = 0;
  int planted_index = 0;  // position in the sentence's canonical candidate order
  std::string planted_image_id;
};

struct SynthOutput {
  std::vector<SentencePair> corpus;
  std::vector<std::string> src_lines;
  std::vector<std::string> tgt_lines;
  std::vector<KeywordSet> keywords;
  std::vector<AnswerKeyEntry> answer_key;
  std::map<std::string, int64_t> object_concepts;         // object word -> concept
  std::map<std::string, std::vector<int64_t>> sense_concepts;  // ambiguous -> [c0, c1]
};

namespace detail_synth {

struct WordSenses {
  const char* word;
  const char* sense0;
  const char* sense1;
};

inline const std::vector<WordSenses>& ambiguous_inventory() {
  static const std::vector<WordSenses> kWords = {
      {"bass", "fisch", "gitarre"},     {"bank", "ufer", "geldhaus"},
      {"spring", "quelle", "feder"},    {"plant", "fabrik", "pflanze"},
      {"palm", "handflaeche", "palme"}, {"seal", "robbe", "siegel"},
      {"bat", "fledermaus", "schlaeger"}, {"crane", "kranich", "kran"}};
  return kWords;
}

inline const std::vector<std::pair<const char*, const char*>>& filler_inventory() {
  static const std::vector<std::pair<const char*, const char*>> kFillers = {
      {"today", "heute"},   {"often", "oft"},       {"quietly", "leise"},
      {"really", "wirklich"}, {"again", "wieder"},  {"always", "immer"},
      {"maybe", "vielleicht"}, {"still", "noch"},   {"soon", "bald"},
      {"never", "nie"}};
  return kFillers;
}

inline const std::vector<const char*>& object_pool() {
  static const std::vector<const char*> kObjects = {
      "tree",  "house",  "river",  "stone",  "cloud",  "horse", "glass", "field",
      "bread", "lamp",   "chair",  "boat",   "apple",  "tower", "brick", "wheel",
      "grape", "knife",  "spoon",  "plate",  "candle", "mirror", "ladder", "barrel"};
  return kObjects;
}

inline std::string random_pseudoword(Rng& rng, int len = 7) {
  std::string w;
  for (int i = 0; i < len; ++i) w.push_back(char('a' + rng.uniform_int(26)));
  return w;
}

}  // namespace detail_synth

inline SynthOutput generate_synth(const SynthSpec& spec) {
  spec.validate();
  SynthOutput out;
  int M = spec.n_ambiguous_words;
  int n_sense_concepts = 2 * M;
  int n_objects = spec.concept_count - n_sense_concepts;

  // Object words: taken from the pool (extended with pseudowords if ever
  // needed) until their fixture concepts cover n_objects distinct ids.
  Rng obj_rng(prf_u64(spec.seed, {"synth-objects"}));
  std::set<int64_t> object_concept_set;
  std::vector<std::string> object_words;
  auto try_object = [&](const std::string& w) {
    int64_t c = int64_t(fixture_concept(spec.seed, w, spec.concept_count));
    if (object_concept_set.count(c)) return;
    object_concept_set.insert(c);
    object_words.push_back(w);
    out.object_concepts[w] = c;
  };
  for (const char* w : detail_synth::object_pool()) {
    if (int(object_words.size()) >= n_objects) break;
    try_object(w);
  }
  while (int(object_words.size()) < n_objects) {
    try_object("obj" + detail_synth::random_pseudoword(obj_rng, 5));
  }

  // Sense concepts: the complement of the object concepts, in ascending
  // order, assigned pairwise to the ambiguous words.
  std::vector<int64_t> sense_concept_ids;
  for (int64_t c = 0; c < spec.concept_count; ++c) {
    if (!object_concept_set.count(c)) sense_concept_ids.push_back(c);
  }
  const auto& inventory = detail_synth::ambiguous_inventory();
  for (int m = 0; m < M; ++m) {
    out.sense_concepts[inventory[size_t(m)].word] = {sense_concept_ids[size_t(2 * m)],
                                                     sense_concept_ids[size_t(2 * m + 1)]};
  }

  // Balanced (word, sense) cells, then a seeded shuffle of sentence order.
  std::vector<std::pair<int, int>> cells;  // (word index, sense)
  for (int i = 0; i < spec.n_sentences; ++i) {
    int cell = i % (2 * M);
    cells.push_back({cell / 2, cell % 2});
  }
  Rng order_rng(prf_u64(spec.seed, {"synth-order"}));
  order_rng.shuffle(cells);

  // Stratified split: within each cell, shuffle and mark the first
  // eval_fraction as eval.
  std::map<std::pair<int, int>, std::vector<int>> by_cell;
  for (int i = 0; i < spec.n_sentences; ++i) by_cell[cells[size_t(i)]].push_back(i);
  std::vector<std::string> split(size_t(spec.n_sentences), "train");
  Rng split_rng(prf_u64(spec.seed, {"synth-split"}));
  for (auto& [cell, idxs] : by_cell) {
    split_rng.shuffle(idxs);
    int n_eval = int(std::floor(spec.eval_fraction * double(idxs.size()) + 0.5));
    for (int e = 0; e < n_eval && e < int(idxs.size()); ++e) {
      split[size_t(idxs[size_t(e)])] = "eval";
    }
  }

  const auto& fillers = detail_synth::filler_inventory();
  std::set<std::string> used_pseudowords;
  std::set<std::string> reserved;
  for (const auto& ws : inventory) {
    reserved.insert(ws.word);
    reserved.insert(ws.sense0);
    reserved.insert(ws.sense1);
  }
  for (const auto& [en, de] : fillers) {
    reserved.insert(en);
    reserved.insert(de);
  }
  for (const auto& w : object_words) reserved.insert(w);

  Rng nonce_rng(prf_u64(spec.seed, {"synth-nonce"}));
  Rng filler_rng(prf_u64(spec.seed, {"synth-fillers"}));
  Rng layout_rng(prf_u64(spec.seed, {"synth-layout"}));
  Rng distractor_rng(prf_u64(spec.seed, {"synth-distractors"}));

  for (int i = 0; i < spec.n_sentences; ++i) {
    auto [m, sense] = cells[size_t(i)];
    const auto& ws = inventory[size_t(m)];
    int64_t target_concept = out.sense_concepts[ws.word][size_t(sense)];

    // Planted query: pseudoword in the sentence whose fixture concept is the
    // sense concept.
    std::string nonce;
    for (;;) {
      nonce = detail_synth::random_pseudoword(nonce_rng);
      if (used_pseudowords.count(nonce) || reserved.count(nonce)) continue;
      if (int64_t(fixture_concept(spec.seed, nonce, spec.concept_count)) == target_concept) {
        used_pseudowords.insert(nonce);
        break;
      }
    }

    // Fillers, distinct per sentence.
    std::vector<int> filler_idx;
    while (int(filler_idx.size()) < spec.filler_per_sentence) {
      int f = int(filler_rng.uniform_int(fillers.size()));
      if (std::count(filler_idx.begin(), filler_idx.end(), f) == 0) filler_idx.push_back(f);
    }

    // Content layout: fillers + ambiguous word + nonce in shuffled positions,
    // then a terminal period. The target mirrors the order, translating
    // word-for-word and dropping the nonce.
    struct Slot {
      std::string src;
      std::string tgt;  // empty -> dropped on the target side
    };
    std::vector<Slot> slots;
    for (int f : filler_idx) {
      slots.push_back({fillers[size_t(f)].first, fillers[size_t(f)].second});
    }
    slots.push_back({ws.word, sense == 0 ? ws.sense0 : ws.sense1});
    slots.push_back({nonce, ""});
    layout_rng.shuffle(slots);

    SentencePair pair;
    pair.src.id = i;
    pair.tgt.id = i;
    for (const auto& s : slots) {
      pair.src.tokens.push_back(s.src);
      if (!s.tgt.empty()) pair.tgt.tokens.push_back(s.tgt);
    }
    pair.src.tokens.push_back(".");
    pair.tgt.tokens.push_back(".");
    out.src_lines.push_back(join_tokens(pair.src.tokens));
    out.tgt_lines.push_back(join_tokens(pair.tgt.tokens));
    out.corpus.push_back(std::move(pair));

    // Distractor queries: K-1 distinct object words, absent from every
    // sentence by construction.
    std::vector<std::string> distractors;
    while (int(distractors.size()) < spec.k_candidates - 1) {
      const auto& w = object_words[size_t(distractor_rng.uniform_int(object_words.size()))];
      if (std::count(distractors.begin(), distractors.end(), w) == 0) distractors.push_back(w);
    }
    KeywordSet ks;
    ks.sentence_id = i;
    ks.keywords.push_back(nonce);
    for (const auto& d : distractors) ks.keywords.push_back(d);
    out.keywords.push_back(ks);

    // Candidate order downstream is lexicographic over query keywords (one
    // candidate per query), so the planted index is the nonce's sorted rank.
    std::vector<std::string> sorted_queries = ks.keywords;
    std::sort(sorted_queries.begin(), sorted_queries.end());
    int planted_index = int(std::find(sorted_queries.begin(), sorted_queries.end(), nonce) -
                            sorted_queries.begin());

    AnswerKeyEntry key;
    key.id = i;
    key.split = split[size_t(i)];
    key.ambiguous = ws.word;
    key.sense = sense;
    key.correct_target = sense == 0 ? ws.sense0 : ws.sense1;
    key.wrong_target = sense == 0 ? ws.sense1 : ws.sense0;
    key.planted_keyword = nonce;
    key.planted_concept = target_concept;
    key.planted_index = planted_index;
    key.planted_image_id = sha256_hex(fixture_payload(spec.seed, nonce, 0, spec.concept_count));
    out.answer_key.push_back(std::move(key));
  }
  return out;
}

// ---- answer key io ----

inline std::string answer_key_to_jsonl(const std::vector<AnswerKeyEntry>& key) {
  std::string out;
  for (const auto& e : key) {
    nlohmann::json j;
    j["id"] = e.id;
    j["split"] = e.split;
    j["ambiguous"] = e.ambiguous;
    j["sense"] = e.sense;
    j["correct_target"] = e.correct_target;
    j["wrong_target"] = e.wrong_target;
    j["planted_keyword"] = e.planted_keyword;
    j["planted_concept"] = e.planted_concept;
    j["planted_index"] = e.planted_index;
    j["planted_image_id"] = e.planted_image_id;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

inline std::vector<AnswerKeyEntry> answer_key_from_jsonl(std::string_view text) {
  std::vector<AnswerKeyEntry> out;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError("answer key: bad jsonl line");
    AnswerKeyEntry e;
    e.id = j.at("id").get<int64_t>();
    e.split = j.at("split").get<std::string>();
    e.ambiguous = j.at("ambiguous").get<std::string>();
    e.sense = j.at("sense").get<int>();
    e.correct_target = j.at("correct_target").get<std::string>();
    e.wrong_target = j.at("wrong_target").get<std::string>();
    e.planted_keyword = j.at("planted_keyword").get<std::string>();
    e.planted_concept = j.at("planted_concept").get<int64_t>();
    e.planted_index = j.at("planted_index").get<int>();
    e.planted_image_id = j.at("planted_image_id").get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace ssmmt
