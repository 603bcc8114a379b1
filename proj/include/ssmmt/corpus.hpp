#pragma once

// Parallel-text ingestion: tokenization, vocabulary construction and
// per-sentence search-keyword extraction.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/common.hpp"

namespace ssmmt {

struct Sentence {
  int64_t id = 0;
  std::vector<std::string> tokens;
};

struct SentencePair {
  Sentence src;
  Sentence tgt;  // same id as src
};

struct KeywordSet {
  int64_t sentence_id = 0;
  std::vector<std::string> keywords;
};

// Special token ids are fixed: pad=0, unk=1, bos=2, eos=3, mask=4.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return int(id_to_token.size()); }

  int lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const {
    return token_to_id.count(token) > 0;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) {
      throw DataError("vocabulary: id out of range: " + std::to_string(id));
    }
    return id_to_token[size_t(id)];
  }
};

namespace detail {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

inline bool is_ascii_punct(unsigned char c) {
  return c < 0x80 && std::ispunct(c);
}

// Validates UTF-8 well-formedness; returns false on bad sequences.
inline bool is_valid_utf8(std::string_view s) {
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = s[i];
    int extra;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xe) extra = 2;
    else if ((c >> 3) == 0x1e) extra = 3;
    else return false;
    if (i + size_t(extra) >= s.size() + (extra == 0 ? 1 : 0) && extra > 0) {
      if (i + size_t(extra) >= s.size() + 1) return false;
    }
    for (int k = 1; k <= extra; ++k) {
      if (i + size_t(k) >= s.size() || (s[i + size_t(k)] & 0xc0) != 0x80) return false;
    }
    i += size_t(extra) + 1;
  }
  return true;
}

}  // namespace detail

// Lowercases ASCII letters, splits ASCII punctuation into standalone tokens
// and splits on whitespace. Multi-byte UTF-8 sequences pass through unchanged;
// inputs are expected to be NFC-normalized already.
inline std::vector<std::string> tokenize(std::string_view text) {
  if (!detail::is_valid_utf8(text)) throw DataError("tokenize: invalid UTF-8 input");
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  size_t i = 0;
  while (i < text.size()) {
    unsigned char c = text[i];
    if (c < 0x80) {
      if (detail::is_ascii_space(c)) {
        flush();
      } else if (detail::is_ascii_punct(c)) {
        flush();
        tokens.push_back(std::string(1, char(c)));
      } else {
        cur.push_back(char(std::tolower(c)));
      }
      ++i;
    } else {
      size_t len = (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : 4;
      cur.append(text.substr(i, len));
      i += len;
    }
  }
  flush();
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// Tokens with frequency >= min_freq, ordered by (descending frequency,
// ascending lexicographic) after the five specials.
inline Vocabulary build_vocab(const std::vector<Sentence>& corpus, int min_freq = 1) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  if (min_freq < 1) throw UsageError("build_vocab: min_freq must be >= 1");
  std::map<std::string, int64_t> freq;
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens) ++freq[t];
  }
  std::vector<std::pair<std::string, int64_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>", "<bos>", "<eos>", "<mask>"};
  for (const auto& [tok, n] : items) {
    if (n >= min_freq) v.id_to_token.push_back(tok);
  }
  for (int i = 0; i < int(v.id_to_token.size()); ++i) {
    v.token_to_id[v.id_to_token[size_t(i)]] = i;
  }
  return v;
}

inline std::vector<int> encode(const Vocabulary& v, const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(v.lookup(t));
  return ids;
}

inline std::vector<std::string> decode(const Vocabulary& v, const std::vector<int>& ids) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(v.token(id));
  return tokens;
}

// Document frequencies over a corpus, for keyword ranking.
struct IdfTable {
  std::unordered_map<std::string, double> idf;
  double n_docs = 0;

  double get(const std::string& token) const {
    auto it = idf.find(token);
    // Unseen tokens are maximally rare.
    return it == idf.end() ? std::log(1.0 + n_docs) : it->second;
  }
};

inline IdfTable build_idf(const std::vector<Sentence>& corpus) {
  IdfTable table;
  table.n_docs = double(corpus.size());
  std::unordered_map<std::string, int64_t> df;
  for (const auto& s : corpus) {
    std::unordered_set<std::string> seen(s.tokens.begin(), s.tokens.end());
    for (const auto& t : seen) ++df[t];
  }
  for (const auto& [tok, d] : df) {
    table.idf[tok] = std::log((1.0 + table.n_docs) / (1.0 + double(d)));
  }
  return table;
}

inline bool is_pure_punctuation(const std::string& token) {
  for (unsigned char c : token) {
    if (!detail::is_ascii_punct(c)) return false;
  }
  return !token.empty();
}

// Stopword and punctuation filtering, first-occurrence dedup, then ranking by
// descending corpus IDF with sentence order breaking ties. An all-stopword
// sentence yields an empty keyword list.
inline KeywordSet extract_keywords(const Sentence& s,
                                   const std::set<std::string>& stopwords,
                                   const IdfTable& idf, int max_k) {
  if (max_k < 1) throw UsageError("extract_keywords: max_k must be >= 1");
  std::vector<std::string> candidates;
  std::unordered_set<std::string> seen;
  for (const auto& t : s.tokens) {
    if (stopwords.count(t) || is_pure_punctuation(t)) continue;
    if (seen.insert(t).second) candidates.push_back(t);
  }
  std::vector<size_t> order(candidates.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return idf.get(candidates[a]) > idf.get(candidates[b]);
  });
  KeywordSet ks;
  ks.sentence_id = s.id;
  for (size_t i = 0; i < order.size() && int(ks.keywords.size()) < max_k; ++i) {
    ks.keywords.push_back(candidates[order[i]]);
  }
  return ks;
}

// ---- corpus files ----

// Two line-aligned UTF-8 files, one sentence per line. Blank lines are
// rejected; ids are assigned by line number.
inline std::vector<SentencePair> load_parallel_corpus(const std::filesystem::path& src_path,
                                                      const std::filesystem::path& tgt_path) {
  auto src_lines = read_lines(src_path);
  auto tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size()) {
    throw DataError("parallel corpus line mismatch: " + std::to_string(src_lines.size()) +
                    " vs " + std::to_string(tgt_lines.size()));
  }
  if (src_lines.empty()) throw DataError("parallel corpus is empty");
  std::vector<SentencePair> pairs;
  pairs.reserve(src_lines.size());
  for (size_t i = 0; i < src_lines.size(); ++i) {
    SentencePair p;
    p.src.id = int64_t(i);
    p.tgt.id = int64_t(i);
    p.src.tokens = tokenize(src_lines[i]);
    p.tgt.tokens = tokenize(tgt_lines[i]);
    if (p.src.tokens.empty() || p.tgt.tokens.empty()) {
      throw DataError("blank line in corpus at line " + std::to_string(i + 1));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::set<std::string> out;
  for (auto& line : read_lines(path)) {
    auto toks = tokenize(line);
    if (toks.size() == 1) out.insert(toks[0]);
  }
  return out;
}

// JSON-lines: {"id": int, "keywords": [str, ...]}
inline std::string keyword_sets_to_jsonl(const std::vector<KeywordSet>& sets) {
  std::string out;
  for (const auto& ks : sets) {
    nlohmann::json j;
    j["id"] = ks.sentence_id;
    j["keywords"] = ks.keywords;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

inline std::vector<KeywordSet> keyword_sets_from_jsonl(std::string_view text) {
  std::vector<KeywordSet> sets;
  size_t start = 0;
  int line_no = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("keywords")) {
      throw DataError("bad keywords jsonl at line " + std::to_string(line_no));
    }
    KeywordSet ks;
    ks.sentence_id = j["id"].get<int64_t>();
    for (const auto& k : j["keywords"]) ks.keywords.push_back(k.get<std::string>());
    sets.push_back(std::move(ks));
  }
  return sets;
}

}  // namespace ssmmt
