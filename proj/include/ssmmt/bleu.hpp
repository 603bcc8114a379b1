#pragma once

// Corpus-level BLEU with clipped n-gram counts, brevity penalty and
// add-epsilon smoothing on zero counts.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/common.hpp"

namespace ssmmt {

struct BleuReport {
  double bleu = 0;                       // BLEU-4, 0..100
  std::vector<double> precisions;        // p1..p4 (unsmoothed ratios, eps where 0)
  std::vector<double> bleu_by_order;     // BLEU-1..BLEU-4, 0..100
  double brevity_penalty = 1.0;
  int64_t hyp_len = 0;
  int64_t ref_len = 0;
};

inline void to_json(nlohmann::json& j, const BleuReport& r) {
  j = nlohmann::json{{"bleu", r.bleu},
                     {"precisions", r.precisions},
                     {"bleu_by_order", r.bleu_by_order},
                     {"brevity_penalty", r.brevity_penalty},
                     {"hyp_len", r.hyp_len},
                     {"ref_len", r.ref_len}};
}

inline void from_json(const nlohmann::json& j, BleuReport& r) {
  j.at("bleu").get_to(r.bleu);
  j.at("precisions").get_to(r.precisions);
  j.at("bleu_by_order").get_to(r.bleu_by_order);
  j.at("brevity_penalty").get_to(r.brevity_penalty);
  j.at("hyp_len").get_to(r.hyp_len);
  j.at("ref_len").get_to(r.ref_len);
}

namespace detail_bleu {

using Ngram = std::vector<std::string>;

inline std::map<Ngram, int64_t> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, int64_t> counts;
  if (int(tokens.size()) < n) return counts;
  for (size_t i = 0; i + size_t(n) <= tokens.size(); ++i) {
    counts[Ngram(tokens.begin() + long(i), tokens.begin() + long(i + size_t(n)))] += 1;
  }
  return counts;
}

}  // namespace detail_bleu

inline BleuReport bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references,
                       int max_n = 4, double epsilon = 1e-9) {
  if (hypotheses.empty()) throw DataError("bleu: empty hypothesis list");
  if (hypotheses.size() != references.size()) {
    throw DataError("bleu: hypothesis/reference count mismatch");
  }
  for (const auto& r : references) {
    if (r.empty()) throw DataError("bleu: empty reference");
  }
  BleuReport rep;
  std::vector<int64_t> matches(size_t(max_n), 0), totals(size_t(max_n), 0);
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    rep.hyp_len += int64_t(hypotheses[i].size());
    rep.ref_len += int64_t(references[i].size());
    for (int n = 1; n <= max_n; ++n) {
      auto hyp_counts = detail_bleu::ngram_counts(hypotheses[i], n);
      auto ref_counts = detail_bleu::ngram_counts(references[i], n);
      for (const auto& [gram, cnt] : hyp_counts) {
        totals[size_t(n - 1)] += cnt;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) {
          matches[size_t(n - 1)] += std::min(cnt, it->second);
        }
      }
    }
  }
  rep.brevity_penalty =
      rep.hyp_len >= rep.ref_len
          ? 1.0
          : std::exp(1.0 - double(rep.ref_len) / double(std::max<int64_t>(1, rep.hyp_len)));
  double log_prec_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    double p = matches[size_t(n - 1)] > 0
                   ? double(matches[size_t(n - 1)]) / double(totals[size_t(n - 1)])
                   : epsilon;
    rep.precisions.push_back(p);
    log_prec_sum += std::log(p);
    rep.bleu_by_order.push_back(100.0 * rep.brevity_penalty * std::exp(log_prec_sum / n));
  }
  rep.bleu = rep.bleu_by_order.back();
  return rep;
}

// Split on spaces; translation output lines are already token streams.
inline std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> toks;
  std::string cur;
  for (char c : line) {
    if (c == ' ') {
      if (!cur.empty()) toks.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) toks.push_back(cur);
  return toks;
}

inline std::vector<std::vector<std::string>> split_token_lines(
    const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(split_tokens(l));
  return out;
}

}  // namespace ssmmt
