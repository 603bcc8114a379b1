#pragma once

// Baseline-vs-system comparison: BLEU for both arms, the delta, a
// per-sentence win/loss table and ambiguous-token sense accuracy against the
// benchmark answer key.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/bleu.hpp"
#include "ssmmt/synth.hpp"

namespace ssmmt {

struct SentenceOutcome {
  int64_t id = 0;
  double baseline_bleu = 0;
  double system_bleu = 0;
  int winner = 0;  // +1 system, -1 baseline, 0 tie
};

struct SenseAccuracy {
  double baseline = -1;
  double system = -1;
  int64_t n_scored = 0;
};

struct CompareReport {
  BleuReport baseline;
  BleuReport system;
  double delta = 0;
  SenseAccuracy sense_accuracy;
  std::vector<SentenceOutcome> per_sentence;
};

// A hypothesis is sense-correct when it contains the correct target token and
// not the wrong one.
inline bool sense_correct(const std::vector<std::string>& hyp_tokens,
                          const AnswerKeyEntry& key) {
  bool has_correct = false, has_wrong = false;
  for (const auto& t : hyp_tokens) {
    if (t == key.correct_target) has_correct = true;
    if (t == key.wrong_target) has_wrong = true;
  }
  return has_correct && !has_wrong;
}

inline double sense_accuracy_for(const std::vector<std::vector<std::string>>& hyps,
                                 const std::vector<int64_t>& sentence_ids,
                                 const std::vector<AnswerKeyEntry>& key,
                                 const std::string& split) {
  std::map<int64_t, const AnswerKeyEntry*> by_id;
  for (const auto& e : key) {
    if (split.empty() || e.split == split) by_id[e.id] = &e;
  }
  int64_t n = 0, correct = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    auto it = by_id.find(sentence_ids[i]);
    if (it == by_id.end()) continue;
    ++n;
    correct += sense_correct(hyps[i], *it->second) ? 1 : 0;
  }
  return n == 0 ? -1.0 : double(correct) / double(n);
}

inline CompareReport compare(const std::vector<std::vector<std::string>>& baseline_hyps,
                             const std::vector<std::vector<std::string>>& system_hyps,
                             const std::vector<std::vector<std::string>>& references,
                             const std::vector<int64_t>& sentence_ids = {},
                             const std::vector<AnswerKeyEntry>& answer_key = {},
                             const std::string& split = "eval") {
  if (baseline_hyps.size() != references.size() || system_hyps.size() != references.size()) {
    throw DataError("compare: misaligned hypothesis/reference lists");
  }
  if (!sentence_ids.empty() && sentence_ids.size() != references.size()) {
    throw DataError("compare: misaligned sentence id list");
  }
  CompareReport rep;
  rep.baseline = bleu(baseline_hyps, references);
  rep.system = bleu(system_hyps, references);
  rep.delta = rep.system.bleu - rep.baseline.bleu;
  for (size_t i = 0; i < references.size(); ++i) {
    SentenceOutcome o;
    o.id = sentence_ids.empty() ? int64_t(i) : sentence_ids[i];
    o.baseline_bleu = bleu({baseline_hyps[i]}, {references[i]}).bleu;
    o.system_bleu = bleu({system_hyps[i]}, {references[i]}).bleu;
    o.winner = o.system_bleu > o.baseline_bleu ? 1 : (o.system_bleu < o.baseline_bleu ? -1 : 0);
    rep.per_sentence.push_back(o);
  }
  if (!answer_key.empty() && !sentence_ids.empty()) {
    rep.sense_accuracy.baseline = sense_accuracy_for(baseline_hyps, sentence_ids, answer_key, split);
    rep.sense_accuracy.system = sense_accuracy_for(system_hyps, sentence_ids, answer_key, split);
    for (const auto& e : answer_key) {
      if (split.empty() || e.split == split) ++rep.sense_accuracy.n_scored;
    }
  }
  return rep;
}

inline nlohmann::json compare_report_to_json(const CompareReport& rep) {
  nlohmann::json j;
  j["baseline"] = rep.baseline;
  j["system"] = rep.system;
  j["delta"] = rep.delta;
  j["sense_accuracy"] = {{"baseline", rep.sense_accuracy.baseline},
                         {"system", rep.sense_accuracy.system}};
  j["per_sentence"] = nlohmann::json::array();
  for (const auto& o : rep.per_sentence) {
    j["per_sentence"].push_back({{"id", o.id},
                                 {"baseline_bleu", o.baseline_bleu},
                                 {"system_bleu", o.system_bleu},
                                 {"winner", o.winner}});
  }
  return j;
}

inline std::string compare_report_text(const CompareReport& rep) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "baseline BLEU: %.4f\n", rep.baseline.bleu);
  out += buf;
  std::snprintf(buf, sizeof(buf), "system   BLEU: %.4f\n", rep.system.bleu);
  out += buf;
  std::snprintf(buf, sizeof(buf), "delta        : %+.4f\n", rep.delta);
  out += buf;
  if (rep.sense_accuracy.baseline >= 0) {
    std::snprintf(buf, sizeof(buf), "sense accuracy: baseline %.4f, system %.4f\n",
                  rep.sense_accuracy.baseline, rep.sense_accuracy.system);
    out += buf;
  }
  int wins = 0, losses = 0, ties = 0;
  for (const auto& o : rep.per_sentence) {
    (o.winner > 0 ? wins : (o.winner < 0 ? losses : ties))++;
  }
  std::snprintf(buf, sizeof(buf), "per-sentence: %d wins, %d losses, %d ties\n", wins, losses,
                ties);
  out += buf;
  return out;
}

}  // namespace ssmmt
