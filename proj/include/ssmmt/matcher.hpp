#pragma once

// The image-text self-supervised task: label (keyword, sentence) pairs by the
// membership rule, assemble positive/negative training pairs from a retrieval
// manifest, and train a bilinear match head over sentence encodings and image
// features. The trained head scores image relevance for the filter stage.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/corpus.hpp"
#include "ssmmt/features.hpp"
#include "ssmmt/nnet/checkpoint.hpp"
#include "ssmmt/nnet/graph.hpp"
#include "ssmmt/nnet/optim.hpp"
#include "ssmmt/nnet/transformer.hpp"
#include "ssmmt/retrieval.hpp"

namespace ssmmt {

struct MatchExample {
  int64_t sentence_id = 0;
  std::string keyword;
  std::string image_id;
  int label = 0;

  bool operator==(const MatchExample& o) const {
    return sentence_id == o.sentence_id && keyword == o.keyword && image_id == o.image_id &&
           label == o.label;
  }
};

// 1 iff the keyword occurs among the sentence tokens. Tokens are lowercase
// after tokenization, so the keyword is case-folded the same way.
inline int label(const std::string& keyword, const Sentence& sentence) {
  if (keyword.empty()) throw UsageError("label: empty keyword");
  std::string folded = keyword;
  for (char& c : folded) {
    c = char(std::tolower(static_cast<unsigned char>(c)));
  }
  for (const auto& t : sentence.tokens) {
    if (t == folded) return 1;
  }
  return 0;
}

// Positives: every manifest pair labeled 1 by the rule, in canonical manifest
// order. Negatives: per positive, negative_ratio entries sampled (seeded)
// from the manifest; draws whose keyword occurs in the sentence would be
// relabeled 1 by the rule, so they are discarded and resampled.
inline std::vector<MatchExample> build_pairs(const RetrievalManifest& manifest,
                                             const std::vector<SentencePair>& corpus,
                                             int negative_ratio, uint64_t seed) {
  if (negative_ratio < 0) throw UsageError("build_pairs: negative_ratio must be >= 0");
  std::map<int64_t, const Sentence*> by_id;
  for (const auto& p : corpus) by_id[p.src.id] = &p.src;
  for (const auto& e : manifest.entries) {
    if (!by_id.count(e.query.sentence_id)) {
      throw DataError("build_pairs: manifest sentence_id " +
                      std::to_string(e.query.sentence_id) + " not in corpus");
    }
  }
  std::vector<MatchExample> out;
  Rng rng(prf_u64(seed, {"build-pairs"}));
  for (const auto& e : manifest.entries) {
    const Sentence& s = *by_id.at(e.query.sentence_id);
    if (label(e.query.keyword, s) != 1) continue;
    out.push_back({s.id, e.query.keyword, e.image_id, 1});
    for (int n = 0; n < negative_ratio; ++n) {
      const ImageCandidate* pick = nullptr;
      for (int attempt = 0; attempt < 10000; ++attempt) {
        const auto& cand = manifest.entries[size_t(rng.uniform_int(manifest.entries.size()))];
        if (label(cand.query.keyword, s) == 1) continue;  // would relabel to 1
        pick = &cand;
        break;
      }
      if (!pick) {
        throw DataError("build_pairs: no negative candidates available for sentence " +
                        std::to_string(s.id));
      }
      out.push_back({s.id, pick->query.keyword, pick->image_id, 0});
    }
  }
  return out;
}

inline std::string match_examples_to_jsonl(const std::vector<MatchExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    nlohmann::json j;
    j["sentence_id"] = e.sentence_id;
    j["keyword"] = e.keyword;
    j["image_id"] = e.image_id;
    j["label"] = e.label;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

inline std::vector<MatchExample> match_examples_from_jsonl(std::string_view text) {
  std::vector<MatchExample> out;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError("match examples: bad jsonl line");
    out.push_back({j.at("sentence_id").get<int64_t>(), j.at("keyword").get<std::string>(),
                   j.at("image_id").get<std::string>(), j.at("label").get<int>()});
  }
  return out;
}

// ---- matcher model ----

struct MatcherConfig {
  TransformerConfig model;
  int d_match = 64;

  void validate() const {
    model.validate();
    if (d_match < 1) throw UsageError("matcher config: d_match must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const MatcherConfig& c) {
  j = nlohmann::json{{"model", c.model}, {"d_match", c.d_match}};
}

inline void from_json(const nlohmann::json& j, MatcherConfig& c) {
  j.at("model").get_to(c.model);
  j.at("d_match").get_to(c.d_match);
}

template <typename T>
ParamSetT<T> init_matcher_params(const MatcherConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamSetT<T> ps;
  add_encoder_stack_params(ps, "matcher", cfg.model, seed);
  add_param(ps, "matcher/head/text_proj", cfg.model.d_model, cfg.d_match, seed);
  add_param(ps, "matcher/head/img_proj", cfg.model.d_img, cfg.d_match, seed);
  add_param(ps, "matcher/head/bias", 1, 1, seed);
  return ps;
}

// logit = (P_t s) . (P_i f) / sqrt(d_match) + bias, with s the pooled
// sentence encoding [1 x d_model] and f the image feature [1 x D_img].
template <typename T, typename PB>
typename Graph<T>::Id match_logit(Graph<T>& g, const MatcherConfig& cfg, PB& p,
                                  typename Graph<T>::Id pooled_text,
                                  typename Graph<T>::Id image_feature) {
  auto ts = g.matmul(pooled_text, p("matcher/head/text_proj"));   // [1 x d_match]
  auto fi = g.matmul(image_feature, p("matcher/head/img_proj"));  // [1 x d_match]
  auto dot = g.matmul(ts, g.transpose(fi));                       // [1 x 1]
  auto scaled = g.scale(dot, 1.0 / std::sqrt(double(cfg.d_match)));
  auto z = g.add(scaled, p("matcher/head/bias"));
  if (!g.value(z).all_finite()) throw TrainError("match_logit: non-finite logit");
  return z;
}

// Pooled encoder output over non-pad positions for one sentence.
template <typename T, typename PB>
typename Graph<T>::Id matcher_sentence_vec(Graph<T>& g, const MatcherConfig& cfg, PB& p,
                                           const std::vector<int>& ids) {
  std::vector<uint8_t> pad(ids.size(), 0);
  auto enc = encoder_forward(g, cfg.model, p, "matcher", ids, pad);
  std::vector<uint8_t> keep(ids.size(), 1);
  return g.masked_mean_rows(enc, keep);
}

// Mean BCE over all pairs in the batch.
template <typename T, typename PB>
typename Graph<T>::Id matcher_loss(Graph<T>& g, const MatcherConfig& cfg, PB& p,
                                   const std::vector<const MatchExample*>& batch,
                                   const std::map<int64_t, std::vector<int>>& ids_by_sentence,
                                   const FeatureStore& features) {
  if (batch.empty()) throw UsageError("matcher_loss: empty batch");
  std::map<int64_t, typename Graph<T>::Id> pooled_cache;
  std::vector<typename Graph<T>::Id> logits;
  std::vector<T> labels;
  for (const auto* ex : batch) {
    auto it = pooled_cache.find(ex->sentence_id);
    if (it == pooled_cache.end()) {
      const auto& ids = ids_by_sentence.at(ex->sentence_id);
      it = pooled_cache.emplace(ex->sentence_id, matcher_sentence_vec(g, cfg, p, ids)).first;
    }
    Tensor<T> feat(1, int(features.get(ex->image_id).size()));
    const auto& fv = features.get(ex->image_id);
    for (size_t i = 0; i < fv.size(); ++i) feat.data[i] = T(fv[i]);
    auto f = g.constant(std::move(feat), "img_feature");
    logits.push_back(match_logit(g, cfg, p, it->second, f));
    labels.push_back(T(ex->label));
  }
  auto z = g.concat_cols(logits);  // [1 x batch]
  return g.bce_with_logits_mean(z, labels);
}

// Mann-Whitney AUC with average ranks for ties.
inline double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw UsageError("auc: empty or mismatched inputs");
  }
  int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: needs both labels");
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = (double(i) + double(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0;
  for (size_t k = 0; k < labels.size(); ++k) {
    if (labels[k]) rank_sum_pos += rank[k];
  }
  double u = rank_sum_pos - double(n_pos) * (double(n_pos) + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

// ---- training ----

struct TrainMatcherOptions {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 32;
  uint64_t seed = 0;
  bool freeze_encoder = false;
  int val_percent = 10;  // held-out fraction of sentences, by seeded hash
};

struct MatcherEpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_auc = 0;
};

struct MatcherTrainResult {
  MatcherConfig cfg;
  ParamSet params;
  std::vector<MatcherEpochLog> log;
  double final_auc = 0;
};

namespace detail_matcher {

inline bool is_val_sentence(int64_t sid, uint64_t seed, int val_percent) {
  return int(prf_u64(seed, {"matcher-val", std::to_string(sid)}) % 100) < val_percent;
}

inline std::vector<double> score_examples(
    const MatcherConfig& cfg, const ParamSet& params,
    const std::vector<const MatchExample*>& examples,
    const std::map<int64_t, std::vector<int>>& ids_by_sentence, const FeatureStore& features) {
  std::vector<double> scores;
  std::map<int64_t, Tensor<float>> pooled;
  for (const auto* ex : examples) {
    Graph<float> g;
    ParamBinder<float> p(g, params, /*trainable=*/false);
    auto it = pooled.find(ex->sentence_id);
    typename Graph<float>::Id s_vec;
    if (it == pooled.end()) {
      s_vec = matcher_sentence_vec(g, cfg, p, ids_by_sentence.at(ex->sentence_id));
      pooled.emplace(ex->sentence_id, g.value(s_vec));
    } else {
      s_vec = g.constant(it->second, "pooled_cached");
    }
    const auto& fv = features.get(ex->image_id);
    Tensor<float> feat(1, int(fv.size()));
    for (size_t i = 0; i < fv.size(); ++i) feat.data[i] = fv[i];
    auto f = g.constant(std::move(feat), "img_feature");
    auto z = match_logit(g, cfg, p, s_vec, f);
    scores.push_back(double(g.value(z).at(0, 0)));
  }
  return scores;
}

}  // namespace detail_matcher

// Scores one sentence against a list of image features (filter-stage path).
inline std::vector<double> matcher_score_candidates(const MatcherConfig& cfg,
                                                    const ParamSet& params,
                                                    const std::vector<int>& sentence_ids,
                                                    const std::vector<const std::vector<float>*>& feats) {
  Graph<float> g;
  ParamBinder<float> p(g, params, /*trainable=*/false);
  auto s_vec = matcher_sentence_vec(g, cfg, p, sentence_ids);
  std::vector<double> out;
  for (const auto* fv : feats) {
    Tensor<float> feat(1, int(fv->size()));
    for (size_t i = 0; i < fv->size(); ++i) feat.data[i] = (*fv)[i];
    auto f = g.constant(std::move(feat), "img_feature");
    out.push_back(double(g.value(match_logit(g, cfg, p, s_vec, f)).at(0, 0)));
  }
  return out;
}

// Adam training over the pair stream with a held-out AUC computed per epoch.
inline MatcherTrainResult train_matcher(const std::vector<MatchExample>& pairs,
                                        const std::vector<SentencePair>& corpus,
                                        const Vocabulary& vocab, const FeatureStore& features,
                                        const MatcherConfig& cfg,
                                        const TrainMatcherOptions& opts,
                                        std::optional<ParamSet> init = std::nullopt) {
  cfg.validate();
  if (pairs.empty()) throw DataError("train_matcher: no pairs");
  bool has_pos = false, has_neg = false;
  for (const auto& e : pairs) (e.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) {
    throw DataError("train_matcher: single-label dataset, AUC undefined");
  }

  std::map<int64_t, std::vector<int>> ids_by_sentence;
  for (const auto& p : corpus) ids_by_sentence[p.src.id] = encode(vocab, p.src.tokens);
  for (const auto& e : pairs) {
    if (!ids_by_sentence.count(e.sentence_id)) {
      throw DataError("train_matcher: pair references unknown sentence " +
                      std::to_string(e.sentence_id));
    }
  }

  std::vector<const MatchExample*> train, val;
  for (const auto& e : pairs) {
    bool v = detail_matcher::is_val_sentence(e.sentence_id, opts.seed, opts.val_percent);
    (v ? val : train).push_back(&e);
  }
  if (train.empty()) throw DataError("train_matcher: empty train split");

  MatcherTrainResult res;
  res.cfg = cfg;
  res.params = init ? *init : init_matcher_params<float>(cfg, opts.seed);

  auto trainable = [&](const std::string& name) {
    if (!opts.freeze_encoder) return true;
    return name.rfind("matcher/head/", 0) == 0;
  };

  AdamState adam;
  AdamHyper hp;
  hp.lr = opts.lr;
  Rng shuffle_rng(prf_u64(opts.seed, {"matcher-shuffle"}));

  auto eval_auc = [&]() -> double {
    if (val.empty()) return 0.0;
    std::vector<int> labels;
    for (const auto* e : val) labels.push_back(e->label);
    bool vp = false, vn = false;
    for (int y : labels) (y ? vp : vn) = true;
    if (!vp || !vn) return -1.0;  // AUC undefined on this split
    auto scores = detail_matcher::score_examples(cfg, res.params, val, ids_by_sentence,
                                                 features);
    return auc_score(scores, labels);
  };

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<const MatchExample*> order = train;
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    int64_t n_pairs = 0;
    for (size_t start = 0; start < order.size(); start += size_t(opts.batch_size)) {
      std::vector<const MatchExample*> batch(
          order.begin() + long(start),
          order.begin() + long(std::min(order.size(), start + size_t(opts.batch_size))));
      Graph<float> g;
      ParamBinder<float> p(g, res.params, true, trainable);
      auto loss = matcher_loss(g, cfg, p, batch, ids_by_sentence, features);
      g.backward(loss);
      ParamSet grads;
      p.collect_grads(grads);
      if (opts.lr != 0.0) adam_step(res.params, grads, adam, hp);
      loss_sum += double(g.value(loss).at(0, 0)) * double(batch.size());
      n_pairs += int64_t(batch.size());
    }
    MatcherEpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / double(std::max<int64_t>(1, n_pairs));
    log.val_auc = eval_auc();
    if (!std::isfinite(log.train_loss)) {
      throw TrainError("train_matcher: non-finite loss at epoch " + std::to_string(epoch));
    }
    res.log.push_back(log);
  }
  res.final_auc = res.log.empty() ? 0.0 : res.log.back().val_auc;
  return res;
}

inline Checkpoint matcher_checkpoint(const MatcherTrainResult& res, uint64_t seed) {
  Checkpoint ckpt;
  nlohmann::json cfg_json;
  cfg_json["kind"] = "matcher";
  cfg_json["matcher"] = res.cfg;
  ckpt.config = cfg_json;
  ckpt.params = res.params;
  ckpt.seed = seed;
  ckpt.step = int64_t(res.log.size());
  return ckpt;
}

}  // namespace ssmmt
