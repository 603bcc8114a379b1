#pragma once

// Converts matcher scores over a sentence's candidate images into softmax
// relevance weights and one pooled visual context vector per sentence.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/corpus.hpp"
#include "ssmmt/features.hpp"
#include "ssmmt/matcher.hpp"
#include "ssmmt/retrieval.hpp"

namespace ssmmt {

struct VisualContext {
  int64_t sentence_id = 0;
  std::vector<std::string> image_ids;  // canonical candidate order
  std::vector<float> weights;          // simplex over candidates
  std::vector<float> pooled;           // D_img
  double entropy = 0;                  // nats, in [0, ln K]
  bool no_visual = false;

  bool operator==(const VisualContext& o) const {
    return sentence_id == o.sentence_id && image_ids == o.image_ids && weights == o.weights &&
           pooled == o.pooled && no_visual == o.no_visual;
  }
};

inline std::vector<double> relevance_weights(const std::vector<double>& logits,
                                             double temperature) {
  if (logits.empty()) throw UsageError("relevance_weights: zero candidates");
  if (temperature <= 0) throw UsageError("relevance_weights: temperature must be > 0");
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp((logits[i] - mx) / temperature);
    sum += w[i];
  }
  for (auto& x : w) x /= sum;
  return w;
}

inline double weight_entropy(const std::vector<double>& w) {
  double h = 0;
  for (double x : w) {
    if (x > 0) h -= x * std::log(x);
  }
  return h;
}

inline std::vector<double> pool(const std::vector<const std::vector<float>*>& feats,
                                const std::vector<double>& weights) {
  if (feats.size() != weights.size() || feats.empty()) {
    throw UsageError("pool: candidate/weight length mismatch");
  }
  double sum = 0;
  for (double w : weights) {
    if (w < -1e-9) throw UsageError("pool: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw UsageError("pool: weights not on the simplex");
  std::vector<double> out(feats[0]->size(), 0.0);
  for (size_t i = 0; i < feats.size(); ++i) {
    if (feats[i]->size() != out.size()) throw UsageError("pool: feature dimension mismatch");
    for (size_t d = 0; d < out.size(); ++d) out[d] += weights[i] * double((*feats[i])[d]);
  }
  return out;
}

struct FilterOptions {
  double temperature = 1.0;
  int candidate_cap = 16;
};

// Candidate set per sentence: the union of all images retrieved for its
// keywords in canonical manifest order, deduplicated by image id keeping the
// first occurrence, capped at candidate_cap by descending matcher logit.
inline std::vector<std::pair<std::string, const std::vector<float>*>> sentence_candidates(
    const RetrievalManifest& manifest, const FeatureStore& features, int64_t sentence_id) {
  std::vector<std::pair<std::string, const std::vector<float>*>> out;
  std::set<std::string> seen;
  for (const auto& e : manifest.entries) {
    if (e.query.sentence_id != sentence_id) continue;
    if (!seen.insert(e.image_id).second) continue;
    out.emplace_back(e.image_id, &features.get(e.image_id));
  }
  return out;
}

inline VisualContext build_context_for(const MatcherConfig& cfg, const ParamSet& matcher_params,
                                       const std::vector<int>& sentence_token_ids,
                                       int64_t sentence_id,
                                       const std::vector<std::pair<std::string, const std::vector<float>*>>& candidates,
                                       int d_img, const FilterOptions& opts) {
  VisualContext ctx;
  ctx.sentence_id = sentence_id;
  if (candidates.empty()) {
    ctx.no_visual = true;
    ctx.pooled.assign(size_t(d_img), 0.0f);
    ctx.entropy = 0;
    return ctx;
  }
  std::vector<const std::vector<float>*> feats;
  for (const auto& [id, f] : candidates) feats.push_back(f);
  auto logits = matcher_score_candidates(cfg, matcher_params, sentence_token_ids, feats);

  // Cap by descending logit, preserving canonical order among the kept.
  std::vector<size_t> kept(candidates.size());
  for (size_t i = 0; i < kept.size(); ++i) kept[i] = i;
  if (int(kept.size()) > opts.candidate_cap) {
    std::vector<size_t> by_logit = kept;
    std::stable_sort(by_logit.begin(), by_logit.end(),
                     [&](size_t a, size_t b) { return logits[a] > logits[b]; });
    by_logit.resize(size_t(opts.candidate_cap));
    std::set<size_t> keep_set(by_logit.begin(), by_logit.end());
    kept.clear();
    for (size_t i = 0; i < candidates.size(); ++i) {
      if (keep_set.count(i)) kept.push_back(i);
    }
  }

  std::vector<double> kept_logits;
  std::vector<const std::vector<float>*> kept_feats;
  for (size_t i : kept) {
    kept_logits.push_back(logits[i]);
    kept_feats.push_back(feats[i]);
    ctx.image_ids.push_back(candidates[i].first);
  }
  auto w = relevance_weights(kept_logits, opts.temperature);
  auto pooled = pool(kept_feats, w);
  ctx.weights.assign(w.begin(), w.end());
  ctx.pooled.assign(pooled.begin(), pooled.end());
  ctx.entropy = weight_entropy(w);
  return ctx;
}

// One context per sentence, ordered by sentence id.
inline std::vector<VisualContext> build_contexts(const std::vector<SentencePair>& corpus,
                                                 const Vocabulary& vocab,
                                                 const RetrievalManifest& manifest,
                                                 const FeatureStore& features,
                                                 const MatcherConfig& cfg,
                                                 const ParamSet& matcher_params,
                                                 const FilterOptions& opts = {}) {
  std::vector<VisualContext> out;
  for (const auto& p : corpus) {
    auto cands = sentence_candidates(manifest, features, p.src.id);
    out.push_back(build_context_for(cfg, matcher_params, encode(vocab, p.src.tokens), p.src.id,
                                    cands, features.d_img, opts));
  }
  std::sort(out.begin(), out.end(),
            [](const VisualContext& a, const VisualContext& b) { return a.sentence_id < b.sentence_id; });
  return out;
}

// ---- context file ----
// Header JSON line {D_img, temperature, matcher_ckpt_hash}, then per-sentence
// binary records: sentence_id (i64), candidate count (u32), flags (u32 bit 0
// = no_visual), candidate ids (32 bytes each), weights (f32 each), pooled
// vector (D_img f32).

inline std::string contexts_to_bytes(const std::vector<VisualContext>& contexts, int d_img,
                                     double temperature, const std::string& matcher_ckpt_hash) {
  nlohmann::json header;
  header["D_img"] = d_img;
  header["temperature"] = temperature;
  header["matcher_ckpt_hash"] = matcher_ckpt_hash;
  header["count"] = contexts.size();
  std::string out = header.dump() + "\n";
  auto hex_to_bytes = [](const std::string& id, std::string& buf) {
    auto nibble = [](char c) -> uint8_t {
      if (c >= '0' && c <= '9') return uint8_t(c - '0');
      if (c >= 'a' && c <= 'f') return uint8_t(c - 'a' + 10);
      throw DataError("contexts: bad hex id");
    };
    for (size_t i = 0; i < 32; ++i) buf.push_back(char(nibble(id[2 * i]) << 4 | nibble(id[2 * i + 1])));
  };
  for (const auto& c : contexts) {
    if (int(c.pooled.size()) != d_img) throw DataError("contexts: pooled dimension mismatch");
    put_i64_le(out, c.sentence_id);
    put_u32_le(out, uint32_t(c.image_ids.size()));
    put_u32_le(out, c.no_visual ? 1u : 0u);
    for (const auto& id : c.image_ids) {
      if (id.size() != 64) throw DataError("contexts: bad image id");
      hex_to_bytes(id, out);
    }
    for (float w : c.weights) put_f32_le(out, w);
    for (float v : c.pooled) put_f32_le(out, v);
  }
  return out;
}

struct ContextFile {
  int d_img = 0;
  double temperature = 1.0;
  std::string matcher_ckpt_hash;
  std::vector<VisualContext> contexts;

  const VisualContext* find(int64_t sentence_id) const {
    for (const auto& c : contexts) {
      if (c.sentence_id == sentence_id) return &c;
    }
    return nullptr;
  }
};

inline ContextFile contexts_from_bytes(std::string_view bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DataError("contexts: missing header");
  nlohmann::json header = nlohmann::json::parse(bytes.substr(0, nl), nullptr, false);
  if (header.is_discarded()) throw DataError("contexts: bad header JSON");
  ContextFile file;
  file.d_img = header.at("D_img").get<int>();
  file.temperature = header.at("temperature").get<double>();
  file.matcher_ckpt_hash = header.at("matcher_ckpt_hash").get<std::string>();
  size_t count = header.at("count").get<size_t>();
  size_t off = nl + 1;
  static const char* kHex = "0123456789abcdef";
  auto need = [&](size_t n) {
    if (off + n > bytes.size()) throw DataError("contexts: truncated file");
  };
  for (size_t i = 0; i < count; ++i) {
    VisualContext c;
    need(16);
    c.sentence_id = get_i64_le(bytes.data() + off);
    off += 8;
    uint32_t n_cand = get_u32_le(bytes.data() + off);
    off += 4;
    uint32_t flags = get_u32_le(bytes.data() + off);
    off += 4;
    c.no_visual = (flags & 1u) != 0;
    need(size_t(n_cand) * 36 + size_t(file.d_img) * 4);
    for (uint32_t j = 0; j < n_cand; ++j) {
      std::string id(64, '0');
      for (size_t b = 0; b < 32; ++b) {
        id[2 * b] = kHex[uint8_t(bytes[off + b]) >> 4];
        id[2 * b + 1] = kHex[uint8_t(bytes[off + b]) & 0xf];
      }
      off += 32;
      c.image_ids.push_back(std::move(id));
    }
    for (uint32_t j = 0; j < n_cand; ++j) {
      c.weights.push_back(get_f32_le(bytes.data() + off));
      off += 4;
    }
    for (int d = 0; d < file.d_img; ++d) {
      c.pooled.push_back(get_f32_le(bytes.data() + off));
      off += 4;
    }
    c.entropy = weight_entropy(std::vector<double>(c.weights.begin(), c.weights.end()));
    file.contexts.push_back(std::move(c));
  }
  if (off != bytes.size()) throw DataError("contexts: trailing bytes");
  return file;
}

}  // namespace ssmmt
