#pragma once

// Masked pretraining over concatenated bilingual pairs (TLM, and VTLM with a
// gated visual context fused into the encoder states), translation
// fine-tuning with decoder-side gated fusion, and beam-search decoding.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssmmt/corpus.hpp"
#include "ssmmt/filter.hpp"
#include "ssmmt/nnet/checkpoint.hpp"
#include "ssmmt/nnet/optim.hpp"
#include "ssmmt/nnet/transformer.hpp"

namespace ssmmt {

template <typename T>
ParamSetT<T> init_translator_params(const TransformerConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamSetT<T> ps;
  add_encoder_stack_params(ps, "translator", cfg, seed);
  add_decoder_stack_params(ps, "translator", cfg, seed);
  add_param(ps, "translator/out_head/w", cfg.d_model, cfg.tgt_vocab, seed);
  add_param(ps, "translator/out_head/b", 1, cfg.tgt_vocab, seed);
  add_param(ps, "translator/mlm_head/w", cfg.d_model, cfg.src_vocab, seed);
  add_param(ps, "translator/mlm_head/b", 1, cfg.src_vocab, seed);
  add_fusion_params(ps, "translator/enc_fusion", cfg, seed);
  add_fusion_params(ps, "translator/dec_fusion", cfg, seed);
  return ps;
}

// [bos] src [eos] tgt [eos]
inline std::vector<int> concat_bilingual(const std::vector<int>& src_ids,
                                         const std::vector<int>& tgt_ids) {
  std::vector<int> out;
  out.reserve(src_ids.size() + tgt_ids.size() + 3);
  out.push_back(Vocabulary::kBos);
  out.insert(out.end(), src_ids.begin(), src_ids.end());
  out.push_back(Vocabulary::kEos);
  out.insert(out.end(), tgt_ids.begin(), tgt_ids.end());
  out.push_back(Vocabulary::kEos);
  return out;
}

struct PretrainBatch {
  std::vector<int> input_ids;       // sequence with masking applied
  std::vector<int> mask_positions;  // ascending
  std::vector<int> original_ids;    // originals at mask_positions, aligned
};

// Masks each non-special position (id >= kNumSpecials) independently with
// probability mask_prob; if none got selected, one seeded-random eligible
// position is forced. Selected positions are replaced by <mask> (80%), a
// random non-special token (10%) or kept (10%).
//
// RNG consumption order is a contract the tests replay: one uniform() per
// eligible position in ascending order; if forced, one uniform_int over the
// eligible count; then per selected position in ascending order one
// uniform() and, only on the random-replacement branch, one uniform_int.
inline PretrainBatch mask_tokens(const std::vector<int>& ids, double mask_prob, Rng& rng,
                                 int vocab_size) {
  if (mask_prob <= 0.0 || mask_prob >= 1.0) {
    throw UsageError("mask_tokens: mask_prob must be in (0,1)");
  }
  if (ids.size() < 2) throw UsageError("mask_tokens: sequence too short");
  std::vector<int> eligible;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= Vocabulary::kNumSpecials) eligible.push_back(int(i));
  }
  if (eligible.empty()) throw DataError("mask_tokens: sequence has only special tokens");

  PretrainBatch batch;
  batch.input_ids = ids;
  for (int pos : eligible) {
    if (rng.uniform() < mask_prob) batch.mask_positions.push_back(pos);
  }
  if (batch.mask_positions.empty()) {
    batch.mask_positions.push_back(eligible[size_t(rng.uniform_int(eligible.size()))]);
  }
  int n_random_pool = vocab_size - Vocabulary::kNumSpecials;
  for (int pos : batch.mask_positions) {
    batch.original_ids.push_back(ids[size_t(pos)]);
    double u = rng.uniform();
    if (u < 0.8) {
      batch.input_ids[size_t(pos)] = Vocabulary::kMask;
    } else if (u < 0.9 && n_random_pool > 0) {
      batch.input_ids[size_t(pos)] =
          Vocabulary::kNumSpecials + int(rng.uniform_int(uint64_t(n_random_pool)));
    }  // else keep the original token
  }
  return batch;
}

// Masked-token cross-entropy from the bidirectional encoder over the
// concatenated pair. With a visual context and the gate enabled, the context
// is fused into the encoder states before the prediction head (VTLM);
// otherwise the path is exactly the text-only TLM computation.
template <typename T, typename PB>
typename Graph<T>::Id masked_lm_loss(Graph<T>& g, const TransformerConfig& cfg, PB& p,
                                     const PretrainBatch& batch,
                                     const std::optional<Tensor<T>>& visual = std::nullopt,
                                     bool gate_enabled = false,
                                     const EncoderOptions& opts = {}) {
  if (batch.mask_positions.empty()) throw UsageError("masked_lm_loss: no masked positions");
  std::vector<uint8_t> pad(batch.input_ids.size(), 0);
  auto enc = encoder_forward(g, cfg, p, "translator", batch.input_ids, pad, opts);
  if (gate_enabled && visual) {
    if (visual->cols() != cfg.d_img) throw UsageError("masked_lm_loss: visual dim != D_img");
    auto v = g.constant(*visual, "visual_context");
    enc = gated_fusion(g, cfg, p, "translator/enc_fusion", enc, v);
  }
  auto picked = g.select_rows(enc, batch.mask_positions);
  auto logits = g.add_rowvec(g.matmul(picked, p("translator/mlm_head/w")),
                             p("translator/mlm_head/b"));
  return g.cross_entropy_mean(logits, batch.original_ids, -1);
}

template <typename T, typename PB>
typename Graph<T>::Id tlm_step(Graph<T>& g, const TransformerConfig& cfg, PB& p,
                               const PretrainBatch& batch, const EncoderOptions& opts = {}) {
  return masked_lm_loss(g, cfg, p, batch, std::optional<Tensor<T>>(), false, opts);
}

template <typename T, typename PB>
typename Graph<T>::Id vtlm_step(Graph<T>& g, const TransformerConfig& cfg, PB& p,
                                const PretrainBatch& batch, const Tensor<T>& visual,
                                const EncoderOptions& opts = {}) {
  return masked_lm_loss(g, cfg, p, batch, std::optional<Tensor<T>>(visual), true, opts);
}

// ---- training loops ----

struct TrainOptions {
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 16;
  double mask_prob = 0.15;
  uint64_t seed = 0;
  bool use_visual = false;  // VTLM / gated finetune arm when true
};

struct EncodedPair {
  int64_t id = 0;
  std::vector<int> src;
  std::vector<int> tgt;
};

inline std::vector<EncodedPair> encode_corpus(const std::vector<SentencePair>& corpus,
                                              const Vocabulary& vocab) {
  std::vector<EncodedPair> out;
  for (const auto& p : corpus) {
    out.push_back({p.src.id, encode(vocab, p.src.tokens), encode(vocab, p.tgt.tokens)});
  }
  return out;
}

template <typename T>
std::optional<Tensor<T>> context_tensor(const ContextFile* contexts, int64_t sentence_id,
                                        int d_img) {
  if (!contexts) return std::nullopt;
  const VisualContext* c = contexts->find(sentence_id);
  if (!c || c->no_visual) return std::nullopt;  // degrade to gate-closed
  Tensor<T> v(1, d_img);
  for (int d = 0; d < d_img; ++d) v.at(0, d) = T(c->pooled[size_t(d)]);
  return v;
}

struct TrainTrace {
  std::vector<double> epoch_loss;
};

// Masked LM pretraining over the corpus; the VTLM arm differs from the TLM
// arm only in fusing each sentence's visual context. Masking draws come from
// per-(epoch, sentence) substreams, so both arms see identical masks under
// the same seed.
inline TrainTrace pretrain_translator(ParamSet& params, const TransformerConfig& cfg,
                                      const std::vector<EncodedPair>& corpus,
                                      const ContextFile* contexts, const TrainOptions& opts) {
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  AdamState adam;
  AdamHyper hp;
  hp.lr = opts.lr;
  Rng shuffle_rng(prf_u64(opts.seed, {"pretrain-shuffle"}));
  Rng dropout_rng(prf_u64(opts.seed, {"pretrain-dropout"}));
  TrainTrace trace;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    int64_t n_examples = 0;
    for (size_t start = 0; start < order.size(); start += size_t(opts.batch_size)) {
      size_t stop = std::min(order.size(), start + size_t(opts.batch_size));
      ParamSet grads;
      double batch_loss = 0;
      int batch_n = 0;
      for (size_t oi = start; oi < stop; ++oi) {
        const auto& ex = corpus[order[oi]];
        auto concat = concat_bilingual(ex.src, ex.tgt);
        Rng mask_rng(prf_u64(opts.seed, {"pretrain-mask", std::to_string(epoch),
                                         std::to_string(ex.id)}));
        auto batch = mask_tokens(concat, opts.mask_prob, mask_rng, cfg.src_vocab);
        Graph<float> g;
        ParamBinder<float> p(g, params);
        EncoderOptions eopts;
        eopts.train_mode = true;
        eopts.dropout_rng = &dropout_rng;
        auto visual = opts.use_visual ? context_tensor<float>(contexts, ex.id, cfg.d_img)
                                      : std::nullopt;
        auto loss = masked_lm_loss(g, cfg, p, batch, visual, opts.use_visual, eopts);
        g.backward(loss);
        p.collect_grads(grads);
        batch_loss += double(g.value(loss).at(0, 0));
        ++batch_n;
      }
      for (auto& [name, gt] : grads) {
        for (auto& v : gt.data) v /= float(batch_n);
      }
      if (opts.lr != 0.0) adam_step(params, grads, adam, hp);
      loss_sum += batch_loss;
      n_examples += batch_n;
    }
    double epoch_loss = loss_sum / double(n_examples);
    if (!std::isfinite(epoch_loss)) {
      throw TrainError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
    }
    trace.epoch_loss.push_back(epoch_loss);
  }
  return trace;
}

// Teacher-forced cross-entropy: decoder input [bos] tgt, labels tgt [eos].
template <typename T, typename PB>
typename Graph<T>::Id translation_loss(Graph<T>& g, const TransformerConfig& cfg, PB& p,
                                       const EncodedPair& ex,
                                       const std::optional<Tensor<T>>& visual,
                                       bool gate_enabled, const EncoderOptions& opts = {}) {
  std::vector<uint8_t> src_pad(ex.src.size(), 0);
  auto enc = encoder_forward(g, cfg, p, "translator", ex.src, src_pad, opts);
  std::vector<int> dec_in;
  dec_in.push_back(Vocabulary::kBos);
  dec_in.insert(dec_in.end(), ex.tgt.begin(), ex.tgt.end());
  std::vector<int> labels = ex.tgt;
  labels.push_back(Vocabulary::kEos);
  auto logits = decoder_forward(g, cfg, p, "translator", dec_in, enc, src_pad, visual,
                                gate_enabled, opts);
  return g.cross_entropy_mean(logits, labels, Vocabulary::kPad);
}

inline TrainTrace finetune_translator(ParamSet& params, const TransformerConfig& cfg,
                                      const std::vector<EncodedPair>& corpus,
                                      const ContextFile* contexts, const TrainOptions& opts) {
  if (corpus.empty()) throw DataError("finetune: empty corpus");
  if (opts.use_visual && contexts && contexts->d_img != cfg.d_img) {
    throw DataError("finetune: context D_img mismatch");
  }
  AdamState adam;
  AdamHyper hp;
  hp.lr = opts.lr;
  Rng shuffle_rng(prf_u64(opts.seed, {"finetune-shuffle"}));
  Rng dropout_rng(prf_u64(opts.seed, {"finetune-dropout"}));
  TrainTrace trace;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    int64_t n_examples = 0;
    for (size_t start = 0; start < order.size(); start += size_t(opts.batch_size)) {
      size_t stop = std::min(order.size(), start + size_t(opts.batch_size));
      ParamSet grads;
      int batch_n = 0;
      for (size_t oi = start; oi < stop; ++oi) {
        const auto& ex = corpus[order[oi]];
        Graph<float> g;
        ParamBinder<float> p(g, params);
        EncoderOptions eopts;
        eopts.train_mode = true;
        eopts.dropout_rng = &dropout_rng;
        auto visual = opts.use_visual ? context_tensor<float>(contexts, ex.id, cfg.d_img)
                                      : std::nullopt;
        auto loss = translation_loss(g, cfg, p, ex, visual, opts.use_visual && visual.has_value(),
                                     eopts);
        g.backward(loss);
        p.collect_grads(grads);
        loss_sum += double(g.value(loss).at(0, 0));
        ++batch_n;
      }
      for (auto& [name, gt] : grads) {
        for (auto& v : gt.data) v /= float(batch_n);
      }
      if (opts.lr != 0.0) adam_step(params, grads, adam, hp);
      n_examples += batch_n;
    }
    double epoch_loss = loss_sum / double(n_examples);
    if (!std::isfinite(epoch_loss)) {
      throw TrainError("finetune: non-finite loss at epoch " + std::to_string(epoch));
    }
    trace.epoch_loss.push_back(epoch_loss);
  }
  return trace;
}

// Fraction of teacher-forced target positions predicted correctly.
inline double teacher_forced_accuracy(const ParamSet& params, const TransformerConfig& cfg,
                                      const std::vector<EncodedPair>& corpus,
                                      const ContextFile* contexts, bool use_visual) {
  int64_t correct = 0, total = 0;
  for (const auto& ex : corpus) {
    Graph<float> g;
    ParamBinder<float> p(g, params, false);
    auto visual = use_visual ? context_tensor<float>(contexts, ex.id, cfg.d_img) : std::nullopt;
    std::vector<uint8_t> src_pad(ex.src.size(), 0);
    auto enc = encoder_forward(g, cfg, p, "translator", ex.src, src_pad);
    std::vector<int> dec_in;
    dec_in.push_back(Vocabulary::kBos);
    dec_in.insert(dec_in.end(), ex.tgt.begin(), ex.tgt.end());
    std::vector<int> labels = ex.tgt;
    labels.push_back(Vocabulary::kEos);
    auto logits = decoder_forward(g, cfg, p, "translator", dec_in, enc, src_pad, visual,
                                  use_visual && visual.has_value());
    const auto& L = g.value(logits);
    for (int r = 0; r < L.rows(); ++r) {
      int best = 0;
      for (int c = 1; c < L.cols(); ++c) {
        if (L.at(r, c) > L.at(r, best)) best = c;
      }
      correct += best == labels[size_t(r)] ? 1 : 0;
      ++total;
    }
  }
  return double(correct) / double(std::max<int64_t>(1, total));
}

// ---- decoding ----

struct TranslationHypothesis {
  std::vector<int> ids;  // generated tokens, ending with eos when finished
  double log_prob = 0;   // cumulative, before length normalization
  bool finished = false;
  double mean_gate = 0;  // mean fusion gate over decode steps, 0 when unused
};

struct DecodeOptions {
  int beam_size = 4;
  int max_len = 64;
  double length_alpha = 0.6;
};

namespace detail_translate {

inline std::vector<double> log_softmax_row(const Tensor<float>& logits, int row) {
  double mx = logits.at(row, 0);
  for (int c = 1; c < logits.cols(); ++c) mx = std::max(mx, double(logits.at(row, c)));
  double sum = 0;
  for (int c = 0; c < logits.cols(); ++c) sum += std::exp(double(logits.at(row, c)) - mx);
  double lse = std::log(sum) + mx;
  std::vector<double> out(size_t(logits.cols()));
  for (int c = 0; c < logits.cols(); ++c) out[size_t(c)] = double(logits.at(row, c)) - lse;
  return out;
}

}  // namespace detail_translate

// Beam search with length-normalized selection among finished hypotheses
// (score = log_prob / len^alpha). beam_size=1 is exact greedy decoding.
inline TranslationHypothesis translate(const ParamSet& params, const TransformerConfig& cfg,
                                       const std::vector<int>& src_ids,
                                       const std::optional<Tensor<float>>& visual,
                                       bool gate_enabled, const DecodeOptions& opts = {}) {
  if (opts.beam_size < 1) throw UsageError("translate: beam_size must be >= 1");
  if (src_ids.empty()) throw UsageError("translate: empty source");

  struct Hyp {
    std::vector<int> ids;  // decoder input, starts with bos
    double log_prob = 0;
    bool finished = false;
    double gate_sum = 0;
    int gate_steps = 0;
  };

  std::vector<uint8_t> src_pad(src_ids.size(), 0);
  std::vector<Hyp> beam = {{{Vocabulary::kBos}, 0.0, false, 0.0, 0}};
  std::vector<Hyp> finished;

  int max_steps = std::min(opts.max_len, cfg.max_len - 1);
  for (int step = 0; step < max_steps; ++step) {
    std::vector<Hyp> expansions;
    for (const auto& hyp : beam) {
      if (hyp.finished) continue;
      Graph<float> g;
      ParamBinder<float> p(g, params, false);
      auto enc = encoder_forward(g, cfg, p, "translator", src_ids, src_pad);
      Tensor<float> gates;
      ForwardTrace<float>* no_trace = nullptr;
      auto logits = decoder_forward(g, cfg, p, "translator", hyp.ids, enc, src_pad, visual,
                                    gate_enabled && visual.has_value(), {}, no_trace, &gates);
      auto logp = detail_translate::log_softmax_row(g.value(logits), int(hyp.ids.size()) - 1);
      double step_gate = gates.numel() ? double(gates.at(gates.rows() - 1, 0)) : 0.0;

      std::vector<int> cand(logp.size());
      for (size_t c = 0; c < cand.size(); ++c) cand[c] = int(c);
      std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
        if (logp[size_t(a)] != logp[size_t(b)]) return logp[size_t(a)] > logp[size_t(b)];
        return a < b;
      });
      int take = std::min<int>(opts.beam_size, int(cand.size()));
      for (int c = 0; c < take; ++c) {
        Hyp next = hyp;
        next.ids.push_back(cand[size_t(c)]);
        next.log_prob += logp[size_t(cand[size_t(c)])];
        next.gate_sum += step_gate;
        next.gate_steps += gates.numel() ? 1 : 0;
        next.finished = cand[size_t(c)] == Vocabulary::kEos;
        expansions.push_back(std::move(next));
      }
    }
    if (expansions.empty()) break;
    std::stable_sort(expansions.begin(), expansions.end(), [](const Hyp& a, const Hyp& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.ids < b.ids;
    });
    beam.clear();
    for (auto& h : expansions) {
      if (h.finished) {
        finished.push_back(h);
      } else if (int(beam.size()) < opts.beam_size) {
        beam.push_back(std::move(h));
      }
      if (int(finished.size()) >= opts.beam_size && int(beam.size()) >= opts.beam_size) break;
    }
    if (beam.empty()) break;
  }

  auto norm_score = [&](const Hyp& h) {
    size_t gen_len = h.ids.size() - 1;  // exclude bos
    return h.log_prob / std::pow(double(std::max<size_t>(1, gen_len)), opts.length_alpha);
  };
  const Hyp* best = nullptr;
  double best_score = 0;
  for (const auto& h : finished) {
    double s = norm_score(h);
    if (!best || s > best_score) {
      best = &h;
      best_score = s;
    }
  }
  bool truncated = false;
  if (!best) {
    // Nothing reached eos within max_len: fall back to the best live beam.
    truncated = true;
    for (const auto& h : beam) {
      double s = norm_score(h);
      if (!best || s > best_score) {
        best = &h;
        best_score = s;
      }
    }
  }
  if (!best) throw TrainError("translate: no hypothesis produced");

  TranslationHypothesis out;
  out.ids.assign(best->ids.begin() + 1, best->ids.end());  // drop bos
  out.log_prob = best->log_prob;
  out.finished = !truncated;
  out.mean_gate = best->gate_steps ? best->gate_sum / best->gate_steps : 0.0;
  return out;
}

inline std::vector<std::string> hypothesis_tokens(const TranslationHypothesis& hyp,
                                                  const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int id : hyp.ids) {
    if (id == Vocabulary::kEos) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace ssmmt
