#pragma once

// Pre-norm transformer encoder/decoder built on the autodiff graph, plus the
// gated fusion layer that injects a projected visual vector into hidden
// states. Parameter initialization draws from a per-name RNG substream, so a
// tensor's initial value depends only on (seed, name) and is identical across
// model variants that share the name.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/common.hpp"
#include "ssmmt/nnet/graph.hpp"
#include "ssmmt/nnet/tensor.hpp"

namespace ssmmt {

struct TransformerConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int d_ff = 128;
  double dropout_rate = 0.0;
  int max_len = 64;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int d_img = 64;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || n_layers_enc < 1 || n_layers_dec < 1 || d_ff < 1 ||
        max_len < 1 || src_vocab < 1 || tgt_vocab < 1 || d_img < 1) {
      throw UsageError("transformer config: all counts must be >= 1");
    }
    if (d_model % n_heads != 0) throw UsageError("transformer config: d_model % n_heads != 0");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw UsageError("transformer config: dropout_rate must be in [0,1)");
    }
  }

  int d_head() const { return d_model / n_heads; }
};

inline void to_json(nlohmann::json& j, const TransformerConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},       {"n_heads", c.n_heads},
                     {"n_layers_enc", c.n_layers_enc}, {"n_layers_dec", c.n_layers_dec},
                     {"d_ff", c.d_ff},             {"dropout_rate", c.dropout_rate},
                     {"max_len", c.max_len},       {"src_vocab", c.src_vocab},
                     {"tgt_vocab", c.tgt_vocab},   {"d_img", c.d_img}};
}

inline void from_json(const nlohmann::json& j, TransformerConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("n_layers_enc").get_to(c.n_layers_enc);
  j.at("n_layers_dec").get_to(c.n_layers_dec);
  j.at("d_ff").get_to(c.d_ff);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("max_len").get_to(c.max_len);
  j.at("src_vocab").get_to(c.src_vocab);
  j.at("tgt_vocab").get_to(c.tgt_vocab);
  j.at("d_img").get_to(c.d_img);
}

template <typename T>
using ParamSetT = std::map<std::string, Tensor<T>>;

using ParamSet = ParamSetT<float>;

constexpr double kInitStd = 0.02;

template <typename T>
Tensor<T> init_tensor(const std::string& name, int r, int c, uint64_t seed) {
  // gamma rows start at 1, biases/betas at 0, weights at N(0, kInitStd).
  if (name.size() >= 5 && name.substr(name.size() - 5) == "gamma") {
    return Tensor<T>(r, c, T(1));
  }
  if (name.size() >= 4 && name.substr(name.size() - 4) == "beta") return Tensor<T>(r, c);
  auto base = name.substr(name.rfind('/') + 1);
  if (!base.empty() && base[0] == 'b') return Tensor<T>(r, c);
  Rng rng(prf_u64(seed, {"init", name}));
  return random_normal<T>(r, c, rng, kInitStd);
}

template <typename T>
void add_param(ParamSetT<T>& ps, const std::string& name, int r, int c, uint64_t seed) {
  ps.emplace(name, init_tensor<T>(name, r, c, seed));
}

template <typename T>
void add_encoder_stack_params(ParamSetT<T>& ps, const std::string& prefix,
                              const TransformerConfig& cfg, uint64_t seed) {
  int d = cfg.d_model;
  add_param(ps, prefix + "/embed/tokens", cfg.src_vocab, d, seed);
  for (int l = 0; l < cfg.n_layers_enc; ++l) {
    std::string lp = prefix + "/enc/l" + std::to_string(l);
    add_param(ps, lp + "/ln1/gamma", 1, d, seed);
    add_param(ps, lp + "/ln1/beta", 1, d, seed);
    add_param(ps, lp + "/attn/wq", d, d, seed);
    add_param(ps, lp + "/attn/bq", 1, d, seed);
    add_param(ps, lp + "/attn/wk", d, d, seed);
    add_param(ps, lp + "/attn/bk", 1, d, seed);
    add_param(ps, lp + "/attn/wv", d, d, seed);
    add_param(ps, lp + "/attn/bv", 1, d, seed);
    add_param(ps, lp + "/attn/wo", d, d, seed);
    add_param(ps, lp + "/attn/bo", 1, d, seed);
    add_param(ps, lp + "/ln2/gamma", 1, d, seed);
    add_param(ps, lp + "/ln2/beta", 1, d, seed);
    add_param(ps, lp + "/ffn/w1", d, cfg.d_ff, seed);
    add_param(ps, lp + "/ffn/b1", 1, cfg.d_ff, seed);
    add_param(ps, lp + "/ffn/w2", cfg.d_ff, d, seed);
    add_param(ps, lp + "/ffn/b2", 1, d, seed);
  }
  add_param(ps, prefix + "/enc/ln_f/gamma", 1, d, seed);
  add_param(ps, prefix + "/enc/ln_f/beta", 1, d, seed);
}

template <typename T>
void add_decoder_stack_params(ParamSetT<T>& ps, const std::string& prefix,
                              const TransformerConfig& cfg, uint64_t seed) {
  int d = cfg.d_model;
  for (int l = 0; l < cfg.n_layers_dec; ++l) {
    std::string lp = prefix + "/dec/l" + std::to_string(l);
    add_param(ps, lp + "/ln1/gamma", 1, d, seed);
    add_param(ps, lp + "/ln1/beta", 1, d, seed);
    add_param(ps, lp + "/self/wq", d, d, seed);
    add_param(ps, lp + "/self/bq", 1, d, seed);
    add_param(ps, lp + "/self/wk", d, d, seed);
    add_param(ps, lp + "/self/bk", 1, d, seed);
    add_param(ps, lp + "/self/wv", d, d, seed);
    add_param(ps, lp + "/self/bv", 1, d, seed);
    add_param(ps, lp + "/self/wo", d, d, seed);
    add_param(ps, lp + "/self/bo", 1, d, seed);
    add_param(ps, lp + "/ln2/gamma", 1, d, seed);
    add_param(ps, lp + "/ln2/beta", 1, d, seed);
    add_param(ps, lp + "/cross/wq", d, d, seed);
    add_param(ps, lp + "/cross/bq", 1, d, seed);
    add_param(ps, lp + "/cross/wk", d, d, seed);
    add_param(ps, lp + "/cross/bk", 1, d, seed);
    add_param(ps, lp + "/cross/wv", d, d, seed);
    add_param(ps, lp + "/cross/bv", 1, d, seed);
    add_param(ps, lp + "/cross/wo", d, d, seed);
    add_param(ps, lp + "/cross/bo", 1, d, seed);
    add_param(ps, lp + "/ln3/gamma", 1, d, seed);
    add_param(ps, lp + "/ln3/beta", 1, d, seed);
    add_param(ps, lp + "/ffn/w1", d, cfg.d_ff, seed);
    add_param(ps, lp + "/ffn/b1", 1, cfg.d_ff, seed);
    add_param(ps, lp + "/ffn/w2", cfg.d_ff, d, seed);
    add_param(ps, lp + "/ffn/b2", 1, d, seed);
  }
  add_param(ps, prefix + "/dec/ln_f/gamma", 1, d, seed);
  add_param(ps, prefix + "/dec/ln_f/beta", 1, d, seed);
}

template <typename T>
void add_fusion_params(ParamSetT<T>& ps, const std::string& prefix,
                       const TransformerConfig& cfg, uint64_t seed) {
  add_param(ps, prefix + "/wv", cfg.d_img, cfg.d_model, seed);
  add_param(ps, prefix + "/bv", 1, cfg.d_model, seed);
  add_param(ps, prefix + "/wg", 2 * cfg.d_model, 1, seed);
  add_param(ps, prefix + "/bg", 1, 1, seed);
}

// Binds a ParamSet's tensors into a graph as grad-tracked leaves on first
// use, and reads accumulated gradients back out after backward().
template <typename T>
class ParamBinder {
public:
  using TrainablePred = std::function<bool(const std::string&)>;

  ParamBinder(Graph<T>& g, const ParamSetT<T>& params, bool trainable = true,
              TrainablePred pred = nullptr)
      : g_(g), params_(params), trainable_(trainable), pred_(std::move(pred)) {}

  typename Graph<T>::Id operator()(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    auto pit = params_.find(name);
    if (pit == params_.end()) throw UsageError("missing parameter: " + name);
    bool train = trainable_ && (!pred_ || pred_(name));
    auto id = train ? g_.param(pit->second, name) : g_.constant(pit->second, name);
    ids_.emplace(name, id);
    return id;
  }

  bool bound(const std::string& name) const { return ids_.count(name) > 0; }

  // Adds every bound parameter's gradient into `grads`.
  void collect_grads(ParamSetT<T>& grads) const {
    for (const auto& [name, id] : ids_) {
      const auto& g = g_.grad(id);
      auto it = grads.find(name);
      if (it == grads.end()) {
        grads.emplace(name, g);
      } else {
        for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
      }
    }
  }

private:
  Graph<T>& g_;
  const ParamSetT<T>& params_;
  bool trainable_;
  TrainablePred pred_;
  std::map<std::string, typename Graph<T>::Id> ids_;
};

// ---- positions and masks ----

template <typename T>
Tensor<T> sinusoidal_positions(int len, int d_model) {
  Tensor<T> pe(len, d_model);
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      double angle = double(pos) / std::pow(10000.0, double(2 * (i / 2)) / double(d_model));
      pe.at(pos, i) = T(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

constexpr double kMaskNegInf = -1e9;

// Additive [q_len x k_len] mask: kMaskNegInf where attention is disallowed.
template <typename T>
Tensor<T> attention_mask(int q_len, const std::vector<uint8_t>& key_is_pad, bool causal) {
  int k_len = int(key_is_pad.size());
  Tensor<T> m(q_len, k_len);
  for (int q = 0; q < q_len; ++q) {
    for (int k = 0; k < k_len; ++k) {
      bool blocked = key_is_pad[size_t(k)] || (causal && k > q);
      m.at(q, k) = blocked ? T(kMaskNegInf) : T(0);
    }
  }
  return m;
}

// Per-layer attention probabilities, for inspection in tests.
template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> attention;  // one [len x len] per (layer, head)
};

namespace detail_nn {

template <typename T>
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;  // null or rate==0 -> identity (eval mode)
};

template <typename T>
typename Graph<T>::Id dropout(Graph<T>& g, typename Graph<T>::Id x, DropoutCtx<T>& ctx) {
  if (ctx.rate <= 0.0 || ctx.rng == nullptr) return x;
  const auto& X = g.value(x);
  Tensor<T> mask(X.rows(), X.cols());
  T keep_scale = T(1.0 / (1.0 - ctx.rate));
  for (auto& v : mask.data) {
    v = ctx.rng->uniform() < ctx.rate ? T(0) : keep_scale;
  }
  auto m = g.constant(std::move(mask), "dropout_mask");
  return g.mul(x, m);
}

template <typename T, typename PB>
typename Graph<T>::Id linear(Graph<T>& g, typename Graph<T>::Id x, PB& p,
                             const std::string& w, const std::string& b) {
  return g.add_rowvec(g.matmul(x, p(w)), p(b));
}

// Multi-head attention: queries from q_in, keys/values from kv_in.
template <typename T, typename PB>
typename Graph<T>::Id multi_head_attention(Graph<T>& g, const TransformerConfig& cfg,
                                           PB& p, const std::string& prefix,
                                           typename Graph<T>::Id q_in,
                                           typename Graph<T>::Id kv_in,
                                           const Tensor<T>& mask, ForwardTrace<T>* trace) {
  auto q = linear(g, q_in, p, prefix + "/wq", prefix + "/bq");
  auto k = linear(g, kv_in, p, prefix + "/wk", prefix + "/bk");
  auto v = linear(g, kv_in, p, prefix + "/wv", prefix + "/bv");
  int dh = cfg.d_head();
  std::vector<typename Graph<T>::Id> heads;
  for (int h = 0; h < cfg.n_heads; ++h) {
    auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    auto probs = g.softmax_rows(scores, mask);
    if (trace) trace->attention.push_back(g.value(probs));
    heads.push_back(g.matmul(probs, vh));
  }
  auto ctx = g.concat_cols(heads);
  return linear(g, ctx, p, prefix + "/wo", prefix + "/bo");
}

template <typename T, typename PB>
typename Graph<T>::Id ffn_block(Graph<T>& g, PB& p, const std::string& prefix,
                                typename Graph<T>::Id x) {
  auto h = g.relu(linear(g, x, p, prefix + "/w1", prefix + "/b1"));
  return linear(g, h, p, prefix + "/w2", prefix + "/b2");
}

}  // namespace detail_nn

// ---- gated fusion ----

// v' = W_v v + b_v; per position t: lambda_t = sigmoid(w_g . [H_t ; v'] + b_g);
// out_t = H_t + lambda_t * v'. Returns the fused hidden states; lambda (one
// scalar per position) is written to *gates_out when requested.
template <typename T, typename PB>
typename Graph<T>::Id gated_fusion(Graph<T>& g, const TransformerConfig& cfg,
                                   PB& p, const std::string& prefix,
                                   typename Graph<T>::Id h, typename Graph<T>::Id visual,
                                   Tensor<T>* gates_out = nullptr) {
  const auto& H = g.value(h);
  const auto& V = g.value(visual);
  if (!H.all_finite() || !V.all_finite()) throw TrainError("gated_fusion: non-finite input");
  if (V.rows() != 1 || V.cols() != cfg.d_img) {
    throw UsageError("gated_fusion: visual context must be [1 x D_img], got " + V.shape_str());
  }
  int m = H.rows();
  int d = cfg.d_model;
  auto vproj = g.add_rowvec(g.matmul(visual, p(prefix + "/wv")), p(prefix + "/bv"));  // [1 x d]
  auto wg = p(prefix + "/wg");                                                        // [2d x 1]
  auto wg_h = g.slice_cols(g.transpose(wg), 0, d);      // [1 x d]
  auto wg_v = g.slice_cols(g.transpose(wg), d, 2 * d);  // [1 x d]
  auto gate_h = g.matmul(h, g.transpose(wg_h));         // [m x 1]
  auto gate_v = g.matmul(vproj, g.transpose(wg_v));     // [1 x 1]
  auto z = g.add(g.add(gate_h, g.broadcast_row(gate_v, m)),
                 g.broadcast_row(p(prefix + "/bg"), m));
  auto lambda = g.sigmoid(z);  // [m x 1]
  if (gates_out) *gates_out = g.value(lambda);
  auto contribution = g.scale_rows(g.broadcast_row(vproj, m), lambda);
  return g.add(h, contribution);
}

// ---- encoder / decoder ----

struct EncoderOptions {
  bool train_mode = false;
  Rng* dropout_rng = nullptr;
};

template <typename T, typename PB>
typename Graph<T>::Id encoder_forward(Graph<T>& g, const TransformerConfig& cfg,
                                      PB& p, const std::string& prefix,
                                      const std::vector<int>& ids,
                                      const std::vector<uint8_t>& is_pad,
                                      const EncoderOptions& opts = {},
                                      ForwardTrace<T>* trace = nullptr) {
  if (ids.empty()) throw UsageError("encoder_forward: empty input");
  if (int(ids.size()) > cfg.max_len) {
    throw UsageError("encoder_forward: sequence length " + std::to_string(ids.size()) +
                     " exceeds max_len " + std::to_string(cfg.max_len));
  }
  if (is_pad.size() != ids.size()) throw UsageError("encoder_forward: pad mask length");
  for (int id : ids) {
    if (id < 0 || id >= cfg.src_vocab) throw UsageError("encoder_forward: id out of vocab");
  }
  detail_nn::DropoutCtx<T> drop{opts.train_mode ? cfg.dropout_rate : 0.0, opts.dropout_rng};
  int len = int(ids.size());
  auto x = g.add(g.embedding(p(prefix + "/embed/tokens"), ids),
                 g.constant(sinusoidal_positions<T>(len, cfg.d_model), "posenc"));
  x = detail_nn::dropout(g, x, drop);
  auto mask = attention_mask<T>(len, is_pad, /*causal=*/false);
  for (int l = 0; l < cfg.n_layers_enc; ++l) {
    std::string lp = prefix + "/enc/l" + std::to_string(l);
    auto normed = g.layer_norm_rows(x, p(lp + "/ln1/gamma"), p(lp + "/ln1/beta"));
    auto attn = detail_nn::multi_head_attention(g, cfg, p, lp + "/attn", normed, normed, mask, trace);
    x = g.add(x, detail_nn::dropout(g, attn, drop));
    auto normed2 = g.layer_norm_rows(x, p(lp + "/ln2/gamma"), p(lp + "/ln2/beta"));
    auto ff = detail_nn::ffn_block(g, p, lp + "/ffn", normed2);
    x = g.add(x, detail_nn::dropout(g, ff, drop));
  }
  return g.layer_norm_rows(x, p(prefix + "/enc/ln_f/gamma"), p(prefix + "/enc/ln_f/beta"));
}

// Causal decoder over target ids with cross-attention into encoder states.
// When `visual` is provided and gate_enabled, gated fusion is applied to the
// final hidden states before the output projection; otherwise the fusion
// layer is skipped entirely so the text-only path is bit-identical.
template <typename T, typename PB>
typename Graph<T>::Id decoder_forward(Graph<T>& g, const TransformerConfig& cfg,
                                      PB& p, const std::string& prefix,
                                      const std::vector<int>& tgt_ids,
                                      typename Graph<T>::Id enc_states,
                                      const std::vector<uint8_t>& src_is_pad,
                                      const std::optional<Tensor<T>>& visual = std::nullopt,
                                      bool gate_enabled = false,
                                      const EncoderOptions& opts = {},
                                      ForwardTrace<T>* trace = nullptr,
                                      Tensor<T>* gates_out = nullptr) {
  if (tgt_ids.empty()) throw UsageError("decoder_forward: empty input");
  if (int(tgt_ids.size()) > cfg.max_len) throw UsageError("decoder_forward: oversize sequence");
  for (int id : tgt_ids) {
    if (id < 0 || id >= cfg.tgt_vocab) throw UsageError("decoder_forward: id out of vocab");
  }
  if (visual && gate_enabled && int(visual->cols()) != cfg.d_img) {
    throw UsageError("decoder_forward: visual context dimension != D_img");
  }
  detail_nn::DropoutCtx<T> drop{opts.train_mode ? cfg.dropout_rate : 0.0, opts.dropout_rng};
  int len = int(tgt_ids.size());
  auto x = g.add(g.embedding(p(prefix + "/embed/tokens"), tgt_ids),
                 g.constant(sinusoidal_positions<T>(len, cfg.d_model), "posenc"));
  x = detail_nn::dropout(g, x, drop);
  std::vector<uint8_t> tgt_no_pad(size_t(len), 0);
  auto self_mask = attention_mask<T>(len, tgt_no_pad, /*causal=*/true);
  auto cross_mask = attention_mask<T>(len, src_is_pad, /*causal=*/false);
  for (int l = 0; l < cfg.n_layers_dec; ++l) {
    std::string lp = prefix + "/dec/l" + std::to_string(l);
    auto n1 = g.layer_norm_rows(x, p(lp + "/ln1/gamma"), p(lp + "/ln1/beta"));
    auto self_attn = detail_nn::multi_head_attention(g, cfg, p, lp + "/self", n1, n1, self_mask, trace);
    x = g.add(x, detail_nn::dropout(g, self_attn, drop));
    auto n2 = g.layer_norm_rows(x, p(lp + "/ln2/gamma"), p(lp + "/ln2/beta"));
    auto cross = detail_nn::multi_head_attention(g, cfg, p, lp + "/cross", n2, enc_states, cross_mask, trace);
    x = g.add(x, detail_nn::dropout(g, cross, drop));
    auto n3 = g.layer_norm_rows(x, p(lp + "/ln3/gamma"), p(lp + "/ln3/beta"));
    auto ff = detail_nn::ffn_block(g, p, lp + "/ffn", n3);
    x = g.add(x, detail_nn::dropout(g, ff, drop));
  }
  auto hidden = g.layer_norm_rows(x, p(prefix + "/dec/ln_f/gamma"), p(prefix + "/dec/ln_f/beta"));
  if (gate_enabled && visual) {
    auto v = g.constant(*visual, "visual_context");
    hidden = gated_fusion(g, cfg, p, prefix + "/dec_fusion", hidden, v, gates_out);
  }
  return detail_nn::linear(g, hidden, p, prefix + "/out_head/w", prefix + "/out_head/b");
}

}  // namespace ssmmt
