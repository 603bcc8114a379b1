#pragma once

// Pipeline stages behind the CLI subcommands, and the end-to-end experiment
// that trains the text-only baseline and the visually-conditioned system
// with identical seeds and budgets, then reports the contrast.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssmmt/config.hpp"
#include "ssmmt/corpus.hpp"
#include "ssmmt/eval.hpp"
#include "ssmmt/features.hpp"
#include "ssmmt/filter.hpp"
#include "ssmmt/matcher.hpp"
#include "ssmmt/retrieval.hpp"
#include "ssmmt/synth.hpp"
#include "ssmmt/translator.hpp"

namespace ssmmt {

namespace pipeline {

// ---- shared loading helpers ----

struct LoadedCorpus {
  std::vector<SentencePair> pairs;
  Vocabulary vocab;
  std::vector<AnswerKeyEntry> answer_key;  // empty when no benchmark key exists

  std::vector<int64_t> split_ids(const std::string& split) const {
    std::vector<int64_t> ids;
    if (answer_key.empty()) {
      for (const auto& p : pairs) ids.push_back(p.src.id);
      return ids;
    }
    for (const auto& k : answer_key) {
      if (k.split == split) ids.push_back(k.id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  std::vector<SentencePair> subset(const std::vector<int64_t>& ids) const {
    std::map<int64_t, const SentencePair*> by_id;
    for (const auto& p : pairs) by_id[p.src.id] = &p;
    std::vector<SentencePair> out;
    for (int64_t id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("corpus: missing sentence id " + std::to_string(id));
      out.push_back(*it->second);
    }
    return out;
  }

  // Training sentences: everything not tagged eval.
  std::vector<SentencePair> train_pairs() const {
    if (answer_key.empty()) return pairs;
    std::map<int64_t, std::string> split;
    for (const auto& k : answer_key) split[k.id] = k.split;
    std::vector<SentencePair> out;
    for (const auto& p : pairs) {
      auto it = split.find(p.src.id);
      if (it == split.end() || it->second != "eval") out.push_back(p);
    }
    return out;
  }
};

inline std::filesystem::path vocab_path(const RunConfig& cfg) {
  return cfg.corpus_dir() / "vocab.json";
}

inline std::filesystem::path keywords_path(const RunConfig& cfg) {
  return cfg.corpus_dir() / "keywords.jsonl";
}

inline std::filesystem::path answer_key_path(const RunConfig& cfg) {
  return cfg.synth_dir() / "answer_key.jsonl";
}

inline void save_vocab(const Vocabulary& v, const std::filesystem::path& path) {
  nlohmann::json j;
  j["tokens"] = v.id_to_token;
  write_file_atomic(path, j.dump() + "\n");
}

inline Vocabulary load_vocab(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError("vocab not found (run prepare first): " + path.string());
  }
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("tokens")) throw DataError("vocab: bad file");
  Vocabulary v;
  v.id_to_token = j["tokens"].get<std::vector<std::string>>();
  if (v.id_to_token.size() < Vocabulary::kNumSpecials || v.id_to_token[0] != "<pad>") {
    throw DataError("vocab: missing specials");
  }
  for (int i = 0; i < int(v.id_to_token.size()); ++i) v.token_to_id[v.id_to_token[size_t(i)]] = i;
  return v;
}

inline LoadedCorpus load_prepared(const RunConfig& cfg) {
  LoadedCorpus out;
  out.pairs = load_parallel_corpus(cfg.corpus_dir() / "source.txt",
                                   cfg.corpus_dir() / "target.txt");
  out.vocab = load_vocab(vocab_path(cfg));
  if (std::filesystem::exists(answer_key_path(cfg))) {
    out.answer_key = answer_key_from_jsonl(read_file(answer_key_path(cfg)));
  }
  return out;
}

inline TransformerConfig model_config(const RunConfig& cfg, const Vocabulary& vocab) {
  TransformerConfig m = cfg.model;
  m.src_vocab = vocab.size();
  m.tgt_vocab = vocab.size();
  return m;
}

inline MatcherConfig matcher_config(const RunConfig& cfg, const Vocabulary& vocab) {
  MatcherConfig mc;
  mc.model = model_config(cfg, vocab);
  mc.d_match = cfg.d_match;
  return mc;
}

// ---- stages ----

// Writes the synthetic benchmark into the work directory: corpus files, the
// retrieval query lists, the answer key and generator metadata.
inline SynthOutput stage_synth(const RunConfig& cfg) {
  SynthSpec spec = cfg.synth;
  spec.seed = cfg.fixture_seed();
  spec.k_candidates = cfg.k > 1 ? cfg.k : spec.k_candidates;
  auto out = generate_synth(spec);

  std::string src, tgt;
  for (const auto& line : out.src_lines) src += line + "\n";
  for (const auto& line : out.tgt_lines) tgt += line + "\n";
  write_file_atomic(cfg.corpus_dir() / "source.txt", src);
  write_file_atomic(cfg.corpus_dir() / "target.txt", tgt);
  write_file_atomic(keywords_path(cfg), keyword_sets_to_jsonl(out.keywords));
  write_file_atomic(answer_key_path(cfg), answer_key_to_jsonl(out.answer_key));

  nlohmann::json meta;
  meta["spec"] = spec;
  meta["object_concepts"] = out.object_concepts;
  meta["sense_concepts"] = out.sense_concepts;
  meta["k_per_query"] = 1;
  write_file_atomic(cfg.synth_dir() / "meta.json", meta.dump(2) + "\n");
  echo_config(cfg, cfg.synth_dir());
  return out;
}

// Tokenizes the corpus, builds the vocabulary, and extracts keywords unless
// a query file already exists (the benchmark generator writes its own).
inline LoadedCorpus stage_prepare(const RunConfig& cfg) {
  auto src_path = cfg.corpus_dir() / "source.txt";
  auto tgt_path = cfg.corpus_dir() / "target.txt";
  if (!std::filesystem::exists(src_path)) {
    if (cfg.corpus_src.empty() || !std::filesystem::exists(cfg.corpus_src)) {
      throw UsageError("prepare: corpus source not found: " + cfg.corpus_src);
    }
    if (cfg.corpus_tgt.empty() || !std::filesystem::exists(cfg.corpus_tgt)) {
      throw UsageError("prepare: corpus target not found: " + cfg.corpus_tgt);
    }
    std::filesystem::create_directories(cfg.corpus_dir());
    write_file_atomic(src_path, read_file(cfg.corpus_src));
    write_file_atomic(tgt_path, read_file(cfg.corpus_tgt));
  }
  auto pairs = load_parallel_corpus(src_path, tgt_path);

  std::vector<Sentence> all;
  for (const auto& p : pairs) {
    all.push_back(p.src);
    all.push_back(p.tgt);
  }
  auto vocab = build_vocab(all, cfg.min_freq);
  save_vocab(vocab, vocab_path(cfg));

  if (!std::filesystem::exists(keywords_path(cfg))) {
    std::set<std::string> stop;
    if (!cfg.stopwords.empty()) {
      if (!std::filesystem::exists(cfg.stopwords)) {
        throw UsageError("prepare: stopword file not found: " + cfg.stopwords);
      }
      stop = load_stopwords(cfg.stopwords);
    }
    std::vector<Sentence> srcs;
    for (const auto& p : pairs) srcs.push_back(p.src);
    auto idf = build_idf(srcs);
    std::vector<KeywordSet> keywords;
    for (const auto& p : pairs) {
      keywords.push_back(extract_keywords(p.src, stop, idf, cfg.max_k));
    }
    write_file_atomic(keywords_path(cfg), keyword_sets_to_jsonl(keywords));
  }
  echo_config(cfg, cfg.corpus_dir());

  LoadedCorpus out;
  out.pairs = std::move(pairs);
  out.vocab = std::move(vocab);
  if (std::filesystem::exists(answer_key_path(cfg))) {
    out.answer_key = answer_key_from_jsonl(read_file(answer_key_path(cfg)));
  }
  return out;
}

// The benchmark plants one image per query, so its runs use k=1 per keyword;
// ordinary corpora use the configured k per keyword.
inline int effective_k_per_query(const RunConfig& cfg) {
  return std::filesystem::exists(answer_key_path(cfg)) ? 1 : cfg.k;
}

inline RetrievalManifest stage_retrieve(const RunConfig& cfg, SearchClient* injected = nullptr) {
  if (!std::filesystem::exists(keywords_path(cfg))) {
    throw DataError("retrieve: keyword file missing (run prepare or synth first)");
  }
  auto keywords = keyword_sets_from_jsonl(read_file(keywords_path(cfg)));
  BlobCache cache(cfg.cache_dir());
  RetryPolicy retry{cfg.retry_attempts, cfg.retry_backoff_ms};

  std::unique_ptr<SearchClient> owned;
  SearchClient* client = injected;
  if (!client) {
    if (cfg.client == "fixture") {
      owned = fixture_client(cfg.fixture_seed(), cfg.concept_count);
    } else {
      throw UsageError("retrieve: http client must be constructed by the CLI layer");
    }
    client = owned.get();
  }
  auto manifest = build_manifest(keywords, *client, effective_k_per_query(cfg), cache, retry);
  echo_config(cfg, cfg.cache_dir());
  return manifest;
}

inline RetrievalManifest load_manifest(const RunConfig& cfg) {
  auto path = cfg.cache_dir() / "manifest.json";
  if (!std::filesystem::exists(path)) {
    throw DataError("manifest missing (run retrieve first): " + path.string());
  }
  return manifest_from_json(read_file(path));
}

inline FeatureStore stage_extract_features(const RunConfig& cfg) {
  auto manifest = load_manifest(cfg);
  BlobCache cache(cfg.cache_dir());
  StubExtractor extractor(cfg.model.d_img, cfg.stub_alpha, cfg.stub_noise);
  auto store = extract_all(manifest, extractor, cache);
  std::filesystem::create_directories(cfg.features_path().parent_path());
  save_feature_store(store, cfg.features_path());
  echo_config(cfg, cfg.features_path().parent_path());
  return store;
}

inline FeatureStore load_features(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.features_path())) {
    throw DataError("feature store missing (run extract-features first)");
  }
  return load_feature_store(cfg.features_path());
}

struct MatcherStageResult {
  MatcherTrainResult train;
  std::filesystem::path ckpt_path;
};

inline MatcherStageResult stage_train_matcher(const RunConfig& cfg) {
  auto corpus = load_prepared(cfg);
  auto manifest = load_manifest(cfg);
  auto features = load_features(cfg);

  // Pairs come from training sentences only; the benchmark's eval split
  // stays unseen by the matcher.
  auto train_sentences = corpus.train_pairs();
  RetrievalManifest train_manifest = manifest;
  {
    std::set<int64_t> train_ids;
    for (const auto& p : train_sentences) train_ids.insert(p.src.id);
    std::vector<ImageCandidate> kept;
    for (auto& e : train_manifest.entries) {
      if (train_ids.count(e.query.sentence_id)) kept.push_back(e);
    }
    train_manifest.entries = std::move(kept);
  }
  auto pairs = build_pairs(train_manifest, train_sentences, cfg.negative_ratio,
                           cfg.substream("pairs"));
  std::filesystem::create_directories(cfg.matcher_dir());
  write_file_atomic(cfg.matcher_dir() / "pairs.jsonl", match_examples_to_jsonl(pairs));

  auto mc = matcher_config(cfg, corpus.vocab);
  TrainMatcherOptions opts;
  opts.epochs = cfg.matcher_epochs;
  opts.lr = cfg.matcher_lr;
  opts.batch_size = cfg.matcher_batch;
  opts.seed = cfg.substream("matcher");
  opts.freeze_encoder = cfg.freeze_encoder;
  opts.val_percent = cfg.val_percent;

  MatcherStageResult out;
  out.train = train_matcher(pairs, train_sentences, corpus.vocab, features, mc, opts);
  out.ckpt_path = cfg.matcher_dir() / "matcher.ckpt";
  save_checkpoint(matcher_checkpoint(out.train, opts.seed), out.ckpt_path);

  nlohmann::json log;
  log["final_auc"] = out.train.final_auc;
  log["epochs"] = nlohmann::json::array();
  for (const auto& e : out.train.log) {
    log["epochs"].push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_auc", e.val_auc}});
  }
  write_file_atomic(cfg.matcher_dir() / "train_log.json", log.dump(2) + "\n");
  echo_config(cfg, cfg.matcher_dir());
  return out;
}

inline std::pair<MatcherConfig, ParamSet> load_matcher(const RunConfig& cfg) {
  auto path = cfg.matcher_dir() / "matcher.ckpt";
  if (!std::filesystem::exists(path)) {
    throw DataError("matcher checkpoint missing (run train-matcher first)");
  }
  auto ckpt = load_checkpoint(path);
  if (ckpt.config.value("kind", "") != "matcher") {
    throw DataError("matcher checkpoint has wrong kind");
  }
  MatcherConfig mc = ckpt.config.at("matcher").get<MatcherConfig>();
  return {mc, ckpt.params};
}

inline std::vector<VisualContext> stage_build_contexts(const RunConfig& cfg) {
  auto corpus = load_prepared(cfg);
  auto manifest = load_manifest(cfg);
  auto features = load_features(cfg);
  auto [mc, params] = load_matcher(cfg);
  if (mc.model.src_vocab != corpus.vocab.size()) {
    throw DataError("build-contexts: matcher vocabulary mismatch");
  }
  FilterOptions opts;
  opts.temperature = cfg.temperature;
  opts.candidate_cap = cfg.candidate_cap;
  auto contexts = build_contexts(corpus.pairs, corpus.vocab, manifest, features, mc, params,
                                 opts);
  std::string ckpt_hash = sha256_hex(read_file(cfg.matcher_dir() / "matcher.ckpt"));
  std::filesystem::create_directories(cfg.contexts_path().parent_path());
  write_file_atomic(cfg.contexts_path(),
                    contexts_to_bytes(contexts, features.d_img, cfg.temperature, ckpt_hash));
  echo_config(cfg, cfg.contexts_path().parent_path());
  return contexts;
}

inline ContextFile load_contexts(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.contexts_path())) {
    throw DataError("contexts missing (run build-contexts first)");
  }
  return contexts_from_bytes(read_file(cfg.contexts_path()));
}

enum class Arm { kText, kMultimodal };

inline const char* arm_name(Arm arm) { return arm == Arm::kText ? "tlm" : "vtlm"; }

inline std::filesystem::path pretrain_ckpt_path(const RunConfig& cfg, Arm arm) {
  return cfg.ckpt_dir() / (std::string(arm_name(arm)) + ".ckpt");
}

inline std::filesystem::path finetune_ckpt_path(const RunConfig& cfg, Arm arm) {
  return cfg.ckpt_dir() / (arm == Arm::kText ? "finetune_text.ckpt" : "finetune_mm.ckpt");
}

inline Checkpoint translator_checkpoint(const TransformerConfig& m, ParamSet params,
                                        uint64_t seed, int64_t step) {
  Checkpoint ckpt;
  ckpt.config = {{"kind", "translator"}, {"model", m}};
  ckpt.params = std::move(params);
  ckpt.seed = seed;
  ckpt.step = step;
  return ckpt;
}

// Masked pretraining for one arm. Both arms share the seed, so they see the
// same masks and the same initializations for shared parameter names.
inline TrainTrace stage_pretrain(const RunConfig& cfg, Arm arm) {
  auto corpus = load_prepared(cfg);
  auto m = model_config(cfg, corpus.vocab);
  auto train_sentences = corpus.train_pairs();
  auto encoded = encode_corpus(train_sentences, corpus.vocab);

  ContextFile contexts;
  const ContextFile* ctx_ptr = nullptr;
  if (arm == Arm::kMultimodal) {
    contexts = load_contexts(cfg);
    if (contexts.d_img != m.d_img) throw DataError("pretrain: context D_img mismatch");
    ctx_ptr = &contexts;
  }

  TrainOptions opts;
  opts.epochs = cfg.pretrain_epochs;
  opts.lr = cfg.pretrain_lr;
  opts.batch_size = cfg.pretrain_batch;
  opts.mask_prob = cfg.mask_prob;
  opts.seed = cfg.substream("pretrain");
  opts.use_visual = arm == Arm::kMultimodal;

  auto params = init_translator_params<float>(m, opts.seed);
  auto trace = pretrain_translator(params, m, encoded, ctx_ptr, opts);
  std::filesystem::create_directories(cfg.ckpt_dir());
  save_checkpoint(translator_checkpoint(m, std::move(params), opts.seed,
                                        int64_t(opts.epochs) * int64_t(encoded.size())),
                  pretrain_ckpt_path(cfg, arm));
  nlohmann::json log;
  log["arm"] = arm_name(arm);
  log["epoch_loss"] = trace.epoch_loss;
  write_file_atomic(cfg.ckpt_dir() / (std::string(arm_name(arm)) + "_pretrain_log.json"),
                    log.dump(2) + "\n");
  echo_config(cfg, cfg.ckpt_dir());
  return trace;
}

inline TrainTrace stage_finetune(const RunConfig& cfg, Arm arm) {
  auto corpus = load_prepared(cfg);
  auto m = model_config(cfg, corpus.vocab);
  auto train_sentences = corpus.train_pairs();
  auto encoded = encode_corpus(train_sentences, corpus.vocab);

  ContextFile contexts;
  const ContextFile* ctx_ptr = nullptr;
  if (arm == Arm::kMultimodal) {
    contexts = load_contexts(cfg);
    ctx_ptr = &contexts;
  }

  TrainOptions opts;
  opts.epochs = cfg.finetune_epochs;
  opts.lr = cfg.finetune_lr;
  opts.batch_size = cfg.finetune_batch;
  opts.seed = cfg.substream("finetune");
  opts.use_visual = arm == Arm::kMultimodal;

  auto params = init_translator_params<float>(m, opts.seed);
  auto init_path = pretrain_ckpt_path(cfg, arm);
  if (std::filesystem::exists(init_path)) {
    auto pre = load_checkpoint(init_path);
    auto pre_model = pre.config.at("model").get<TransformerConfig>();
    if (pre_model.src_vocab != m.src_vocab || pre_model.tgt_vocab != m.tgt_vocab) {
      throw DataError("finetune: vocabulary mismatch with pretraining checkpoint");
    }
    load_overlapping(params, pre.params);
  }
  auto trace = finetune_translator(params, m, encoded, ctx_ptr, opts);
  std::filesystem::create_directories(cfg.ckpt_dir());
  save_checkpoint(translator_checkpoint(m, std::move(params), opts.seed,
                                        int64_t(opts.epochs) * int64_t(encoded.size())),
                  finetune_ckpt_path(cfg, arm));
  nlohmann::json log;
  log["arm"] = arm_name(arm);
  log["epoch_loss"] = trace.epoch_loss;
  write_file_atomic(cfg.ckpt_dir() /
                        (std::string(arm == Arm::kText ? "text" : "mm") + "_finetune_log.json"),
                    log.dump(2) + "\n");
  echo_config(cfg, cfg.ckpt_dir());
  return trace;
}

enum class WeightsMode { kLearned, kUniform };

struct TranslateResult {
  std::vector<int64_t> sentence_ids;
  std::vector<std::vector<std::string>> hypotheses;
  std::vector<TranslationHypothesis> raw;
};

// Decodes the eval split (or the whole corpus when no benchmark key exists).
// The multimodal arm consumes learned contexts, or uniform-weight pooling
// over the same candidate sets for the filtering ablation.
inline TranslateResult stage_translate(const RunConfig& cfg, Arm arm,
                                       WeightsMode weights = WeightsMode::kLearned) {
  auto corpus = load_prepared(cfg);
  auto eval_ids = corpus.split_ids("eval");
  auto eval_pairs = corpus.subset(eval_ids);

  auto ckpt_path = finetune_ckpt_path(cfg, arm);
  if (!std::filesystem::exists(ckpt_path)) {
    throw DataError("translate: finetuned checkpoint missing for arm " +
                    std::string(arm_name(arm)));
  }
  auto ckpt = load_checkpoint(ckpt_path);
  auto m = ckpt.config.at("model").get<TransformerConfig>();
  if (m.src_vocab != corpus.vocab.size()) {
    throw DataError("translate: vocabulary mismatch with checkpoint");
  }

  ContextFile contexts;
  FeatureStore features;
  RetrievalManifest manifest;
  if (arm == Arm::kMultimodal) {
    contexts = load_contexts(cfg);
    if (weights == WeightsMode::kUniform) {
      features = load_features(cfg);
      manifest = load_manifest(cfg);
    }
  }

  DecodeOptions dopts;
  dopts.beam_size = cfg.beam_size;
  dopts.max_len = cfg.decode_max_len;
  dopts.length_alpha = cfg.length_alpha;

  TranslateResult out;
  for (const auto& p : eval_pairs) {
    auto src_ids = encode(corpus.vocab, p.src.tokens);
    std::optional<Tensor<float>> visual;
    if (arm == Arm::kMultimodal) {
      if (weights == WeightsMode::kUniform) {
        auto cands = sentence_candidates(manifest, features, p.src.id);
        if (!cands.empty()) {
          std::vector<const std::vector<float>*> feats;
          for (const auto& [id, f] : cands) feats.push_back(f);
          std::vector<double> w(feats.size(), 1.0 / double(feats.size()));
          auto pooled = pool(feats, w);
          Tensor<float> v(1, m.d_img);
          for (int d = 0; d < m.d_img; ++d) v.at(0, d) = float(pooled[size_t(d)]);
          visual = v;
        }
      } else {
        visual = context_tensor<float>(&contexts, p.src.id, m.d_img);
      }
    }
    out.sentence_ids.push_back(p.src.id);
    auto hyp = translate(ckpt.params, m, src_ids, visual, visual.has_value(), dopts);
    out.hypotheses.push_back(hypothesis_tokens(hyp, corpus.vocab));
    out.raw.push_back(std::move(hyp));
  }

  // Persist: plain text lines plus a jsonl with scores and gate statistics.
  std::string base = arm == Arm::kText ? "baseline" : (weights == WeightsMode::kUniform
                                                           ? "system_uniform"
                                                           : "system");
  std::string text, jsonl;
  for (size_t i = 0; i < out.hypotheses.size(); ++i) {
    text += join_tokens(out.hypotheses[i]) + "\n";
    nlohmann::json j;
    j["id"] = out.sentence_ids[i];
    j["tokens"] = out.hypotheses[i];
    j["log_prob"] = out.raw[i].log_prob;
    j["finished"] = out.raw[i].finished;
    j["mean_gate"] = out.raw[i].mean_gate;
    jsonl += j.dump() + "\n";
  }
  std::filesystem::create_directories(cfg.translations_dir());
  write_file_atomic(cfg.translations_dir() / (base + ".txt"), text);
  write_file_atomic(cfg.translations_dir() / (base + ".jsonl"), jsonl);
  echo_config(cfg, cfg.translations_dir());
  return out;
}

struct EvaluateResult {
  CompareReport report;
  double uniform_bleu = -1;
  double ablation_gap = 0;
  nlohmann::json json;
};

inline EvaluateResult stage_evaluate(const RunConfig& cfg) {
  auto corpus = load_prepared(cfg);
  auto eval_ids = corpus.split_ids("eval");
  auto eval_pairs = corpus.subset(eval_ids);

  auto read_hyps = [&](const std::string& name) {
    auto path = cfg.translations_dir() / (name + ".txt");
    if (!std::filesystem::exists(path)) {
      throw DataError("evaluate: translations missing: " + path.string());
    }
    auto lines = read_lines(path);
    return split_token_lines(lines);
  };
  auto baseline = read_hyps("baseline");
  auto system = read_hyps("system");
  std::vector<std::vector<std::string>> refs;
  for (const auto& p : eval_pairs) refs.push_back(p.tgt.tokens);

  EvaluateResult out;
  out.report = compare(baseline, system, refs, eval_ids, corpus.answer_key);
  out.json = compare_report_to_json(out.report);

  auto uniform_path = cfg.translations_dir() / "system_uniform.txt";
  if (std::filesystem::exists(uniform_path)) {
    auto uniform = split_token_lines(read_lines(uniform_path));
    auto uni_report = bleu(uniform, refs);
    out.uniform_bleu = uni_report.bleu;
    out.ablation_gap = out.report.system.bleu - uni_report.bleu;
    out.json["ablation"] = {{"uniform_bleu", out.uniform_bleu},
                            {"gap", out.ablation_gap},
                            {"uniform_sense_accuracy",
                             sense_accuracy_for(uniform, eval_ids, corpus.answer_key, "eval")}};
  }
  std::filesystem::create_directories(cfg.report_dir());
  write_file_atomic(cfg.report_dir() / "report.json", out.json.dump(2) + "\n");
  std::string text = compare_report_text(out.report);
  if (out.uniform_bleu >= 0) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "uniform-weights BLEU: %.4f (gap %+.4f)\n",
                  out.uniform_bleu, out.ablation_gap);
    text += buf;
  }
  write_file_atomic(cfg.report_dir() / "report.txt", text);
  echo_config(cfg, cfg.report_dir());
  return out;
}

// The full experiment: benchmark generation through the comparison report,
// both arms trained with identical seeds and budgets.
inline EvaluateResult run_e2e(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.work());
  echo_config(cfg, cfg.work());
  stage_synth(cfg);
  stage_prepare(cfg);
  stage_retrieve(cfg);
  stage_extract_features(cfg);
  stage_train_matcher(cfg);
  stage_build_contexts(cfg);
  stage_pretrain(cfg, Arm::kText);
  stage_pretrain(cfg, Arm::kMultimodal);
  stage_finetune(cfg, Arm::kText);
  stage_finetune(cfg, Arm::kMultimodal);
  stage_translate(cfg, Arm::kText);
  stage_translate(cfg, Arm::kMultimodal, WeightsMode::kLearned);
  stage_translate(cfg, Arm::kMultimodal, WeightsMode::kUniform);
  return stage_evaluate(cfg);
}

}  // namespace pipeline

}  // namespace ssmmt
