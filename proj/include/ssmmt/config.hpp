#pragma once

// Run configuration: one JSON file merged over defaults, with dotted-path
// command-line overrides. The effective configuration is echoed into the
// work directory so any run can be reproduced from its outputs.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ssmmt/common.hpp"
#include "ssmmt/nnet/transformer.hpp"
#include "ssmmt/synth.hpp"

namespace ssmmt {

struct RunConfig {
  // paths
  std::string corpus_src;
  std::string corpus_tgt;
  std::string stopwords;
  std::string work_dir = "out";

  // model
  TransformerConfig model;
  int d_match = 64;

  // corpus
  int min_freq = 1;
  int max_k = 3;

  // retrieval
  std::string client = "fixture";  // "fixture" | "http"
  std::string endpoint;
  int k = 5;
  int concept_count = 16;
  int retry_attempts = 3;
  int retry_backoff_ms = 100;

  // features
  double stub_alpha = 4.0;
  double stub_noise = 0.1;

  // matcher
  int matcher_epochs = 20;
  double matcher_lr = 2e-3;
  int matcher_batch = 32;
  int negative_ratio = 1;
  bool freeze_encoder = false;
  int val_percent = 10;

  // filter
  double temperature = 1.0;
  int candidate_cap = 16;

  // pretrain / finetune
  int pretrain_epochs = 60;
  double pretrain_lr = 2e-3;
  int pretrain_batch = 16;
  double mask_prob = 0.15;
  int finetune_epochs = 80;
  double finetune_lr = 2e-3;
  int finetune_batch = 16;

  // decoding
  int beam_size = 4;
  int decode_max_len = 64;
  double length_alpha = 0.6;

  // synthetic benchmark
  SynthSpec synth;

  uint64_t seed = 13;

  uint64_t substream(std::string_view name) const { return prf_u64(seed, {"stage", name}); }

  // One seed feeds the fixture client and the generator so the planted
  // concepts line up with what retrieval fetches.
  uint64_t fixture_seed() const { return substream("fixture"); }

  std::filesystem::path work() const { return work_dir; }
  std::filesystem::path corpus_dir() const { return work() / "corpus"; }
  std::filesystem::path synth_dir() const { return work() / "synth"; }
  std::filesystem::path cache_dir() const { return work() / "cache"; }
  std::filesystem::path features_path() const { return work() / "features" / "features.bin"; }
  std::filesystem::path matcher_dir() const { return work() / "matcher"; }
  std::filesystem::path contexts_path() const { return work() / "contexts" / "contexts.bin"; }
  std::filesystem::path ckpt_dir() const { return work() / "checkpoints"; }
  std::filesystem::path translations_dir() const { return work() / "translations"; }
  std::filesystem::path report_dir() const { return work() / "report"; }

  void validate() const {
    model.validate();
    if (d_match < 1) throw UsageError("config: d_match must be >= 1");
    if (min_freq < 1) throw UsageError("config: min_freq must be >= 1");
    if (max_k < 1) throw UsageError("config: max_k must be >= 1");
    if (k < 1) throw UsageError("config: k must be >= 1");
    if (client != "fixture" && client != "http") {
      throw UsageError("config: client must be 'fixture' or 'http'");
    }
    if (client == "http" && endpoint.empty()) {
      throw UsageError("config: http client requires an endpoint");
    }
    if (temperature <= 0) throw UsageError("config: temperature must be > 0");
    if (mask_prob <= 0 || mask_prob >= 1) throw UsageError("config: mask_prob must be in (0,1)");
    if (beam_size < 1) throw UsageError("config: beam_size must be >= 1");
    if (negative_ratio < 0) throw UsageError("config: negative_ratio must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"paths",
       {{"corpus_src", c.corpus_src},
        {"corpus_tgt", c.corpus_tgt},
        {"stopwords", c.stopwords},
        {"work_dir", c.work_dir}}},
      {"model", c.model},
      {"d_match", c.d_match},
      {"corpus", {{"min_freq", c.min_freq}, {"max_k", c.max_k}}},
      {"retrieval",
       {{"client", c.client},
        {"endpoint", c.endpoint},
        {"k", c.k},
        {"concept_count", c.concept_count},
        {"retry_attempts", c.retry_attempts},
        {"retry_backoff_ms", c.retry_backoff_ms}}},
      {"features", {{"stub_alpha", c.stub_alpha}, {"stub_noise", c.stub_noise}}},
      {"matcher",
       {{"epochs", c.matcher_epochs},
        {"lr", c.matcher_lr},
        {"batch_size", c.matcher_batch},
        {"negative_ratio", c.negative_ratio},
        {"freeze_encoder", c.freeze_encoder},
        {"val_percent", c.val_percent}}},
      {"filter", {{"temperature", c.temperature}, {"candidate_cap", c.candidate_cap}}},
      {"pretrain",
       {{"epochs", c.pretrain_epochs},
        {"lr", c.pretrain_lr},
        {"batch_size", c.pretrain_batch},
        {"mask_prob", c.mask_prob}}},
      {"finetune",
       {{"epochs", c.finetune_epochs}, {"lr", c.finetune_lr}, {"batch_size", c.finetune_batch}}},
      {"decode",
       {{"beam_size", c.beam_size},
        {"max_len", c.decode_max_len},
        {"length_alpha", c.length_alpha}}},
      {"synth", c.synth},
      {"seed", c.seed}};
}

namespace detail_config {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace detail_config

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  using detail_config::maybe;
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    maybe(p, "corpus_src", c.corpus_src);
    maybe(p, "corpus_tgt", c.corpus_tgt);
    maybe(p, "stopwords", c.stopwords);
    maybe(p, "work_dir", c.work_dir);
  }
  if (j.contains("model")) j.at("model").get_to(c.model);
  maybe(j, "d_match", c.d_match);
  if (j.contains("corpus")) {
    maybe(j.at("corpus"), "min_freq", c.min_freq);
    maybe(j.at("corpus"), "max_k", c.max_k);
  }
  if (j.contains("retrieval")) {
    const auto& r = j.at("retrieval");
    maybe(r, "client", c.client);
    maybe(r, "endpoint", c.endpoint);
    maybe(r, "k", c.k);
    maybe(r, "concept_count", c.concept_count);
    maybe(r, "retry_attempts", c.retry_attempts);
    maybe(r, "retry_backoff_ms", c.retry_backoff_ms);
  }
  if (j.contains("features")) {
    maybe(j.at("features"), "stub_alpha", c.stub_alpha);
    maybe(j.at("features"), "stub_noise", c.stub_noise);
  }
  if (j.contains("matcher")) {
    const auto& m = j.at("matcher");
    maybe(m, "epochs", c.matcher_epochs);
    maybe(m, "lr", c.matcher_lr);
    maybe(m, "batch_size", c.matcher_batch);
    maybe(m, "negative_ratio", c.negative_ratio);
    maybe(m, "freeze_encoder", c.freeze_encoder);
    maybe(m, "val_percent", c.val_percent);
  }
  if (j.contains("filter")) {
    maybe(j.at("filter"), "temperature", c.temperature);
    maybe(j.at("filter"), "candidate_cap", c.candidate_cap);
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    maybe(p, "epochs", c.pretrain_epochs);
    maybe(p, "lr", c.pretrain_lr);
    maybe(p, "batch_size", c.pretrain_batch);
    maybe(p, "mask_prob", c.mask_prob);
  }
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    maybe(f, "epochs", c.finetune_epochs);
    maybe(f, "lr", c.finetune_lr);
    maybe(f, "batch_size", c.finetune_batch);
  }
  if (j.contains("decode")) {
    const auto& d = j.at("decode");
    maybe(d, "beam_size", c.beam_size);
    maybe(d, "max_len", c.decode_max_len);
    maybe(d, "length_alpha", c.length_alpha);
  }
  if (j.contains("synth")) j.at("synth").get_to(c.synth);
  maybe(j, "seed", c.seed);
}

// Dotted-path override, e.g. set_override(j, "matcher.epochs", "30").
// The value is parsed as JSON when possible and kept as a string otherwise.
inline void set_override(nlohmann::json& j, const std::string& path, const std::string& value) {
  nlohmann::json* node = &j;
  size_t start = 0;
  for (;;) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot - start);
    if (key.empty()) throw UsageError("override: empty key in '" + path + "'");
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) {
      throw UsageError("config file not found: " + path.string());
    }
    j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw UsageError("config file is not valid JSON: " + path.string());
  }
  for (const auto& [key, value] : overrides) set_override(j, key, value);
  RunConfig cfg;
  try {
    from_json(j, cfg);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline void echo_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  nlohmann::json j = cfg;
  write_file_atomic(dir / "effective_config.json", j.dump(2) + "\n");
}

}  // namespace ssmmt
