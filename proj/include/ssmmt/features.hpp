#pragma once

// Image payload -> fixed-dimension feature vectors through a pluggable
// extractor. The stub extractor reads the concept id embedded in fixture
// payloads and emits an L2-normalized one-hot-plus-noise vector; it is what
// tests and the synthetic benchmark run on.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/common.hpp"
#include "ssmmt/retrieval.hpp"

namespace ssmmt {

struct ImageFeature {
  std::string image_id;
  std::vector<float> vec;
  std::string extractor_id;
};

class FeatureExtractor {
public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
  virtual std::vector<float> extract(std::string_view payload) const = 0;
};

// vector = alpha * e_c + eta, then L2-normalized; c is the payload's concept
// id, eta has per-component uniform noise in [-noise, noise] seeded from the
// payload hash, so the mapping payload -> vector is pure.
class StubExtractor : public FeatureExtractor {
public:
  explicit StubExtractor(int d_img = 64, double alpha = 4.0, double noise = 0.1)
      : d_img_(d_img), alpha_(alpha), noise_(noise) {
    if (d_img_ < 1) throw UsageError("stub extractor: d_img must be >= 1");
  }

  std::string id() const override {
    return "stub-v1:d=" + std::to_string(d_img_);
  }

  int dim() const override { return d_img_; }

  std::vector<float> extract(std::string_view payload) const override {
    if (payload.empty()) throw DataError("extract: empty payload");
    int64_t concept_id = parse_concept(payload);
    auto digest = sha256_digest(payload);
    uint64_t noise_seed = 0;
    for (int i = 0; i < 8; ++i) noise_seed = (noise_seed << 8) | digest[i];
    Rng rng(noise_seed);
    std::vector<double> v(static_cast<size_t>(d_img_));
    for (auto& x : v) x = rng.uniform(-noise_, noise_);
    v[size_t(concept_id % d_img_)] += alpha_;
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    std::vector<float> out(static_cast<size_t>(d_img_));
    for (size_t i = 0; i < v.size(); ++i) out[i] = float(v[i] / norm);
    return out;
  }

  static int64_t parse_concept(std::string_view payload) {
    constexpr std::string_view kTag = "\nconcept=";
    auto pos = payload.find(kTag);
    if (payload.substr(0, kFixturePayloadMagic.size()) != kFixturePayloadMagic ||
        pos == std::string_view::npos) {
      throw DataError("stub extractor: payload has no embedded concept id");
    }
    pos += kTag.size();
    auto end = payload.find('\n', pos);
    return std::stoll(std::string(payload.substr(pos, end - pos)));
  }

private:
  int d_img_;
  double alpha_;
  double noise_;
};

struct FeatureStore {
  std::string extractor_id;
  int d_img = 0;
  // Ordered by image_id for deterministic serialization.
  std::map<std::string, std::vector<float>> features;

  const std::vector<float>& get(const std::string& image_id) const {
    auto it = features.find(image_id);
    if (it == features.end()) throw DataError("feature store: unknown image_id " + image_id);
    return it->second;
  }

  bool has(const std::string& image_id) const { return features.count(image_id) > 0; }
};

inline ImageFeature extract(std::string_view payload, const FeatureExtractor& extractor) {
  ImageFeature f;
  f.image_id = sha256_hex(payload);
  f.vec = extractor.extract(payload);
  f.extractor_id = extractor.id();
  double norm = 0;
  for (float x : f.vec) {
    if (!std::isfinite(x)) throw DataError("extract: non-finite feature for " + f.image_id);
    norm += double(x) * double(x);
  }
  if (norm <= 0) throw DataError("extract: zero-norm feature for " + f.image_id);
  return f;
}

// One feature per distinct image_id in the manifest. Blobs are hash-verified
// by the cache before extraction.
inline FeatureStore extract_all(const RetrievalManifest& manifest,
                                const FeatureExtractor& extractor, const BlobCache& cache) {
  FeatureStore store;
  store.extractor_id = extractor.id();
  store.d_img = extractor.dim();
  for (const auto& id : manifest.distinct_image_ids()) {
    std::string payload = cache.get(id);  // throws on missing or corrupt blob
    store.features[id] = extractor.extract(payload);
  }
  return store;
}

// File format: one JSON header line {extractor_id, D_img, count}, then binary
// records of 32-byte id digest + D_img float32 little-endian values.
inline std::string feature_store_to_bytes(const FeatureStore& store) {
  nlohmann::json header;
  header["extractor_id"] = store.extractor_id;
  header["D_img"] = store.d_img;
  header["count"] = store.features.size();
  std::string out = header.dump() + "\n";
  for (const auto& [id, vec] : store.features) {
    if (int(vec.size()) != store.d_img) throw DataError("feature store: dimension mismatch");
    if (id.size() != 64) throw DataError("feature store: bad image id " + id);
    for (size_t i = 0; i < 32; ++i) {
      auto nibble = [&](char c) -> uint8_t {
        if (c >= '0' && c <= '9') return uint8_t(c - '0');
        if (c >= 'a' && c <= 'f') return uint8_t(c - 'a' + 10);
        throw DataError("feature store: bad hex id");
      };
      out.push_back(char(nibble(id[2 * i]) << 4 | nibble(id[2 * i + 1])));
    }
    for (float v : vec) put_f32_le(out, v);
  }
  return out;
}

inline FeatureStore feature_store_from_bytes(std::string_view bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DataError("feature store: missing header");
  nlohmann::json header = nlohmann::json::parse(bytes.substr(0, nl), nullptr, false);
  if (header.is_discarded()) throw DataError("feature store: bad header JSON");
  FeatureStore store;
  store.extractor_id = header.at("extractor_id").get<std::string>();
  store.d_img = header.at("D_img").get<int>();
  size_t count = header.at("count").get<size_t>();
  size_t rec = 32 + size_t(store.d_img) * 4;
  std::string_view body = bytes.substr(nl + 1);
  if (body.size() != count * rec) throw DataError("feature store: truncated body");
  static const char* kHex = "0123456789abcdef";
  for (size_t i = 0; i < count; ++i) {
    const char* p = body.data() + i * rec;
    std::string id(64, '0');
    for (size_t b = 0; b < 32; ++b) {
      id[2 * b] = kHex[uint8_t(p[b]) >> 4];
      id[2 * b + 1] = kHex[uint8_t(p[b]) & 0xf];
    }
    std::vector<float> vec(size_t(store.d_img));
    for (int d = 0; d < store.d_img; ++d) vec[size_t(d)] = get_f32_le(p + 32 + 4 * d);
    store.features.emplace(std::move(id), std::move(vec));
  }
  return store;
}

inline void save_feature_store(const FeatureStore& store, const std::filesystem::path& path) {
  write_file_atomic(path, feature_store_to_bytes(store));
}

inline FeatureStore load_feature_store(const std::filesystem::path& path) {
  return feature_store_from_bytes(read_file(path));
}

}  // namespace ssmmt
