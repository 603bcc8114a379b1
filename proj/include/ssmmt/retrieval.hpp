#pragma once

// Keyword -> candidate-image retrieval behind a pluggable SearchClient, with a
// content-addressed blob cache and a byte-stable manifest. The fixture client
// generates payloads as a pure function of (seed, keyword, rank) so the whole
// pipeline runs offline and deterministically.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssmmt/common.hpp"
#include "ssmmt/corpus.hpp"
#include "ssmmt/sha256.hpp"

namespace ssmmt {

struct ImageQuery {
  int64_t sentence_id = 0;
  std::string keyword;
  int k = 5;
};

struct ImageCandidate {
  std::string image_id;  // sha256 hex of payload bytes
  ImageQuery query;
  int rank = 0;
  std::string source;  // URL or "fixture:<seed>"

  bool operator==(const ImageCandidate& o) const {
    return image_id == o.image_id && query.sentence_id == o.query.sentence_id &&
           query.keyword == o.query.keyword && rank == o.rank && source == o.source;
  }
};

struct SearchResult {
  std::string payload;
  std::string source;
};

class SearchClient {
public:
  virtual ~SearchClient() = default;
  virtual std::string id() const = 0;
  // Ordered by client relevance; may return fewer than k.
  virtual std::vector<SearchResult> fetch(const std::string& keyword, int k) = 0;
};

// ---- fixture client ----

constexpr std::string_view kFixturePayloadMagic = "SSMMT-FIXTURE-IMAGE-1";

inline uint64_t fixture_concept(uint64_t seed, const std::string& keyword,
                                int concept_count) {
  return prf_u64(seed, {"fixture-concept", keyword}) % uint64_t(concept_count);
}

inline std::string fixture_payload(uint64_t seed, const std::string& keyword, int rank,
                                   int concept_count) {
  uint64_t concept_id = fixture_concept(seed, keyword, concept_count);
  auto noise = prf_digest(seed, {"fixture-noise", keyword, std::to_string(rank)});
  std::string payload;
  payload += kFixturePayloadMagic;
  payload += "\nconcept=" + std::to_string(concept_id);
  payload += "\nkeyword=" + keyword;
  payload += "\nrank=" + std::to_string(rank);
  payload += "\nnoise=" + to_hex(noise);
  payload += "\n";
  return payload;
}

class FixtureClient : public SearchClient {
public:
  explicit FixtureClient(uint64_t seed, int concept_count = 16)
      : seed_(seed), concept_count_(concept_count) {
    if (concept_count_ < 1) throw UsageError("fixture client: concept_count must be >= 1");
  }

  std::string id() const override { return "fixture:" + std::to_string(seed_); }

  std::vector<SearchResult> fetch(const std::string& keyword, int k) override {
    std::vector<SearchResult> out;
    out.reserve(size_t(k));
    for (int r = 0; r < k; ++r) {
      out.push_back({fixture_payload(seed_, keyword, r, concept_count_), id()});
    }
    return out;
  }

  uint64_t seed() const { return seed_; }

private:
  uint64_t seed_;
  int concept_count_;
};

inline std::unique_ptr<SearchClient> fixture_client(uint64_t seed, int concept_count = 16) {
  return std::make_unique<FixtureClient>(seed, concept_count);
}

// ---- blob cache ----

// Content-addressed, write-once store: <dir>/blobs/<sha256-hex>. Concurrent
// writers of the same content converge because the name is the content hash
// and writes go through a temp file + rename.
class BlobCache {
public:
  explicit BlobCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_ / "blobs");
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path blob_path(const std::string& image_id) const {
    return dir_ / "blobs" / image_id;
  }

  bool has(const std::string& image_id) const {
    return std::filesystem::exists(blob_path(image_id));
  }

  std::string put(std::string_view payload) {
    std::string id = sha256_hex(payload);
    auto path = blob_path(id);
    if (!std::filesystem::exists(path)) {
      // Unique temp name per writer; rename is atomic on POSIX.
      auto tmp = path;
      tmp += "." + std::to_string(uint64_t(std::hash<std::thread::id>{}(std::this_thread::get_id()))) + ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(payload.data(), std::streamsize(payload.size()));
        if (!out) throw DataError("blob write failed: " + tmp.string());
      }
      std::filesystem::rename(tmp, path);
    }
    return id;
  }

  // Verifies the content hash on every read; corruption is detected here.
  std::string get(const std::string& image_id) const {
    auto path = blob_path(image_id);
    if (!std::filesystem::exists(path)) {
      throw DataError("missing blob: " + image_id);
    }
    std::string payload = read_file(path);
    if (sha256_hex(payload) != image_id) {
      throw DataError("blob corruption detected: " + image_id);
    }
    return payload;
  }

private:
  std::filesystem::path dir_;
};

// ---- manifest ----

struct ShortQuery {
  int64_t sentence_id = 0;
  std::string keyword;
  int got = 0;
  int want = 0;
};

struct RetrievalManifest {
  std::string client_id;
  int64_t created_utc = 0;
  int k = 5;
  // Canonical order: (sentence_id, keyword, rank).
  std::vector<ImageCandidate> entries;
  std::vector<ShortQuery> short_queries;

  std::vector<const ImageCandidate*> candidates_for(int64_t sentence_id,
                                                    const std::string& keyword) const {
    std::vector<const ImageCandidate*> out;
    for (const auto& e : entries) {
      if (e.query.sentence_id == sentence_id && e.query.keyword == keyword) {
        out.push_back(&e);
      }
    }
    std::sort(out.begin(), out.end(),
              [](const ImageCandidate* a, const ImageCandidate* b) { return a->rank < b->rank; });
    return out;
  }

  std::set<std::string> distinct_image_ids() const {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.image_id);
    return ids;
  }
};

inline void canonicalize(RetrievalManifest& m) {
  std::sort(m.entries.begin(), m.entries.end(), [](const ImageCandidate& a, const ImageCandidate& b) {
    if (a.query.sentence_id != b.query.sentence_id) return a.query.sentence_id < b.query.sentence_id;
    if (a.query.keyword != b.query.keyword) return a.query.keyword < b.query.keyword;
    return a.rank < b.rank;
  });
  std::sort(m.short_queries.begin(), m.short_queries.end(), [](const ShortQuery& a, const ShortQuery& b) {
    if (a.sentence_id != b.sentence_id) return a.sentence_id < b.sentence_id;
    return a.keyword < b.keyword;
  });
}

inline std::string manifest_to_json(const RetrievalManifest& m) {
  nlohmann::json j;
  j["client"] = m.client_id;
  j["created_utc"] = m.created_utc;
  j["k"] = m.k;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"sentence_id", e.query.sentence_id},
                            {"keyword", e.query.keyword},
                            {"rank", e.rank},
                            {"image_id", e.image_id},
                            {"source", e.source}});
  }
  j["short_queries"] = nlohmann::json::array();
  for (const auto& s : m.short_queries) {
    j["short_queries"].push_back({{"sentence_id", s.sentence_id},
                                  {"keyword", s.keyword},
                                  {"got", s.got},
                                  {"want", s.want}});
  }
  return j.dump(2) + "\n";
}

inline RetrievalManifest manifest_from_json(std::string_view text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("manifest: invalid JSON");
  RetrievalManifest m;
  try {
    m.client_id = j.at("client").get<std::string>();
    m.created_utc = j.at("created_utc").get<int64_t>();
    m.k = j.at("k").get<int>();
    for (const auto& e : j.at("entries")) {
      ImageCandidate c;
      c.query.sentence_id = e.at("sentence_id").get<int64_t>();
      c.query.keyword = e.at("keyword").get<std::string>();
      c.query.k = m.k;
      c.rank = e.at("rank").get<int>();
      c.image_id = e.at("image_id").get<std::string>();
      c.source = e.at("source").get<std::string>();
      m.entries.push_back(std::move(c));
    }
    if (j.contains("short_queries")) {
      for (const auto& s : j["short_queries"]) {
        m.short_queries.push_back({s.at("sentence_id").get<int64_t>(),
                                   s.at("keyword").get<std::string>(),
                                   s.at("got").get<int>(), s.at("want").get<int>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: bad schema: ") + e.what());
  }
  canonicalize(m);
  return m;
}

// ---- retrieval ----

struct RetryPolicy {
  int attempts = 3;
  int initial_backoff_ms = 100;
};

// Serves queries cache-first. Client results are memoized per (keyword, k) so
// a query sequence with duplicates costs one client call per distinct query;
// concurrent callers of the same keyword share a single in-flight fetch.
class CachedRetriever {
public:
  CachedRetriever(BlobCache& cache, SearchClient& client, RetryPolicy retry = {})
      : cache_(cache), client_(client), retry_(retry) {}

  // Pre-populate the memo from an existing manifest (resume path). Entries are
  // only trusted if every payload is still present in the cache.
  void adopt(const RetrievalManifest& m) {
    if (m.client_id != client_.id()) return;
    std::map<std::pair<std::string, int>, std::vector<ImageCandidate>> groups;
    for (const auto& e : m.entries) {
      groups[{e.query.keyword, m.k}].push_back(e);
    }
    std::lock_guard lk(mu_);
    for (auto& [key, entries] : groups) {
      bool complete = true;
      for (const auto& e : entries) {
        if (!cache_.has(e.image_id)) {
          complete = false;
          break;
        }
      }
      if (complete) {
        std::sort(entries.begin(), entries.end(),
                  [](const ImageCandidate& a, const ImageCandidate& b) { return a.rank < b.rank; });
        memo_[key] = entries;
      }
    }
  }

  std::vector<ImageCandidate> retrieve(const ImageQuery& query) {
    if (query.k < 1) throw UsageError("retrieve: k must be >= 1");
    if (query.keyword.empty()) throw UsageError("retrieve: empty keyword");
    auto key = std::make_pair(query.keyword, query.k);
    {
      std::unique_lock lk(mu_);
      for (;;) {
        auto it = memo_.find(key);
        if (it != memo_.end()) return rebind(it->second, query);
        if (!inflight_.count(key)) break;
        cv_.wait(lk);
      }
      inflight_.insert(key);
    }
    std::vector<ImageCandidate> fetched;
    try {
      fetched = fetch_with_retries(query);
    } catch (...) {
      std::lock_guard lk(mu_);
      inflight_.erase(key);
      cv_.notify_all();
      throw;
    }
    std::lock_guard lk(mu_);
    memo_[key] = fetched;
    inflight_.erase(key);
    cv_.notify_all();
    return rebind(fetched, query);
  }

  int64_t client_calls() const { return client_calls_; }

private:
  static std::vector<ImageCandidate> rebind(const std::vector<ImageCandidate>& entries,
                                            const ImageQuery& query) {
    std::vector<ImageCandidate> out = entries;
    for (auto& e : out) e.query = query;
    return out;
  }

  std::vector<ImageCandidate> fetch_with_retries(const ImageQuery& query) {
    std::string last_error;
    for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
      try {
        ++client_calls_;
        auto results = client_.fetch(query.keyword, query.k);
        std::vector<ImageCandidate> out;
        for (size_t r = 0; r < results.size() && int(r) < query.k; ++r) {
          ImageCandidate c;
          c.image_id = cache_.put(results[r].payload);
          c.query = query;
          c.rank = int(r);
          c.source = results[r].source;
          out.push_back(std::move(c));
        }
        return out;
      } catch (const std::exception& e) {
        last_error = e.what();
        if (attempt < retry_.attempts) {
          std::this_thread::sleep_for(
              std::chrono::milliseconds(retry_.initial_backoff_ms << (attempt - 1)));
        }
      }
    }
    throw DataError("retrieval failed for keyword '" + query.keyword + "' after " +
                    std::to_string(retry_.attempts) + " attempts: " + last_error);
  }

  BlobCache& cache_;
  SearchClient& client_;
  RetryPolicy retry_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::pair<std::string, int>, std::vector<ImageCandidate>> memo_;
  std::set<std::pair<std::string, int>> inflight_;
  int64_t client_calls_ = 0;
};

inline std::vector<ImageCandidate> retrieve(const ImageQuery& query, SearchClient& client,
                                            BlobCache& cache, RetryPolicy retry = {}) {
  CachedRetriever r(cache, client, retry);
  return r.retrieve(query);
}

// One manifest entry group per (sentence_id, keyword). Resumable: an existing
// manifest at <cache>/manifest.json is reused where its payloads survive.
inline RetrievalManifest build_manifest(const std::vector<KeywordSet>& keyword_sets,
                                        SearchClient& client, int k, BlobCache& cache,
                                        RetryPolicy retry = {}) {
  if (keyword_sets.empty()) throw DataError("build_manifest: empty keyword stream");
  if (k < 1) throw UsageError("build_manifest: k must be >= 1");
  CachedRetriever retriever(cache, client, retry);
  auto manifest_path = cache.dir() / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    auto existing = manifest_from_json(read_file(manifest_path));
    if (existing.k == k) retriever.adopt(existing);
  }
  RetrievalManifest m;
  m.client_id = client.id();
  m.created_utc = deterministic_timestamp();
  m.k = k;
  for (const auto& ks : keyword_sets) {
    for (const auto& kw : ks.keywords) {
      ImageQuery q{ks.sentence_id, kw, k};
      auto candidates = retriever.retrieve(q);
      if (int(candidates.size()) < k) {
        m.short_queries.push_back({ks.sentence_id, kw, int(candidates.size()), k});
      }
      for (auto& c : candidates) m.entries.push_back(std::move(c));
    }
  }
  canonicalize(m);
  write_file_atomic(manifest_path, manifest_to_json(m));
  return m;
}

}  // namespace ssmmt
