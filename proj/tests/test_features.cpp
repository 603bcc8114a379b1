#include <catch2/catch_amalgamated.hpp>

#include "ssmmt/features.hpp"

#include "support/tmpdir.hpp"

using namespace ssmmt;

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

double l2(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += double(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("stub extractor reproduces the stated formula") {
  // Oracle: recompute 4*e_c + noise from the payload hash independently.
  StubExtractor ex(64);
  std::string payload = fixture_payload(7, "police", 0, 16);
  int64_t concept_id = StubExtractor::parse_concept(payload);
  CHECK(concept_id == int64_t(prf_u64(7, {"fixture-concept", "police"}) % 16));

  auto digest = sha256_digest(payload);
  uint64_t noise_seed = 0;
  for (int i = 0; i < 8; ++i) noise_seed = (noise_seed << 8) | digest[i];
  Rng rng(noise_seed);
  std::vector<double> expect(64);
  for (auto& x : expect) x = rng.uniform(-0.1, 0.1);
  expect[size_t(concept_id % 64)] += 4.0;
  double norm = 0;
  for (double x : expect) norm += x * x;
  norm = std::sqrt(norm);

  auto got = ex.extract(payload);
  REQUIRE(got.size() == 64);
  for (size_t i = 0; i < 64; ++i) {
    CHECK(double(got[i]) == Catch::Approx(expect[i] / norm).margin(1e-7));
  }
}

TEST_CASE("extraction is deterministic and unit-norm") {
  StubExtractor ex(64);
  std::string payload = fixture_payload(3, "tree", 2, 16);
  auto a = ex.extract(payload);
  auto b = ex.extract(payload);
  CHECK(a == b);
  CHECK(std::abs(l2(a) - 1.0) <= 1e-6);
}

TEST_CASE("different concepts are nearly orthogonal") {
  StubExtractor ex(64);
  // Brute force over C=16 concepts, 10 images per concept.
  std::map<int64_t, std::vector<std::vector<float>>> by_concept;
  FixtureClient client(21, 16);
  int kw = 0;
  while (by_concept.size() < 16 && kw < 2000) {
    std::string keyword = "kw" + std::to_string(kw++);
    auto results = client.fetch(keyword, 10);
    int64_t c = StubExtractor::parse_concept(results[0].payload);
    if (by_concept.count(c)) continue;
    for (const auto& r : results) by_concept[c].push_back(ex.extract(r.payload));
  }
  REQUIRE(by_concept.size() == 16);

  double intra_sum = 0, inter_sum = 0;
  int intra_n = 0, inter_n = 0;
  std::vector<int64_t> concepts;
  for (const auto& [c, _] : by_concept) concepts.push_back(c);
  for (size_t i = 0; i < concepts.size(); ++i) {
    const auto& vi = by_concept[concepts[i]];
    for (size_t a = 0; a < vi.size(); ++a) {
      for (size_t b = a + 1; b < vi.size(); ++b) {
        intra_sum += cosine(vi[a], vi[b]);
        ++intra_n;
      }
    }
    for (size_t j = i + 1; j < concepts.size(); ++j) {
      const auto& vj = by_concept[concepts[j]];
      for (const auto& a : vi) {
        for (const auto& b : vj) {
          double cs = cosine(a, b);
          CHECK(cs < 0.5);
          inter_sum += cs;
          ++inter_n;
        }
      }
    }
  }
  CHECK(intra_sum / intra_n > inter_sum / inter_n);
}

TEST_CASE("extract_all dedupes by image id and verifies blobs") {
  TmpDir tmp("features");
  BlobCache cache(tmp.path);
  FixtureClient client(5, 16);
  // Two sentences sharing one keyword: shared blobs dedupe in the store.
  auto manifest = build_manifest({{0, {"shared", "left"}}, {1, {"shared", "right"}}},
                                 client, 5, cache);
  CHECK(manifest.entries.size() == 20);
  StubExtractor ex(64);
  auto store = extract_all(manifest, ex, cache);
  CHECK(store.features.size() == 15);  // 3 distinct keywords x 5 ranks

  // Corrupting one blob must fail before extraction.
  auto first_id = *manifest.distinct_image_ids().begin();
  write_file_atomic(cache.blob_path(first_id), "junk");
  CHECK_THROWS_AS(extract_all(manifest, ex, cache), DataError);
}

TEST_CASE("extract_all errors on missing blob with the image id") {
  TmpDir tmp("missing");
  BlobCache cache(tmp.path);
  RetrievalManifest m;
  m.client_id = "fixture:1";
  m.k = 1;
  ImageCandidate c;
  c.image_id = std::string(64, 'a');
  c.query = {0, "kw", 1};
  c.rank = 0;
  c.source = "fixture:1";
  m.entries.push_back(c);
  StubExtractor ex(8);
  try {
    extract_all(m, ex, cache);
    FAIL("expected missing-blob error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(c.image_id) != std::string::npos);
  }
}

TEST_CASE("feature store round-trips bit-exactly") {
  TmpDir tmp("store");
  BlobCache cache(tmp.path);
  FixtureClient client(9, 16);
  auto manifest = build_manifest({{0, {"a", "b"}}}, client, 3, cache);
  StubExtractor ex(16);
  auto store = extract_all(manifest, ex, cache);

  auto path = tmp / "feats.bin";
  save_feature_store(store, path);
  auto loaded = load_feature_store(path);
  CHECK(loaded.extractor_id == store.extractor_id);
  CHECK(loaded.d_img == store.d_img);
  REQUIRE(loaded.features.size() == store.features.size());
  for (const auto& [id, vec] : store.features) {
    CHECK(loaded.get(id) == vec);  // bit-exact float32 round trip
  }

  // Re-saving produces identical bytes.
  save_feature_store(loaded, tmp / "feats2.bin");
  CHECK(read_file(path) == read_file(tmp / "feats2.bin"));
}

TEST_CASE("extractor rejects junk payloads and empty input") {
  StubExtractor ex(8);
  CHECK_THROWS_AS(ex.extract("random bytes, no concept"), DataError);
  CHECK_THROWS_AS(extract("", ex), DataError);
}
