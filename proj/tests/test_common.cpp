#include <catch2/catch_amalgamated.hpp>

#include "ssmmt/common.hpp"
#include "ssmmt/sha256.hpp"

#include "support/tmpdir.hpp"

using namespace ssmmt;

TEST_CASE("sha256 matches FIPS 180-4 test vectors") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // Multi-block input exercises the buffering path.
  std::string millionary(1000000, 'a');
  CHECK(sha256_hex(millionary) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("prf_u64 separates parts unambiguously") {
  CHECK(prf_u64(1, {"ab", "c"}) != prf_u64(1, {"a", "bc"}));
  CHECK(prf_u64(1, {"x"}) != prf_u64(2, {"x"}));
  CHECK(prf_u64(7, {"k", "0"}) == prf_u64(7, {"k", "0"}));
}

TEST_CASE("rng is deterministic and substreams are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(a.next_u64() == b.next_u64());
  }
  Rng base(42);
  Rng s1 = base.substream("init");
  Rng s2 = base.substream("mask");
  CHECK(s1.next_u64() != s2.next_u64());

  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
  Rng n(9);
  double mean = 0;
  for (int i = 0; i < 10000; ++i) mean += n.normal();
  mean /= 10000;
  CHECK(std::abs(mean) < 0.05);
}

TEST_CASE("uniform_int covers its range without bias spikes") {
  Rng r(3);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) counts[size_t(r.uniform_int(10))]++;
  for (int c : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

TEST_CASE("atomic file write round-trips and read_lines splits correctly") {
  TmpDir tmp("common");
  auto p = tmp / "x.txt";
  write_file_atomic(p, "one\ntwo\r\nthree");
  CHECK(read_file(p) == "one\ntwo\r\nthree");
  auto lines = read_lines(p);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "one");
  CHECK(lines[1] == "two");
  CHECK(lines[2] == "three");
}

TEST_CASE("f32 little-endian packing round-trips") {
  std::string buf;
  put_f32_le(buf, 1.5f);
  put_f32_le(buf, -0.0f);
  put_f32_le(buf, 3.14159f);
  CHECK(get_f32_le(buf.data()) == 1.5f);
  CHECK(get_f32_le(buf.data() + 4) == -0.0f);
  CHECK(get_f32_le(buf.data() + 8) == 3.14159f);
  // Spot-check the wire bytes for 1.0f = 0x3f800000.
  std::string one;
  put_f32_le(one, 1.0f);
  CHECK(uint8_t(one[0]) == 0x00);
  CHECK(uint8_t(one[3]) == 0x3f);
}
