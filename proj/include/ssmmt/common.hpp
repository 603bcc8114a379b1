#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssmmt/sha256.hpp"

namespace ssmmt {

// Error categories map onto the CLI exit codes: usage/config -> 1,
// data/format -> 2, training divergence -> 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic RNG with explicit seeding and named substreams. All
// transforms are implemented here (not via std:: distributions, whose
// sequences are implementation-defined) so results are byte-stable.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

  uint64_t seed() const { return seed_; }

  Rng substream(std::string_view name) const {
    return Rng(prf_u64(seed_, {"rng-substream", name}));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw UsageError("uniform_int: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Deterministic Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---- small IO helpers ----

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out.write(content.data(), std::streamsize(content.size()));
    if (!out) throw DataError("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::string blob = read_file(path);
  std::vector<std::string> lines;
  std::string cur;
  for (char c : blob) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

// float32 little-endian packing for the binary file formats.
inline void put_f32_le(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(char(bits & 0xff));
  out.push_back(char((bits >> 8) & 0xff));
  out.push_back(char((bits >> 16) & 0xff));
  out.push_back(char((bits >> 24) & 0xff));
}

inline float get_f32_le(const char* p) {
  uint32_t bits = uint32_t(uint8_t(p[0])) | uint32_t(uint8_t(p[1])) << 8 |
                  uint32_t(uint8_t(p[2])) << 16 | uint32_t(uint8_t(p[3])) << 24;
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_u32_le(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32_le(const char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(p[i])) << (8 * i);
  return v;
}

inline void put_i64_le(std::string& out, int64_t v) {
  uint64_t u = uint64_t(v);
  for (int i = 0; i < 8; ++i) out.push_back(char((u >> (8 * i)) & 0xff));
}

inline int64_t get_i64_le(const char* p) {
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= uint64_t(uint8_t(p[i])) << (8 * i);
  return int64_t(u);
}

// Deterministic timestamp for reproducible outputs: honors SOURCE_DATE_EPOCH
// when set, else 0 (the unix epoch).
inline int64_t deterministic_timestamp() {
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    return std::strtoll(env, nullptr, 10);
  }
  return 0;
}

}  // namespace ssmmt
