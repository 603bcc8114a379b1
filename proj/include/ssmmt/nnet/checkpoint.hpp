#pragma once

// Checkpoint archive: one JSON header line
//   {"version":"ssmmt-ckpt-1","config":{...},"seed":...,"step":...,
//    "tensors":[{"name":...,"dims":[...]},...]}
// followed by each listed tensor's float32 little-endian row-major data in
// header order (names sorted). save -> load -> save is byte-identical.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ssmmt/common.hpp"
#include "ssmmt/nnet/transformer.hpp"

namespace ssmmt {

constexpr std::string_view kCheckpointVersion = "ssmmt-ckpt-1";

struct Checkpoint {
  nlohmann::json config;
  ParamSet params;
  uint64_t seed = 0;
  int64_t step = 0;
};

inline std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["config"] = ckpt.config;
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params) {
    header["tensors"].push_back({{"name", name}, {"dims", t.shape}});
  }
  std::string out = header.dump() + "\n";
  for (const auto& [name, t] : ckpt.params) {
    for (float v : t.data) put_f32_le(out, v);
  }
  return out;
}

inline Checkpoint checkpoint_from_bytes(std::string_view bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DataError("checkpoint: missing header line");
  nlohmann::json header = nlohmann::json::parse(bytes.substr(0, nl), nullptr, false);
  if (header.is_discarded()) throw DataError("checkpoint: invalid header JSON");
  if (header.value("version", "") != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version '" + header.value("version", "") + "'");
  }
  Checkpoint ckpt;
  ckpt.config = header.at("config");
  ckpt.seed = header.at("seed").get<uint64_t>();
  ckpt.step = header.at("step").get<int64_t>();
  size_t off = nl + 1;
  for (const auto& td : header.at("tensors")) {
    std::string name = td.at("name").get<std::string>();
    std::vector<int> dims = td.at("dims").get<std::vector<int>>();
    size_t n = 1;
    for (int d : dims) n *= size_t(d);
    if (off + n * 4 > bytes.size()) throw DataError("checkpoint: truncated tensor " + name);
    Tensor<float> t;
    t.shape = dims;
    t.data.resize(n);
    for (size_t i = 0; i < n; ++i) t.data[i] = get_f32_le(bytes.data() + off + 4 * i);
    off += n * 4;
    ckpt.params.emplace(std::move(name), std::move(t));
  }
  if (off != bytes.size()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_bytes(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bytes(read_file(path));
}

// Copies checkpoint tensors into `params` where names match. Shape mismatch
// on a shared name is an error (e.g. a vocab-size change); names present in
// only one side are left alone.
inline int load_overlapping(ParamSet& params, const ParamSet& loaded) {
  int n = 0;
  for (auto& [name, t] : params) {
    auto it = loaded.find(name);
    if (it == loaded.end()) continue;
    if (!it->second.same_shape(t)) {
      throw DataError("checkpoint: shape mismatch for " + name + " (" + t.shape_str() +
                      " vs " + it->second.shape_str() + ")");
    }
    t = it->second;
    ++n;
  }
  return n;
}

}  // namespace ssmmt
