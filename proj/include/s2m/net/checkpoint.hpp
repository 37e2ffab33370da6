#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2m/core/errors.hpp"
#include "s2m/diffusion/schedule.hpp"
#include "s2m/io/file_util.hpp"
#include "s2m/net/unet.hpp"

// Checkpoint archive "S2M-CKPT-v1": magic line, little-endian u64 header
// length, JSON header (config, schedule, seed, step, tensor table), raw
// tensor blob. Parameters round-trip bit-exactly (float32 payload).

namespace s2m::net {

inline constexpr const char* kCkptMagic = "S2M-CKPT-v1\n";

struct TensorRecord {
  std::string name;
  std::int64_t rows = 0, cols = 0;
  std::string dtype;  // "f32" | "i64"
  std::vector<char> bytes;
};

struct CheckpointFile {
  nlohmann::json meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  void write(const std::filesystem::path& path) const {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint format assumes a little-endian host");
    nlohmann::json header = meta;
    nlohmann::json table = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const auto& t : tensors) {
      table.push_back({{"name", t.name},
                       {"rows", t.rows},
                       {"cols", t.cols},
                       {"dtype", t.dtype},
                       {"offset", offset},
                       {"bytes", static_cast<std::int64_t>(t.bytes.size())}});
      offset += static_cast<std::int64_t>(t.bytes.size());
    }
    header["tensors"] = table;
    const std::string hs = header.dump();

    std::string out;
    out.reserve(std::strlen(kCkptMagic) + 8 + hs.size() + static_cast<std::size_t>(offset));
    out += kCkptMagic;
    std::uint64_t len = hs.size();
    out.append(reinterpret_cast<const char*>(&len), 8);
    out += hs;
    for (const auto& t : tensors)
      if (!t.bytes.empty()) out.append(t.bytes.data(), t.bytes.size());
    io::atomic_write_file(path, out);
  }

  static CheckpointFile read(const std::filesystem::path& path) {
    const std::string bytes = io::read_file(path);
    const std::size_t magic_len = std::strlen(kCkptMagic);
    if (bytes.size() < magic_len + 8 || bytes.compare(0, magic_len, kCkptMagic) != 0)
      throw RuntimeError("not an S2M-CKPT-v1 checkpoint: " + path.string());
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + magic_len, 8);
    const std::size_t header_at = magic_len + 8;
    if (bytes.size() < header_at + len) throw RuntimeError("truncated checkpoint header");
    CheckpointFile f;
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(bytes.substr(header_at, len));
    } catch (const std::exception& e) {
      throw RuntimeError(std::string("bad checkpoint header: ") + e.what());
    }
    const std::size_t blob_at = header_at + len;
    for (const auto& t : header.at("tensors")) {
      TensorRecord rec;
      rec.name = t.at("name").get<std::string>();
      rec.rows = t.at("rows").get<std::int64_t>();
      rec.cols = t.at("cols").get<std::int64_t>();
      rec.dtype = t.at("dtype").get<std::string>();
      const auto offset = static_cast<std::size_t>(t.at("offset").get<std::int64_t>());
      const auto nbytes = static_cast<std::size_t>(t.at("bytes").get<std::int64_t>());
      if (blob_at + offset + nbytes > bytes.size()) throw RuntimeError("truncated checkpoint blob");
      rec.bytes.assign(bytes.data() + blob_at + offset, bytes.data() + blob_at + offset + nbytes);
      f.tensors.push_back(std::move(rec));
    }
    header.erase("tensors");
    f.meta = header;
    return f;
  }
};

inline TensorRecord pack_matrix(const std::string& name, const MatX<float>& m) {
  TensorRecord rec;
  rec.name = name;
  rec.rows = m.rows();
  rec.cols = m.cols();
  rec.dtype = "f32";
  rec.bytes.resize(static_cast<std::size_t>(m.size()) * 4);
  if (!rec.bytes.empty()) std::memcpy(rec.bytes.data(), m.data(), rec.bytes.size());
  return rec;
}

inline void unpack_matrix(const TensorRecord& rec, MatX<float>& out) {
  if (rec.dtype != "f32") throw RuntimeError("tensor " + rec.name + ": expected f32");
  out.resize(rec.rows, rec.cols);
  if (rec.bytes.size() != static_cast<std::size_t>(out.size()) * 4)
    throw RuntimeError("tensor " + rec.name + ": size mismatch");
  if (!rec.bytes.empty()) std::memcpy(out.data(), rec.bytes.data(), rec.bytes.size());
}

inline TensorRecord pack_i64(const std::string& name, const std::vector<std::int64_t>& v) {
  TensorRecord rec;
  rec.name = name;
  rec.rows = static_cast<std::int64_t>(v.size());
  rec.cols = 1;
  rec.dtype = "i64";
  rec.bytes.resize(v.size() * 8);
  if (!rec.bytes.empty()) std::memcpy(rec.bytes.data(), v.data(), rec.bytes.size());
  return rec;
}

inline std::vector<std::int64_t> unpack_i64(const TensorRecord& rec) {
  if (rec.dtype != "i64") throw RuntimeError("tensor " + rec.name + ": expected i64");
  std::vector<std::int64_t> v(static_cast<std::size_t>(rec.rows));
  if (!rec.bytes.empty()) std::memcpy(v.data(), rec.bytes.data(), rec.bytes.size());
  return v;
}

inline nlohmann::json config_to_json(const DenoiserConfig& cfg) {
  return {{"rank", cfg.rank},
          {"in_channels", cfg.in_channels},
          {"base_channels", cfg.base_channels},
          {"depth", cfg.depth},
          {"time_embed_dim", cfg.time_embed_dim},
          {"patch_shape", cfg.patch_shape}};
}

inline DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig cfg;
  cfg.rank = j.at("rank").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.time_embed_dim = j.at("time_embed_dim").get<int>();
  cfg.patch_shape = j.at("patch_shape").get<Shape>();
  return cfg;
}

inline nlohmann::json schedule_to_json(const ScheduleSpec& s) {
  return {{"T", s.T},
          {"beta_start", s.beta_start},
          {"beta_end", s.beta_end},
          {"kind", to_string(s.kind)}};
}

inline ScheduleSpec schedule_from_json(const nlohmann::json& j) {
  ScheduleSpec s;
  s.T = j.at("T").get<int>();
  s.beta_start = j.at("beta_start").get<double>();
  s.beta_end = j.at("beta_end").get<double>();
  s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
  return s;
}

// FNV-1a over the parameter payload; used as the checkpoint identity in
// manifests and sweep reports.
inline std::string checkpoint_digest(const std::vector<TensorRecord>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tensors) {
    if (t.name.rfind("param/", 0) != 0) continue;
    for (char c : t.bytes) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace s2m::net
