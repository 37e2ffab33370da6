#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "s2m/core/errors.hpp"

namespace s2m::io {

namespace fs = std::filesystem;

// Writes via a temp file in the same directory plus rename, so readers never
// observe partial files and re-runs are byte-stable.
inline void atomic_write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeError("short write: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw RuntimeError("cannot rename into place: " + path.string());
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw RuntimeError("read failed: " + path.string());
  return bytes;
}

// Output directories are created on demand; a non-directory or unwritable
// target is a validation failure (checked before any work happens).
inline void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ValidationError("output directory not available: " + dir.string());
  const fs::path probe = dir / ".s2m-write-probe";
  std::ofstream out(probe, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("output directory not writable: " + dir.string());
  out.close();
  fs::remove(probe, ec);
}

}  // namespace s2m::io
