#include "s2m/io/tiff.hpp"

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/io/file_util.hpp"

namespace s2m::io {
namespace {

// Tags used by the writer (ascending order, as the spec requires).
enum : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kTileWidth = 322,
  kSampleFormat = 339,
};

enum : std::uint16_t { kTypeShort = 3, kTypeLong = 4 };

void put_u16(std::string& out, std::uint16_t v) { out.append(reinterpret_cast<char*>(&v), 2); }
void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<char*>(&v), 4); }

void put_entry(std::string& out, std::uint16_t tag, std::uint16_t type, std::uint32_t value) {
  put_u16(out, tag);
  put_u16(out, type);
  put_u32(out, 1);
  if (type == kTypeShort) {
    put_u16(out, static_cast<std::uint16_t>(value));
    put_u16(out, 0);
  } else {
    put_u32(out, value);
  }
}

void write_pages(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                 std::uint32_t pages, std::uint16_t bits, std::uint16_t sample_format,
                 const std::vector<std::string>& page_data) {
  const std::uint32_t ifd_size = 2 + 10 * 12 + 4;
  const std::uint32_t page_bytes = width * height * (bits / 8);
  const std::uint32_t data_start = 8;
  const std::uint32_t ifd_start = data_start + pages * page_bytes;

  std::string out;
  out.reserve(ifd_start + pages * ifd_size);
  out += "II";
  put_u16(out, 42);
  put_u32(out, ifd_start);  // first IFD after all pixel data
  for (const auto& d : page_data) out += d;
  for (std::uint32_t p = 0; p < pages; ++p) {
    put_u16(out, 10);
    put_entry(out, kImageWidth, kTypeLong, width);
    put_entry(out, kImageLength, kTypeLong, height);
    put_entry(out, kBitsPerSample, kTypeShort, bits);
    put_entry(out, kCompression, kTypeShort, 1);
    put_entry(out, kPhotometric, kTypeShort, 1);
    put_entry(out, kStripOffsets, kTypeLong, data_start + p * page_bytes);
    put_entry(out, kSamplesPerPixel, kTypeShort, 1);
    put_entry(out, kRowsPerStrip, kTypeLong, height);
    put_entry(out, kStripByteCounts, kTypeLong, page_bytes);
    put_entry(out, kSampleFormat, kTypeShort, sample_format);
    put_u32(out, p + 1 < pages ? ifd_start + (p + 1) * ifd_size : 0);
  }
  atomic_write_file(path, out);
}

struct Cursor {
  const std::string& bytes;
  bool swap;

  std::uint16_t u16(std::size_t at) const {
    if (at + 2 > bytes.size()) throw RuntimeError("tiff: truncated file");
    std::uint16_t v;
    std::memcpy(&v, bytes.data() + at, 2);
    if (swap) v = static_cast<std::uint16_t>((v >> 8) | (v << 8));
    return v;
  }
  std::uint32_t u32(std::size_t at) const {
    if (at + 4 > bytes.size()) throw RuntimeError("tiff: truncated file");
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + at, 4);
    if (swap) v = __builtin_bswap32(v);
    return v;
  }
};

struct PageInfo {
  std::uint32_t width = 0, height = 0;
  std::uint16_t bits = 0, sample_format = 1, samples = 1, compression = 1, planar = 1;
  std::uint32_t rows_per_strip = 0;
  std::vector<std::uint32_t> strip_offsets, strip_counts;
  bool tiled = false;
};

// Reads entry values of SHORT/LONG type (inline or offset), count >= 1.
std::vector<std::uint32_t> entry_values(const Cursor& c, std::size_t entry_at) {
  const std::uint16_t type = c.u16(entry_at + 2);
  const std::uint32_t count = c.u32(entry_at + 4);
  const std::size_t elem = type == kTypeShort ? 2 : 4;
  if (type != kTypeShort && type != kTypeLong)
    throw RuntimeError("tiff: unsupported tag value type " + std::to_string(type));
  std::vector<std::uint32_t> vals(count);
  const std::size_t total = elem * count;
  const std::size_t at = total <= 4 ? entry_at + 8 : c.u32(entry_at + 8);
  for (std::uint32_t i = 0; i < count; ++i)
    vals[i] = type == kTypeShort ? c.u16(at + i * 2) : c.u32(at + i * 4);
  return vals;
}

std::vector<PageInfo> read_pages(const Cursor& c, const std::string& name) {
  std::vector<PageInfo> pages;
  std::uint32_t ifd_at = c.u32(4);
  while (ifd_at != 0) {
    if (pages.size() > 4096) throw RuntimeError("tiff: IFD chain too long: " + name);
    PageInfo page;
    const std::uint16_t n = c.u16(ifd_at);
    for (std::uint16_t i = 0; i < n; ++i) {
      const std::size_t at = ifd_at + 2 + static_cast<std::size_t>(i) * 12;
      const std::uint16_t tag = c.u16(at);
      switch (tag) {
        case kImageWidth: page.width = entry_values(c, at)[0]; break;
        case kImageLength: page.height = entry_values(c, at)[0]; break;
        case kBitsPerSample: page.bits = static_cast<std::uint16_t>(entry_values(c, at)[0]); break;
        case kCompression: page.compression = static_cast<std::uint16_t>(entry_values(c, at)[0]); break;
        case kStripOffsets: page.strip_offsets = entry_values(c, at); break;
        case kSamplesPerPixel: page.samples = static_cast<std::uint16_t>(entry_values(c, at)[0]); break;
        case kRowsPerStrip: page.rows_per_strip = entry_values(c, at)[0]; break;
        case kStripByteCounts: page.strip_counts = entry_values(c, at); break;
        case kPlanarConfig: page.planar = static_cast<std::uint16_t>(entry_values(c, at)[0]); break;
        case kSampleFormat: page.sample_format = static_cast<std::uint16_t>(entry_values(c, at)[0]); break;
        case kTileWidth: page.tiled = true; break;
        default: break;  // baseline reader: ignore everything else
      }
    }
    if (page.tiled) throw RuntimeError("tiff: tiled files unsupported: " + name);
    if (page.compression != 1) throw RuntimeError("tiff: compressed files unsupported: " + name);
    if (page.samples != 1 || page.planar != 1)
      throw RuntimeError("tiff: only single-sample grayscale supported: " + name);
    if (page.width == 0 || page.height == 0 || page.bits == 0)
      throw RuntimeError("tiff: missing required tags: " + name);
    if (page.bits != 8 && page.bits != 16 && page.bits != 32)
      throw RuntimeError("tiff: unsupported bit depth " + std::to_string(page.bits) + ": " + name);
    if (page.sample_format != 1 && page.sample_format != 3)
      throw RuntimeError("tiff: unsupported sample format: " + name);
    if (page.sample_format == 3 && page.bits != 32)
      throw RuntimeError("tiff: float samples must be 32-bit: " + name);
    if (page.strip_offsets.empty()) throw RuntimeError("tiff: no strip offsets: " + name);
    if (page.rows_per_strip == 0) page.rows_per_strip = page.height;
    if (page.strip_counts.size() != page.strip_offsets.size()) {
      // Some writers omit byte counts for single-strip files; reconstruct.
      if (page.strip_offsets.size() == 1) {
        page.strip_counts = {page.width * page.height * (page.bits / 8u)};
      } else {
        throw RuntimeError("tiff: strip byte counts missing: " + name);
      }
    }
    pages.push_back(std::move(page));
    ifd_at = c.u32(ifd_at + 2 + static_cast<std::size_t>(n) * 12);
  }
  if (pages.empty()) throw RuntimeError("tiff: no pages: " + name);
  for (const auto& p : pages)
    if (p.width != pages[0].width || p.height != pages[0].height || p.bits != pages[0].bits ||
        p.sample_format != pages[0].sample_format)
      throw RuntimeError("tiff: pages differ in shape or format: " + name);
  return pages;
}

// Decodes all pages into a double buffer (raw sample values).
std::vector<double> decode(const Cursor& c, const std::vector<PageInfo>& pages,
                           const std::string& name) {
  const std::uint64_t per_page = static_cast<std::uint64_t>(pages[0].width) * pages[0].height;
  std::vector<double> out(per_page * pages.size());
  std::size_t w = 0;
  for (const auto& page : pages) {
    const std::size_t bytes_per = page.bits / 8;
    std::uint64_t remaining = per_page;
    for (std::size_t s = 0; s < page.strip_offsets.size(); ++s) {
      std::size_t at = page.strip_offsets[s];
      const std::uint64_t in_strip =
          std::min<std::uint64_t>(remaining, page.strip_counts[s] / bytes_per);
      for (std::uint64_t i = 0; i < in_strip; ++i, at += bytes_per) {
        if (page.bits == 8) {
          if (at >= c.bytes.size()) throw RuntimeError("tiff: truncated pixel data: " + name);
          out[w++] = static_cast<unsigned char>(c.bytes[at]);
        } else if (page.bits == 16) {
          out[w++] = c.u16(at);
        } else if (page.sample_format == 3) {
          const std::uint32_t raw = c.u32(at);
          float f;
          std::memcpy(&f, &raw, 4);
          out[w++] = static_cast<double>(f);
        } else {
          out[w++] = c.u32(at);
        }
      }
      remaining -= in_strip;
    }
    if (remaining != 0) throw RuntimeError("tiff: pixel data incomplete: " + name);
  }
  return out;
}

struct Decoded {
  Shape shape;
  std::uint16_t bits = 0, sample_format = 1;
  std::vector<double> values;
};

Decoded read_any(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw RuntimeError("tiff: file too small: " + path.string());
  bool swap;
  if (bytes[0] == 'I' && bytes[1] == 'I')
    swap = false;
  else if (bytes[0] == 'M' && bytes[1] == 'M')
    swap = true;
  else
    throw RuntimeError("tiff: bad byte-order mark: " + path.string());
  Cursor c{bytes, swap};
  if (c.u16(2) != 42) throw RuntimeError("tiff: bad magic: " + path.string());
  const auto pages = read_pages(c, path.string());
  Decoded d;
  d.bits = pages[0].bits;
  d.sample_format = pages[0].sample_format;
  d.values = decode(c, pages, path.string());
  if (pages.size() == 1)
    d.shape = {static_cast<Index>(pages[0].height), static_cast<Index>(pages[0].width)};
  else
    d.shape = {static_cast<Index>(pages.size()), static_cast<Index>(pages[0].height),
               static_cast<Index>(pages[0].width)};
  return d;
}

}  // namespace

void write_tiff(const std::filesystem::path& path, const Field<float>& field) {
  require_valid_shape(field.shape, "write_tiff");
  const int rank = static_cast<int>(field.shape.size());
  const auto width = static_cast<std::uint32_t>(field.shape[static_cast<std::size_t>(rank - 1)]);
  const auto height = static_cast<std::uint32_t>(field.shape[static_cast<std::size_t>(rank - 2)]);
  const std::uint32_t pages = rank == 3 ? static_cast<std::uint32_t>(field.shape[0]) : 1;
  const Index per_page = static_cast<Index>(width) * height;
  std::vector<std::string> data(pages);
  for (std::uint32_t p = 0; p < pages; ++p) {
    data[p].resize(static_cast<std::size_t>(per_page) * 4);
    std::memcpy(data[p].data(), field.v.data() + static_cast<Index>(p) * per_page,
                data[p].size());
  }
  write_pages(path, width, height, pages, 32, 3, data);
}

void write_tiff(const std::filesystem::path& path, const LabelMask& mask) {
  require_valid_shape(mask.shape, "write_tiff");
  const int rank = static_cast<int>(mask.shape.size());
  const auto width = static_cast<std::uint32_t>(mask.shape[static_cast<std::size_t>(rank - 1)]);
  const auto height = static_cast<std::uint32_t>(mask.shape[static_cast<std::size_t>(rank - 2)]);
  const std::uint32_t pages = rank == 3 ? static_cast<std::uint32_t>(mask.shape[0]) : 1;
  const Index per_page = static_cast<Index>(width) * height;
  std::vector<std::string> data(pages);
  for (std::uint32_t p = 0; p < pages; ++p) {
    data[p].resize(static_cast<std::size_t>(per_page) * 2);
    for (Index i = 0; i < per_page; ++i) {
      const std::int32_t v = mask.labels[static_cast<Index>(p) * per_page + i];
      if (v < 0 || v > 65535)
        throw ValidationError("write_tiff: label " + std::to_string(v) + " outside u16 range");
      const auto u = static_cast<std::uint16_t>(v);
      std::memcpy(data[p].data() + i * 2, &u, 2);
    }
  }
  write_pages(path, width, height, pages, 16, 1, data);
}

Field<float> read_tiff_float(const std::filesystem::path& path) {
  const Decoded d = read_any(path);
  Field<float> f(d.shape, Range::Unit01);
  double scale = 1.0;
  if (d.sample_format == 1) scale = d.bits == 8 ? 1.0 / 255.0 : (d.bits == 16 ? 1.0 / 65535.0 : 1.0);
  for (Index i = 0; i < f.size(); ++i)
    f.v[i] = static_cast<float>(d.values[static_cast<std::size_t>(i)] * scale);
  return f;
}

TiffInfo probe_tiff(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8) throw RuntimeError("tiff: file too small: " + path.string());
  bool swap;
  if (bytes[0] == 'I' && bytes[1] == 'I')
    swap = false;
  else if (bytes[0] == 'M' && bytes[1] == 'M')
    swap = true;
  else
    throw RuntimeError("tiff: bad byte-order mark: " + path.string());
  Cursor c{bytes, swap};
  if (c.u16(2) != 42) throw RuntimeError("tiff: bad magic: " + path.string());
  const auto pages = read_pages(c, path.string());
  TiffInfo info;
  info.bits = pages[0].bits;
  info.sample_format = pages[0].sample_format;
  if (pages.size() == 1)
    info.shape = {static_cast<Index>(pages[0].height), static_cast<Index>(pages[0].width)};
  else
    info.shape = {static_cast<Index>(pages.size()), static_cast<Index>(pages[0].height),
                  static_cast<Index>(pages[0].width)};
  return info;
}

LabelMask read_tiff_labels(const std::filesystem::path& path) {
  const Decoded d = read_any(path);
  if (d.sample_format != 1 || d.bits > 16)
    throw RuntimeError("tiff: label masks must be 8- or 16-bit unsigned: " + path.string());
  LabelMask m(d.shape);
  for (Index i = 0; i < m.size(); ++i)
    m.labels[i] = static_cast<std::int32_t>(d.values[static_cast<std::size_t>(i)]);
  return m;
}

}  // namespace s2m::io
