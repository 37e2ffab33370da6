#pragma once

#include <filesystem>

#include "s2m/core/field.hpp"

// Minimal baseline TIFF: grayscale, uncompressed strips, 8/16-bit unsigned or
// 32-bit float samples, multi-page for rank-3 fields (one page per z-slice).
// Writes little-endian; reads either byte order. Enough for the dataset
// layout here and for ImageJ/tifffile interoperability.

namespace s2m::io {

// 32-bit float samples, values written as-is.
void write_tiff(const std::filesystem::path& path, const Field<float>& field);

// 16-bit unsigned labels; values must be within [0, 65535].
void write_tiff(const std::filesystem::path& path, const LabelMask& mask);

// Any supported sample type; unsigned ints are rescaled to [0,1] (u8/255,
// u16/65535), floats are returned raw.
Field<float> read_tiff_float(const std::filesystem::path& path);

// Integer files only (8/16-bit), raw label values.
LabelMask read_tiff_labels(const std::filesystem::path& path);

struct TiffInfo {
  Shape shape;
  int bits = 0;
  int sample_format = 0;  // 1 = unsigned int, 3 = float
};

// Shape/dtype without decoding pixels.
TiffInfo probe_tiff(const std::filesystem::path& path);

}  // namespace s2m::io
