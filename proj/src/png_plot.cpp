#include "s2m/io/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "s2m/core/errors.hpp"
#include "s2m/io/file_util.hpp"

namespace s2m::io {
namespace {

// 3x5 glyphs, rows top to bottom, 3 bits per row (msb = left pixel).
struct Glyph {
  char ch;
  std::uint8_t rows[5];
};
constexpr Glyph kGlyphs[] = {
    {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
    {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
    {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
    {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b001, 0b010, 0b010}},
    {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
    {'.', {0b000, 0b000, 0b000, 0b000, 0b010}}, {'-', {0b000, 0b000, 0b111, 0b000, 0b000}},
    {'+', {0b000, 0b010, 0b111, 0b010, 0b000}}, {'e', {0b111, 0b100, 0b111, 0b100, 0b111}},
    {'i', {0b010, 0b000, 0b010, 0b010, 0b010}}, {'n', {0b000, 0b110, 0b101, 0b101, 0b101}},
    {'f', {0b011, 0b100, 0b111, 0b100, 0b100}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kGlyphs)
    if (g.ch == c) return &g;
  return nullptr;
}

void put_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.append(type, 4);
  out += data;
  const auto crc = crc32(0, reinterpret_cast<const Bytef*>(out.data() + crc_start),
                         static_cast<uInt>(4 + data.size()));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

std::string format_value(double v) {
  if (std::isnan(v)) return "-";
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

Canvas::Canvas(int w, int h, Rgb bg) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) set(x, y, bg);
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
  const std::size_t at = (static_cast<std::size_t>(y) * w_ + x) * 3;
  px_[at] = c.r;
  px_[at + 1] = c.g;
  px_[at + 2] = c.b;
}

void Canvas::fill_rect(int x0, int y0, int w, int h, Rgb c) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) return;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  for (char ch : s) {
    if (const Glyph* g = find_glyph(ch)) {
      for (int r = 0; r < 5; ++r)
        for (int col = 0; col < 3; ++col)
          if (g->rows[r] & (0b100 >> col))
            fill_rect(x + col * scale, y + r * scale, scale, scale, c);
    }
    x += 4 * scale;
  }
}

int Canvas::text_width(const std::string& s, int scale) {
  return static_cast<int>(s.size()) * 4 * scale;
}

void write_png(const std::filesystem::path& path, const Canvas& canvas) {
  const int w = canvas.width(), h = canvas.height();
  std::string raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + static_cast<std::size_t>(w) * 3));
  for (int y = 0; y < h; ++y) {
    raw.push_back('\0');  // filter type 0
    raw.append(reinterpret_cast<const char*>(canvas.pixels().data() + static_cast<std::size_t>(y) * w * 3),
               static_cast<std::size_t>(w) * 3);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::string comp(comp_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(comp.data()), &comp_len,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw RuntimeError("png: deflate failed");
  comp.resize(comp_len);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(w));
  put_u32_be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", "");
  atomic_write_file(path, out);
}

Rgb colormap(double v) {
  if (!std::isfinite(v)) return {160, 160, 160};
  v = std::clamp(v, 0.0, 1.0);
  // viridis anchors
  static const double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  const double pos = v * 4.0;
  const int k = std::min(3, static_cast<int>(pos));
  const double f = pos - k;
  Rgb c;
  c.r = static_cast<std::uint8_t>(stops[k][0] + f * (stops[k + 1][0] - stops[k][0]));
  c.g = static_cast<std::uint8_t>(stops[k][1] + f * (stops[k + 1][1] - stops[k][1]));
  c.b = static_cast<std::uint8_t>(stops[k][2] + f * (stops[k + 1][2] - stops[k][2]));
  return c;
}

void plot_heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& values,
                  const std::vector<std::string>& row_labels,
                  const std::vector<std::string>& col_labels) {
  const int rows = static_cast<int>(values.size());
  const int cols = rows > 0 ? static_cast<int>(values[0].size()) : 0;
  if (rows == 0 || cols == 0) throw ValidationError("plot_heatmap: empty grid");
  const int cell_w = 64, cell_h = 32, left = 46, top = 8, bottom = 16;
  Canvas canvas(left + cols * cell_w + 8, top + rows * cell_h + bottom);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : values)
    for (double v : row)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!std::isfinite(lo)) {
    lo = 0;
    hi = 1;
  }
  const double span = hi > lo ? hi - lo : 1.0;

  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = values[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const Rgb fill = colormap(std::isfinite(v) ? (v - lo) / span : v);
      const int x = left + c * cell_w, y = top + r * cell_h;
      canvas.fill_rect(x, y, cell_w - 2, cell_h - 2, fill);
      const std::string label = format_value(v);
      const Rgb ink = (std::isfinite(v) && (v - lo) / span > 0.6) ? Rgb{20, 20, 20} : Rgb{235, 235, 235};
      canvas.text(x + 4, y + cell_h / 2 - 3, label, ink);
    }
    canvas.text(4, top + r * cell_h + cell_h / 2 - 3, row_labels[static_cast<std::size_t>(r)],
                {40, 40, 40});
  }
  for (int c = 0; c < cols; ++c)
    canvas.text(left + c * cell_w + 4, top + rows * cell_h + 4,
                col_labels[static_cast<std::size_t>(c)], {40, 40, 40});
  write_png(path, canvas);
}

void plot_lines(const std::filesystem::path& path, const std::vector<double>& xs,
                const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  if (xs.empty() || series.empty()) throw ValidationError("plot_lines: empty input");
  const int w = 560, h = 360, left = 52, right = 12, top = 12, bottom = 26;
  Canvas canvas(w, h);
  double xlo = xs.front(), xhi = xs.front();
  for (double x : xs) {
    xlo = std::min(xlo, x);
    xhi = std::max(xhi, x);
  }
  double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
  for (const auto& [name, ys] : series)
    for (double y : ys)
      if (std::isfinite(y)) {
        ylo = std::min(ylo, y);
        yhi = std::max(yhi, y);
      }
  if (!std::isfinite(ylo)) {
    ylo = 0;
    yhi = 1;
  }
  if (yhi == ylo) yhi = ylo + 1;
  if (xhi == xlo) xhi = xlo + 1;

  auto px = [&](double x) {
    return left + static_cast<int>((x - xlo) / (xhi - xlo) * (w - left - right));
  };
  auto py = [&](double y) {
    return top + static_cast<int>((1.0 - (y - ylo) / (yhi - ylo)) * (h - top - bottom));
  };

  const Rgb axis{60, 60, 60};
  canvas.line(left, top, left, h - bottom, axis);
  canvas.line(left, h - bottom, w - right, h - bottom, axis);
  canvas.text(2, py(yhi) - 2, format_value(yhi), axis);
  canvas.text(2, py(ylo) - 2, format_value(ylo), axis);
  for (double x : xs) {
    canvas.line(px(x), h - bottom, px(x), h - bottom + 3, axis);
    canvas.text(px(x) - 8, h - bottom + 6, format_value(x), axis);
  }

  static const Rgb palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                {148, 103, 189}, {140, 86, 75}};
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ys = series[s].second;
    const Rgb c = palette[s % 6];
    for (std::size_t i = 0; i + 1 < ys.size() && i + 1 < xs.size(); ++i) {
      if (!std::isfinite(ys[i]) || !std::isfinite(ys[i + 1])) continue;
      canvas.line(px(xs[i]), py(ys[i]), px(xs[i + 1]), py(ys[i + 1]), c);
    }
    canvas.text(w - right - 80, top + 8 * static_cast<int>(s) + 2, series[s].first, c);
  }
  write_png(path, canvas);
}

}  // namespace s2m::io
