#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

// Plot emission without a plotting backend: an RGB canvas with a tiny 3x5
// glyph set (digits, '-', '.', '+', 'e'), written as 8-bit RGB PNG via zlib.
// CSV files carry the exact numbers; these plots are for quick inspection.

namespace s2m::io {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

class Canvas {
 public:
  Canvas(int w, int h, Rgb bg = {255, 255, 255});
  int width() const { return w_; }
  int height() const { return h_; }
  void set(int x, int y, Rgb c);
  void fill_rect(int x0, int y0, int w, int h, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  static int text_width(const std::string& s, int scale = 1);
  const std::vector<std::uint8_t>& pixels() const { return px_; }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

void write_png(const std::filesystem::path& path, const Canvas& canvas);

// Piecewise-linear viridis-style map of v in [0,1].
Rgb colormap(double v);

// Grid heatmap with per-cell value annotations. values is row-major
// [row][col]; non-finite cells render gray.
void plot_heatmap(const std::filesystem::path& path,
                  const std::vector<std::vector<double>>& values,
                  const std::vector<std::string>& row_labels,
                  const std::vector<std::string>& col_labels);

// Simple multi-series line plot over shared x values.
void plot_lines(const std::filesystem::path& path, const std::vector<double>& xs,
                const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace s2m::io
