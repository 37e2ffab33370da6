#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"
#include "s2m/sim/simulate.hpp"

// Rendering of label masks into coarse intensity sketches, plus the Gaussian
// smoothing applied before the forward diffusion process.

namespace s2m {

enum class SketchStyle { Nuclei, Membrane };

inline const char* to_string(SketchStyle s) {
  return s == SketchStyle::Nuclei ? "nuclei" : "membrane";
}

inline SketchStyle sketch_style_from_string(const std::string& s) {
  if (s == "nuclei") return SketchStyle::Nuclei;
  if (s == "membrane") return SketchStyle::Membrane;
  throw ValidationError("unknown sketch style '" + s + "' (expected nuclei|membrane)");
}

template <typename S>
struct Sketch {
  Field<S> intensity;  // [0,1]
  SketchStyle style = SketchStyle::Nuclei;
  double sigma_applied = 0.0;  // px; 0 = unsmoothed
};

namespace detail {

// Pixels with an axis-neighbor carrying a different label.
inline std::vector<char> boundary_set(const LabelMask& mask) {
  const int rank = static_cast<int>(mask.shape.size());
  std::vector<char> on(static_cast<std::size_t>(mask.size()), 0);
  const Index depth = rank == 3 ? mask.shape[0] : 1;
  const Index height = mask.shape[rank - 2];
  const Index width = mask.shape[rank - 1];
  Index idx = 0;
  for (Index z = 0; z < depth; ++z) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x, ++idx) {
        const std::int32_t l = mask.labels[idx];
        const bool diff =
            (x > 0 && mask.labels[idx - 1] != l) || (x + 1 < width && mask.labels[idx + 1] != l) ||
            (y > 0 && mask.labels[idx - width] != l) ||
            (y + 1 < height && mask.labels[idx + width] != l) ||
            (rank == 3 &&
             ((z > 0 && mask.labels[idx - width * height] != l) ||
              (z + 1 < depth && mask.labels[idx + width * height] != l)));
        if (diff) on[static_cast<std::size_t>(idx)] = 1;
      }
    }
  }
  return on;
}

inline void dilate_axis_neighbors(std::vector<char>& on, const Shape& shape) {
  const int rank = static_cast<int>(shape.size());
  const Index depth = rank == 3 ? shape[0] : 1;
  const Index height = shape[rank - 2];
  const Index width = shape[rank - 1];
  std::vector<char> src = on;
  Index idx = 0;
  for (Index z = 0; z < depth; ++z) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x, ++idx) {
        if (src[static_cast<std::size_t>(idx)]) continue;
        const bool nb =
            (x > 0 && src[static_cast<std::size_t>(idx - 1)]) ||
            (x + 1 < width && src[static_cast<std::size_t>(idx + 1)]) ||
            (y > 0 && src[static_cast<std::size_t>(idx - width)]) ||
            (y + 1 < height && src[static_cast<std::size_t>(idx + width)]) ||
            (rank == 3 && ((z > 0 && src[static_cast<std::size_t>(idx - width * height)]) ||
                           (z + 1 < depth && src[static_cast<std::size_t>(idx + width * height)])));
        if (nb) on[static_cast<std::size_t>(idx)] = 1;
      }
    }
  }
}

}  // namespace detail

// NUCLEI: each instance filled with its own draw from the foreground range
// (biological brightness variation; the floor of the range is the user's
// handle on how dark cells may get), background one draw from the background
// range. MEMBRANE: only inter-region boundary bands of the configured
// thickness at foreground intensity, interiors at background intensity.
// Intensity draws consume one value per id in 1..max_label, so masks with
// label gaps still render deterministically.
template <typename S>
Sketch<S> mask_to_sketch(const LabelMask& mask, SketchStyle style, const SimParams& params,
                         std::uint64_t seed) {
  params.validate();
  if (mask.size() == 0) throw ValidationError("mask_to_sketch: empty mask");
  Rng rng(derive_seed(seed, 0x736b65746368ull));  // "sketch"

  Sketch<S> sketch;
  sketch.style = style;
  sketch.sigma_applied = 0.0;
  sketch.intensity = Field<S>(mask.shape, Range::Unit01);

  const S bg = static_cast<S>(rng.uniform(params.bg_min, params.bg_max));
  if (style == SketchStyle::Nuclei) {
    const int labels = max_label(mask);
    std::vector<S> fg(static_cast<std::size_t>(labels) + 1, bg);
    for (int k = 1; k <= labels; ++k)
      fg[static_cast<std::size_t>(k)] = static_cast<S>(rng.uniform(params.fg_min, params.fg_max));
    for (Index i = 0; i < mask.size(); ++i)
      sketch.intensity.v[i] = fg[static_cast<std::size_t>(mask.labels[i])];
  } else {
    const S fg = static_cast<S>(rng.uniform(params.fg_min, params.fg_max));
    std::vector<char> band = detail::boundary_set(mask);
    const int rounds = std::max(0, static_cast<int>(std::lround(params.membrane_thickness)) - 1);
    for (int r = 0; r < rounds; ++r) detail::dilate_axis_neighbors(band, mask.shape);
    for (Index i = 0; i < mask.size(); ++i)
      sketch.intensity.v[i] = band[static_cast<std::size_t>(i)] ? fg : bg;
  }
  return sketch;
}

// Separable Gaussian convolution: kernel truncated at radius ceil(3*sigma),
// renormalized to sum 1, reflect boundary handling (edge sample repeated:
// ... c b a | a b c ...). sigma = 0 is the identity.
template <typename S>
Field<S> gaussian_blur(const Field<S>& f, double sigma) {
  if (sigma < 0.0) throw ValidationError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return f;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * (k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  Field<S> out = f;
  const int rank = static_cast<int>(f.shape.size());
  std::vector<double> line;
  for (int axis = 0; axis < rank; ++axis) {
    const Index dim = f.shape[static_cast<std::size_t>(axis)];
    Index stride = 1;
    for (int d = axis + 1; d < rank; ++d) stride *= f.shape[static_cast<std::size_t>(d)];
    const Index block = stride * dim;
    const Index outer_count = out.size() / block;
    line.resize(static_cast<std::size_t>(dim));
    for (Index outer = 0; outer < outer_count; ++outer) {
      for (Index inner = 0; inner < stride; ++inner) {
        const Index base = outer * block + inner;
        for (Index i = 0; i < dim; ++i) line[static_cast<std::size_t>(i)] = out.v[base + i * stride];
        for (Index i = 0; i < dim; ++i) {
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            Index j = i + k;
            while (j < 0 || j >= dim) j = j < 0 ? -j - 1 : 2 * dim - 1 - j;
            acc += kernel[static_cast<std::size_t>(k + radius)] * line[static_cast<std::size_t>(j)];
          }
          out.v[base + i * stride] = static_cast<S>(acc);
        }
      }
    }
  }
  return out;
}

// Gaussian smoothing of a sketch; output clamped to [0,1]. Repeated blurs
// compose, so sigma_applied accumulates as sqrt(s1^2 + s2^2).
template <typename S>
Sketch<S> blur_sketch(const Sketch<S>& sketch, double sigma) {
  if (sigma < 0.0) throw ValidationError("blur_sketch: sigma must be >= 0");
  if (sigma == 0.0) return sketch;
  Sketch<S> out = sketch;
  out.intensity = gaussian_blur(sketch.intensity, sigma);
  out.intensity.v = out.intensity.v.min(S(1)).max(S(0));
  out.sigma_applied = std::hypot(sketch.sigma_applied, sigma);
  return out;
}

}  // namespace s2m
