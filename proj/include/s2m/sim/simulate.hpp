#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"

// Instance-mask simulators for cellular structures: non-overlapping ellipse /
// ellipsoid packings for nuclei, nearest-center tessellations for membranes.
// Everything is a pure function of (params, seed).

namespace s2m {

struct SimParams {
  Shape image_shape = {128, 128};
  int min_instances = 8;
  int max_instances = 16;
  double radius_min = 6.0;  // px
  double radius_max = 12.0;
  // Semi-axis ratio; axes are (r*sqrt(e), r/sqrt(e)) so area stays pi*r^2 and
  // e = 1 is the exact circle.
  double ecc_min = 1.0;
  double ecc_max = 1.6;
  double fg_min = 0.55;  // sketch foreground intensity range
  double fg_max = 0.95;
  double bg_min = 0.03;
  double bg_max = 0.10;
  double membrane_thickness = 1.0;  // px
  int max_attempts = 50;            // placement attempts per instance
  std::uint64_t seed = 0;

  void validate() const {
    require_valid_shape(image_shape, "SimParams.image_shape");
    if (min_instances < 0 || max_instances < min_instances)
      throw ValidationError("SimParams: need 0 <= min_instances <= max_instances");
    if (!(radius_min >= 1.0 && radius_max >= radius_min))
      throw ValidationError("SimParams: need 1 <= radius_min <= radius_max (px)");
    if (!(ecc_min >= 1.0 && ecc_max >= ecc_min))
      throw ValidationError("SimParams: need 1 <= ecc_min <= ecc_max");
    if (!(fg_min <= fg_max && fg_min >= 0.0 && fg_max <= 1.0))
      throw ValidationError("SimParams: foreground range must be within [0,1]");
    if (!(bg_min <= bg_max && bg_min >= 0.0 && bg_max <= 1.0))
      throw ValidationError("SimParams: background range must be within [0,1]");
    if (!(membrane_thickness >= 1.0)) throw ValidationError("SimParams: membrane thickness >= 1 px");
    if (max_attempts < 1) throw ValidationError("SimParams: max_attempts >= 1");
  }
};

// Filled when placement cannot reach the requested instance count.
struct PlacementInfo {
  int requested = 0;
  int placed = 0;
};

namespace detail {

// 3x3 rotation from a uniform random quaternion (Shoemake).
inline void random_rotation3(Rng& rng, double R[3][3]) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double two_pi = 6.283185307179586476925286766559;
  const double qx = std::sqrt(1.0 - u1) * std::sin(two_pi * u2);
  const double qy = std::sqrt(1.0 - u1) * std::cos(two_pi * u2);
  const double qz = std::sqrt(u1) * std::sin(two_pi * u3);
  const double qw = std::sqrt(u1) * std::cos(two_pi * u3);
  R[0][0] = 1 - 2 * (qy * qy + qz * qz);
  R[0][1] = 2 * (qx * qy - qz * qw);
  R[0][2] = 2 * (qx * qz + qy * qw);
  R[1][0] = 2 * (qx * qy + qz * qw);
  R[1][1] = 1 - 2 * (qx * qx + qz * qz);
  R[1][2] = 2 * (qy * qz - qx * qw);
  R[2][0] = 2 * (qx * qz - qy * qw);
  R[2][1] = 2 * (qy * qz + qx * qw);
  R[2][2] = 1 - 2 * (qx * qx + qy * qy);
}

}  // namespace detail

// K non-overlapping filled ellipses (rank 2) or ellipsoids (rank 3) with
// randomized centers, sizes and orientations. Instances that cannot be placed
// without overlap within max_attempts are dropped; the outcome is reported via
// `info`, never thrown.
inline LabelMask simulate_nuclei_mask(const SimParams& params, PlacementInfo* info = nullptr) {
  params.validate();
  LabelMask mask(params.image_shape);
  Rng rng(derive_seed(params.seed, 0x6e75636c6569ull));  // "nuclei"
  const int rank = static_cast<int>(params.image_shape.size());
  const int requested = static_cast<int>(rng.uniform_int(params.min_instances, params.max_instances));

  int placed = 0;
  std::vector<Index> candidate;
  for (int k = 0; k < requested; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < params.max_attempts && !ok; ++attempt) {
      const double r = rng.uniform(params.radius_min, params.radius_max);
      const double e = rng.uniform(params.ecc_min, params.ecc_max);
      const double a = r * std::sqrt(e);  // major semi-axis
      double center[3] = {0, 0, 0};
      for (int d = 0; d < rank; ++d) {
        const double dim = static_cast<double>(params.image_shape[d]);
        const double margin = std::min(a, (dim - 1.0) / 2.0);
        center[d] = rng.uniform(margin, dim - 1.0 - margin);
      }

      // Axes in the instance frame and the rotation taking frame -> grid.
      double axes2[3];
      double R[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
      if (rank == 2) {
        const double theta = rng.uniform(0.0, 6.283185307179586476925286766559);
        R[0][0] = std::cos(theta);
        R[0][1] = -std::sin(theta);
        R[1][0] = std::sin(theta);
        R[1][1] = std::cos(theta);
        axes2[0] = a * a;
        axes2[1] = (r / std::sqrt(e)) * (r / std::sqrt(e));
        axes2[2] = 1.0;
      } else {
        detail::random_rotation3(rng, R);
        axes2[0] = a * a;
        axes2[1] = r * r;
        axes2[2] = (r / std::sqrt(e)) * (r / std::sqrt(e));
      }

      // Rasterize over the bounding box; pixel p is inside when the frame
      // coordinates satisfy sum (u_d / axis_d)^2 <= 1.
      Index lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
      for (int d = 0; d < rank; ++d) {
        lo[d] = std::max<Index>(0, static_cast<Index>(std::floor(center[d] - a)));
        hi[d] = std::min<Index>(params.image_shape[d] - 1, static_cast<Index>(std::ceil(center[d] + a)));
      }
      candidate.clear();
      bool overlap = false;
      const Index z0 = rank == 3 ? lo[0] : 0, z1 = rank == 3 ? hi[0] : 0;
      for (Index z = z0; z <= z1 && !overlap; ++z) {
        for (Index y = lo[rank - 2]; y <= hi[rank - 2] && !overlap; ++y) {
          for (Index x = lo[rank - 1]; x <= hi[rank - 1]; ++x) {
            double p[3] = {0, 0, 0};
            if (rank == 2) {
              p[0] = static_cast<double>(y) - center[0];
              p[1] = static_cast<double>(x) - center[1];
            } else {
              p[0] = static_cast<double>(z) - center[0];
              p[1] = static_cast<double>(y) - center[1];
              p[2] = static_cast<double>(x) - center[2];
            }
            double q = 0.0;
            for (int d = 0; d < rank; ++d) {
              double u = 0.0;
              for (int d2 = 0; d2 < rank; ++d2) u += R[d2][d] * p[d2];  // R^T p
              q += u * u / axes2[d];
            }
            if (q > 1.0) continue;
            const Index idx = rank == 2 ? flat_index(params.image_shape, y, x)
                                        : flat_index(params.image_shape, z, y, x);
            if (mask.labels[idx] != 0) {
              overlap = true;
              break;
            }
            candidate.push_back(idx);
          }
        }
      }
      if (overlap || candidate.empty()) continue;
      ++placed;
      for (Index idx : candidate) mask.labels[idx] = placed;
      ok = true;
    }
  }
  if (info) *info = {requested, placed};
  return mask;
}

// Space-filling tessellation: every pixel joins the nearest of K random
// centers (squared Euclidean distance on the integer grid, ties to the lowest
// instance id). With K >= 1 the labels partition the field. centers_out, when
// given, receives the K growth centers (id k+1 grows from centers_out[k]).
inline LabelMask simulate_membrane_mask(const SimParams& params,
                                        std::vector<std::array<Index, 3>>* centers_out = nullptr) {
  params.validate();
  LabelMask mask(params.image_shape);
  Rng rng(derive_seed(params.seed, 0x6d656d6272616e65ull));  // "membrane"
  const int rank = static_cast<int>(params.image_shape.size());
  const Index n = mask.size();
  int k = static_cast<int>(rng.uniform_int(params.min_instances, params.max_instances));
  k = static_cast<int>(std::min<Index>(k, n));
  if (centers_out) centers_out->clear();
  if (k == 0) return mask;

  std::vector<std::array<Index, 3>> centers;
  centers.reserve(static_cast<std::size_t>(k));
  while (static_cast<int>(centers.size()) < k) {
    std::array<Index, 3> c = {0, 0, 0};
    for (int d = 0; d < rank; ++d) c[d] = rng.uniform_int(0, params.image_shape[d] - 1);
    bool dup = false;
    for (const auto& other : centers)
      if (other == c) {
        dup = true;
        break;
      }
    if (!dup) centers.push_back(c);
  }
  if (centers_out) *centers_out = centers;

  const Index depth = rank == 3 ? params.image_shape[0] : 1;
  const Index height = params.image_shape[rank - 2];
  const Index width = params.image_shape[rank - 1];
  Index idx = 0;
  for (Index z = 0; z < depth; ++z) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x, ++idx) {
        std::int64_t best = -1;
        int best_id = 0;
        for (int c = 0; c < k; ++c) {
          const auto& ctr = centers[static_cast<std::size_t>(c)];
          std::int64_t d2;
          if (rank == 2) {
            const std::int64_t dy = y - ctr[0], dx = x - ctr[1];
            d2 = dy * dy + dx * dx;
          } else {
            const std::int64_t dz = z - ctr[0], dy = y - ctr[1], dx = x - ctr[2];
            d2 = dz * dz + dy * dy + dx * dx;
          }
          if (best < 0 || d2 < best) {  // strict < keeps the lowest id on ties
            best = d2;
            best_id = c + 1;
          }
        }
        mask.labels[idx] = best_id;
      }
    }
  }
  return mask;
}

}  // namespace s2m
