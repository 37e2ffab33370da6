#include <doctest.h>

#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "s2m/sim/simulate.hpp"
#include "s2m/sim/sketch.hpp"

using namespace s2m;

TEST_CASE("nuclei simulator: empty instance range gives an all-background mask") {
  SimParams p;
  p.image_shape = {64, 64};
  p.min_instances = 0;
  p.max_instances = 0;
  const auto mask = simulate_nuclei_mask(p);
  CHECK(max_label(mask) == 0);
  CHECK((mask.labels == 0).all());
}

TEST_CASE("nuclei simulator: unit-eccentricity instance rasterizes as a circle") {
  SimParams p;
  p.image_shape = {64, 64};
  p.min_instances = 1;
  p.max_instances = 1;
  p.radius_min = 5.0;
  p.radius_max = 5.0;
  p.ecc_min = 1.0;
  p.ecc_max = 1.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    p.seed = seed;
    PlacementInfo info;
    const auto mask = simulate_nuclei_mask(p, &info);
    CHECK(info.requested == 1);
    CHECK(info.placed == 1);
    CHECK(max_label(mask) == 1);
    const auto count = static_cast<double>((mask.labels == 1).count());
    const double circle = 3.14159265358979323846 * 25.0;
    CHECK(count > circle * 0.9);
    CHECK(count < circle * 1.1);
  }
}

TEST_CASE("nuclei simulator is deterministic in the seed") {
  SimParams p;
  p.image_shape = {96, 96};
  p.seed = 1234;
  const auto a = simulate_nuclei_mask(p);
  const auto b = simulate_nuclei_mask(p);
  CHECK((a.labels == b.labels).all());
  p.seed = 1235;
  const auto c = simulate_nuclei_mask(p);
  CHECK(!(c.labels == a.labels).all());
}

TEST_CASE("nuclei simulator reports under-placement instead of failing") {
  SimParams p;
  p.image_shape = {32, 32};
  p.min_instances = 40;
  p.max_instances = 40;
  p.radius_min = 8.0;
  p.radius_max = 8.0;
  p.max_attempts = 5;
  p.seed = 7;
  PlacementInfo info;
  const auto mask = simulate_nuclei_mask(p, &info);
  CHECK(info.requested == 40);
  CHECK(info.placed < 40);
  CHECK(max_label(mask) == info.placed);
  for (int k = 1; k <= info.placed; ++k) CHECK((mask.labels == k).count() > 0);
}

TEST_CASE("nuclei simulator handles rank 3") {
  SimParams p;
  p.image_shape = {20, 24, 24};
  p.min_instances = 3;
  p.max_instances = 5;
  p.radius_min = 3.0;
  p.radius_max = 4.0;
  p.seed = 3;
  const auto mask = simulate_nuclei_mask(p);
  CHECK(mask.rank() == 3);
  for (int k = 1; k <= max_label(mask); ++k) CHECK((mask.labels == k).count() > 0);
}

TEST_CASE("membrane simulator: one seed point fills the field") {
  SimParams p;
  p.image_shape = {32, 32};
  p.min_instances = 1;
  p.max_instances = 1;
  p.seed = 5;
  const auto mask = simulate_membrane_mask(p);
  CHECK((mask.labels == 1).all());
}

TEST_CASE("membrane simulator matches the nearest-center oracle and partitions the field") {
  SimParams p;
  p.image_shape = {128, 128};
  p.min_instances = 9;
  p.max_instances = 9;
  p.seed = 21;
  std::vector<std::array<Index, 3>> centers;
  const auto mask = simulate_membrane_mask(p, &centers);
  REQUIRE(centers.size() == 9);
  CHECK(max_label(mask) == 9);
  CHECK((mask.labels > 0).all());
  for (int k = 1; k <= 9; ++k) CHECK((mask.labels == k).count() > 0);
  // Brute-force oracle: nearest center wins, equal distances go to the lowest id.
  for (Index y = 0; y < 128; ++y) {
    for (Index x = 0; x < 128; ++x) {
      std::int64_t best = -1;
      int best_id = 0;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const std::int64_t dy = y - centers[c][0], dx = x - centers[c][1];
        const std::int64_t d2 = dy * dy + dx * dx;
        if (best < 0 || d2 < best) {
          best = d2;
          best_id = static_cast<int>(c) + 1;
        }
      }
      REQUIRE(mask.labels[y * 128 + x] == best_id);
    }
  }
}

TEST_CASE("membrane simulator is deterministic and supports rank 3") {
  SimParams p;
  p.image_shape = {12, 16, 16};
  p.min_instances = 4;
  p.max_instances = 6;
  p.seed = 77;
  const auto a = simulate_membrane_mask(p);
  const auto b = simulate_membrane_mask(p);
  CHECK((a.labels == b.labels).all());
  CHECK((a.labels > 0).all());
}

TEST_CASE("mask_to_sketch: all-background mask with a pinned background value") {
  SimParams p;
  p.image_shape = {16, 16};
  p.bg_min = 0.05;
  p.bg_max = 0.05;
  LabelMask mask(p.image_shape);
  const auto sketch = mask_to_sketch<double>(mask, SketchStyle::Nuclei, p, 9);
  CHECK((sketch.intensity.v == 0.05).all());
  CHECK(sketch.sigma_applied == 0.0);
}

TEST_CASE("mask_to_sketch: pinned nuclei foreground and background levels") {
  SimParams p;
  p.image_shape = {16, 16};
  p.fg_min = 0.8;
  p.fg_max = 0.8;
  p.bg_min = 0.1;
  p.bg_max = 0.1;
  LabelMask mask(p.image_shape);
  for (Index y = 4; y < 9; ++y)
    for (Index x = 5; x < 10; ++x) mask.labels[y * 16 + x] = 1;
  const auto sketch = mask_to_sketch<double>(mask, SketchStyle::Nuclei, p, 3);
  for (Index i = 0; i < mask.size(); ++i)
    CHECK(sketch.intensity.v[i] == (mask.labels[i] == 1 ? 0.8 : 0.1));
}

TEST_CASE("nuclei sketch foreground support equals the mask support pre-blur") {
  SimParams p;
  p.image_shape = {64, 64};
  p.bg_min = 0.1;
  p.bg_max = 0.1;
  p.fg_min = 0.5;
  p.fg_max = 0.9;
  p.seed = 31;
  const auto mask = simulate_nuclei_mask(p);
  const auto sketch = mask_to_sketch<double>(mask, SketchStyle::Nuclei, p, 8);
  for (Index i = 0; i < mask.size(); ++i) {
    if (mask.labels[i] > 0)
      CHECK(sketch.intensity.v[i] >= 0.5);
    else
      CHECK(sketch.intensity.v[i] == 0.1);
  }
}

TEST_CASE("membrane sketch at thickness 1 equals the 4-neighbor boundary oracle") {
  SimParams p;
  p.image_shape = {16, 16};
  p.membrane_thickness = 1.0;
  p.fg_min = 0.9;
  p.fg_max = 0.9;
  p.bg_min = 0.1;
  p.bg_max = 0.1;
  LabelMask mask(p.image_shape);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x) mask.labels[y * 16 + x] = x < 8 ? 1 : 2;
  const auto sketch = mask_to_sketch<double>(mask, SketchStyle::Membrane, p, 5);
  for (Index y = 0; y < 16; ++y) {
    for (Index x = 0; x < 16; ++x) {
      bool boundary = false;
      const int l = mask.labels[y * 16 + x];
      if (x > 0 && mask.labels[y * 16 + x - 1] != l) boundary = true;
      if (x < 15 && mask.labels[y * 16 + x + 1] != l) boundary = true;
      if (y > 0 && mask.labels[(y - 1) * 16 + x] != l) boundary = true;
      if (y < 15 && mask.labels[(y + 1) * 16 + x] != l) boundary = true;
      CHECK(sketch.intensity.v[y * 16 + x] == (boundary ? 0.9 : 0.1));
    }
  }
}

TEST_CASE("membrane thickness widens the band") {
  SimParams p;
  p.image_shape = {32, 32};
  p.seed = 2;
  p.min_instances = 4;
  p.max_instances = 4;
  const auto mask = simulate_membrane_mask(p);
  p.membrane_thickness = 1.0;
  const auto thin = mask_to_sketch<double>(mask, SketchStyle::Membrane, p, 5);
  p.membrane_thickness = 3.0;
  const auto thick = mask_to_sketch<double>(mask, SketchStyle::Membrane, p, 5);
  const auto fg_count = [&](const Sketch<double>& s) {
    Index n = 0;
    for (Index i = 0; i < s.intensity.size(); ++i)
      if (s.intensity.v[i] > 0.5) ++n;
    return n;
  };
  CHECK(fg_count(thick) > fg_count(thin));
}

TEST_CASE("unknown style strings are rejected") {
  CHECK_THROWS_AS(sketch_style_from_string("blobs"), ValidationError);
  CHECK(sketch_style_from_string("nuclei") == SketchStyle::Nuclei);
  CHECK(sketch_style_from_string("membrane") == SketchStyle::Membrane);
}

TEST_CASE("blur: sigma 0 is the identity") {
  Rng rng(4);
  Sketch<double> s;
  s.intensity = Field<double>({16, 16});
  s.intensity.v = rng.normal_array<double>(256).abs().min(1.0);
  const auto out = blur_sketch(s, 0.0);
  CHECK((out.intensity.v == s.intensity.v).all());
}

TEST_CASE("blur: constant fields stay constant") {
  const auto c = Field<double>::constant({20, 20}, 0.37);
  const auto out = gaussian_blur(c, 2.5);
  CHECK((out.v - 0.37).abs().maxCoeff() < 1e-12);
}

TEST_CASE("blur: unit impulse matches the explicit kernel oracle") {
  Field<double> f = Field<double>::zeros({33, 33});
  f.v[16 * 33 + 16] = 1.0;
  const double sigma = 1.0;
  const auto out = gaussian_blur(f, sigma);

  // Direct kernel evaluation, truncated at radius ceil(3 sigma), normalized.
  const int radius = 3;
  double kernel[7], sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += kernel[k + radius];
  }
  for (double& w : kernel) w /= sum;
  const double center = kernel[radius] * kernel[radius];
  CHECK(std::abs(out.v[16 * 33 + 16] - center) < 1e-10);
  // an off-center sample too
  CHECK(std::abs(out.v[(16 + 1) * 33 + (16 + 2)] - kernel[radius + 1] * kernel[radius + 2]) < 1e-10);
}

TEST_CASE("blur conserves the mean under reflect padding") {
  Rng rng(6);
  Field<double> f({24, 17});
  for (Index i = 0; i < f.size(); ++i) f.v[i] = rng.uniform();
  for (const double sigma : {0.7, 2.0, 5.0}) {
    const auto out = gaussian_blur(f, sigma);
    CHECK(std::abs(out.v.mean() - f.v.mean()) < 1e-6);
  }
}

TEST_CASE("blur works on rank-3 fields") {
  Rng rng(8);
  Field<double> f({6, 10, 12});
  for (Index i = 0; i < f.size(); ++i) f.v[i] = rng.uniform();
  const auto out = gaussian_blur(f, 1.2);
  CHECK(out.shape == f.shape);
  CHECK(std::abs(out.v.mean() - f.v.mean()) < 1e-6);
}

TEST_CASE("blur rejects negative sigma and tracks sigma_applied") {
  Sketch<double> s;
  s.intensity = Field<double>::constant({8, 8}, 0.5);
  CHECK_THROWS_AS(blur_sketch(s, -1.0), ValidationError);
  const auto once = blur_sketch(s, 1.0);
  CHECK(once.sigma_applied == doctest::Approx(1.0));
  const auto twice = blur_sketch(once, 2.0);
  CHECK(twice.sigma_applied == doctest::Approx(std::sqrt(5.0)));
  CHECK(once.intensity.v.maxCoeff() <= 1.0);
  CHECK(once.intensity.v.minCoeff() >= 0.0);
}
