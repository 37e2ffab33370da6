#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"
#include "s2m/io/file_util.hpp"
#include "s2m/io/tiff.hpp"
#include "s2m/sim/serialize.hpp"
#include "s2m/sim/simulate.hpp"
#include "s2m/sim/sketch.hpp"
#include "s2m/util/log.hpp"

// Procedural stand-in for a real microscopy corpus: simulated structures
// rendered softly, filled with band-limited noise texture, plus additive
// sensor noise. Pinned by (params, seed) and shipped as a generator rather
// than data; images come paired with their ground-truth masks so the same
// corpus also provides sweep references.

namespace s2m::pipeline {

struct ToyCorpusParams {
  int count = 64;
  Shape image_shape = {96, 96};
  SketchStyle style = SketchStyle::Nuclei;
  SimParams sim;  // image_shape and seed are overridden per image
  double base_blur = 0.8;      // soft edges of the rendered structures
  double texture_sigma = 2.0;  // band limit of the texture noise
  double texture_amp = 0.10;
  double noise_sigma = 0.02;

  ToyCorpusParams() {
    sim.min_instances = 6;
    sim.max_instances = 12;
    sim.radius_min = 6.0;
    sim.radius_max = 11.0;
    sim.ecc_min = 1.0;
    sim.ecc_max = 1.7;
  }
};

struct ToyPair {
  Field<float> image;  // [0,1]
  LabelMask mask;
};

inline nlohmann::json toy_params_to_json(const ToyCorpusParams& p) {
  return {{"count", p.count},
          {"image_shape", p.image_shape},
          {"style", to_string(p.style)},
          {"sim", sim_params_to_json(p.sim)},
          {"base_blur", p.base_blur},
          {"texture_sigma", p.texture_sigma},
          {"texture_amp", p.texture_amp},
          {"noise_sigma", p.noise_sigma}};
}

inline ToyPair make_toy_pair(const ToyCorpusParams& params, std::uint64_t seed) {
  SimParams sim = params.sim;
  sim.image_shape = params.image_shape;
  sim.seed = derive_seed(seed, 0x01);
  ToyPair pair;
  pair.mask = params.style == SketchStyle::Nuclei ? simulate_nuclei_mask(sim)
                                                  : simulate_membrane_mask(sim);
  const Sketch<float> sketch =
      mask_to_sketch<float>(pair.mask, params.style, sim, derive_seed(seed, 0x02));
  Field<float> base = gaussian_blur(sketch.intensity, params.base_blur);

  Rng tex_rng(derive_seed(seed, 0x03));
  Field<float> texture = gaussian_blur(tex_rng.normal_field<float>(params.image_shape), params.texture_sigma);
  const float mean = texture.v.mean();
  const float sd = std::sqrt(std::max(0.f, (texture.v - mean).square().mean()));
  if (sd > 0.f) texture.v = (texture.v - mean) / sd;

  Rng noise_rng(derive_seed(seed, 0x04));
  pair.image = Field<float>(params.image_shape, Range::Unit01);
  pair.image.v = base.v + static_cast<float>(params.texture_amp) * texture.v +
                 static_cast<float>(params.noise_sigma) * noise_rng.normal_array<float>(base.size());
  pair.image.v = pair.image.v.min(1.f).max(0.f);
  return pair;
}

inline std::uint64_t toy_corpus_hash(const ToyCorpusParams& params, std::uint64_t seed) {
  const std::string s = toy_params_to_json(params).dump() + "#" + std::to_string(seed);
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// Builds (or loads from the S2M_CACHE directory, when set) the pinned toy
// corpus. Cached TIFFs round-trip bit-exactly, so cached and fresh corpora
// are identical.
inline std::vector<ToyPair> make_toy_corpus(const ToyCorpusParams& params, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (params.count < 1) throw ValidationError("toy corpus: count must be >= 1");

  fs::path cache_dir;
  if (const char* env = std::getenv("S2M_CACHE"); env && *env) {
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(toy_corpus_hash(params, seed)));
    cache_dir = fs::path(env) / (std::string("toy-") + hex);
    const fs::path meta = cache_dir / "corpus.json";
    if (fs::exists(meta)) {
      try {
        const auto j = nlohmann::json::parse(io::read_file(meta));
        if (j.at("count").get<int>() == params.count) {
          std::vector<ToyPair> pairs;
          pairs.reserve(static_cast<std::size_t>(params.count));
          for (int i = 0; i < params.count; ++i) {
            char name[16];
            std::snprintf(name, sizeof(name), "%04d.tif", i);
            ToyPair p;
            p.image = io::read_tiff_float(cache_dir / "images" / name);
            p.mask = io::read_tiff_labels(cache_dir / "masks" / name);
            pairs.push_back(std::move(p));
          }
          return pairs;
        }
      } catch (const std::exception& e) {
        log_warn(std::string("toy corpus cache unreadable, regenerating: ") + e.what());
      }
    }
  }

  std::vector<ToyPair> pairs;
  pairs.reserve(static_cast<std::size_t>(params.count));
  for (int i = 0; i < params.count; ++i)
    pairs.push_back(make_toy_pair(params, derive_seed(seed, 0x746f79ull + static_cast<std::uint64_t>(i))));

  if (!cache_dir.empty()) {
    try {
      io::ensure_writable_dir(cache_dir / "images");
      io::ensure_writable_dir(cache_dir / "masks");
      for (int i = 0; i < params.count; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "%04d.tif", i);
        io::write_tiff(cache_dir / "images" / name, pairs[static_cast<std::size_t>(i)].image);
        io::write_tiff(cache_dir / "masks" / name, pairs[static_cast<std::size_t>(i)].mask);
      }
      nlohmann::json meta = {{"count", params.count}, {"seed", seed}, {"params", toy_params_to_json(params)}};
      io::atomic_write_file(cache_dir / "corpus.json", meta.dump(2) + "\n");
    } catch (const std::exception& e) {
      log_warn(std::string("toy corpus cache not writable: ") + e.what());
    }
  }
  return pairs;
}

// Per-image min-max normalization to the model range [-1,1]; constant images
// map to all zeros.
inline Field<float> minmax_normalize(const Field<float>& img) {
  Field<float> out = img;
  const float lo = img.v.minCoeff(), hi = img.v.maxCoeff();
  if (hi > lo)
    out.v = (img.v - lo) / (hi - lo) * 2.f - 1.f;
  else
    out.v.setZero();
  out.range = Range::Model11;
  return out;
}

}  // namespace s2m::pipeline
