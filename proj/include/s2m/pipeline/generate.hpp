#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"
#include "s2m/diffusion/ops.hpp"
#include "s2m/diffusion/schedule.hpp"
#include "s2m/io/file_util.hpp"
#include "s2m/io/tiff.hpp"
#include "s2m/net/train.hpp"
#include "s2m/sim/serialize.hpp"
#include "s2m/sim/simulate.hpp"
#include "s2m/sim/sketch.hpp"
#include "s2m/util/parallel.hpp"

// End-to-end sketch-conditioned generation: render + blur a sketch from a
// label mask, push it through the forward process to t_start, run the
// truncated reverse chain, and export paired image/mask datasets. The
// exported mask is always bit-identical to the input mask — that passthrough
// is the whole point of the pipeline.

namespace s2m::pipeline {

namespace fs = std::filesystem;

// Affine range adapters between the file/sketch domain [0,1] and the model
// domain [-1,1]; exact inverses of each other.
template <typename S>
Field<S> normalize(const Field<S>& unit01) {
  Field<S> out = unit01;
  out.v = S(2) * unit01.v - S(1);
  out.range = Range::Model11;
  return out;
}

template <typename S>
Field<S> normalize(const Sketch<S>& sketch) {
  return normalize(sketch.intensity);
}

template <typename S>
Field<S> denormalize(const Field<S>& model) {
  Field<S> out = model;
  out.v = (model.v + S(1)) * S(0.5);
  out.range = Range::Unit01;
  return out;
}

struct GenerationConfig {
  int t_start = 400;
  double sigma = 1.0;
  std::uint64_t seed = 0;
  bool clamp_output = true;  // clamp exported images to [0,1]
  ReverseVariance variance = ReverseVariance::Posterior;
  bool clamp_x0 = true;  // clamp the implied x0 during sampling
};

inline nlohmann::json generation_config_to_json(const GenerationConfig& c) {
  return {{"t_start", c.t_start},
          {"sigma", c.sigma},
          {"seed", c.seed},
          {"clamp_output", c.clamp_output},
          {"variance", c.variance == ReverseVariance::Posterior ? "posterior" : "beta"},
          {"clamp_x0", c.clamp_x0}};
}

inline GenerationConfig generation_config_from_json(const nlohmann::json& j) {
  GenerationConfig c;
  c.t_start = j.at("t_start").get<int>();
  c.sigma = j.at("sigma").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clamp_output = j.at("clamp_output").get<bool>();
  c.variance = j.at("variance").get<std::string>() == "beta" ? ReverseVariance::Beta
                                                             : ReverseVariance::Posterior;
  c.clamp_x0 = j.at("clamp_x0").get<bool>();
  return c;
}

// A denoise callable optionally bound to the schedule it was trained with.
// Generation refuses to run against a different schedule.
template <typename S>
struct BoundDenoiser {
  std::function<Field<S>(const Field<S>&, int)> fn;
  std::optional<ScheduleSpec> schedule;
  std::string id = "unbound";
};

inline BoundDenoiser<float> bind_denoiser(std::shared_ptr<const net::TimeUnet<float>> net,
                                          const ScheduleSpec& schedule, std::string id) {
  BoundDenoiser<float> den;
  den.fn = [net = std::move(net)](const Field<float>& x, int t) { return net->denoise(x, t); };
  den.schedule = schedule;
  den.id = std::move(id);
  return den;
}

inline BoundDenoiser<float> bind_denoiser(net::LoadedDenoiser&& loaded) {
  auto net = std::make_shared<net::TimeUnet<float>>(std::move(loaded.net));
  return bind_denoiser(std::move(net), loaded.schedule, loaded.id);
}

template <typename S>
void check_generation_inputs(const BoundDenoiser<S>& den, const NoiseSchedule& schedule,
                             const GenerationConfig& config) {
  if (!den.fn) throw ValidationError("generate: denoiser callable is empty");
  if (den.schedule && !(*den.schedule == schedule.spec()))
    throw ValidationError("generate: checkpoint schedule " + den.schedule->id() +
                          " does not match supplied schedule " + schedule.spec().id());
  if (config.t_start < 1 || config.t_start > schedule.steps())
    throw ValidationError("generate: t_start=" + std::to_string(config.t_start) +
                          " outside [1," + std::to_string(schedule.steps()) + "]");
  if (config.sigma < 0.0) throw ValidationError("generate: sigma must be >= 0");
}

template <typename S>
struct GeneratedPair {
  Field<S> image;  // [0,1]
  LabelMask mask;  // bit-identical to the input mask
  Sketch<S> sketch;
};

// The exact (rendered, blurred) sketch a generation run starts from; exposed
// so callers can reproduce the chain's starting point.
template <typename S>
Sketch<S> render_sketch(const LabelMask& mask, SketchStyle style, const SimParams& params,
                        const GenerationConfig& config) {
  return blur_sketch(mask_to_sketch<S>(mask, style, params, derive_seed(config.seed, 0xA1)),
                     config.sigma);
}

template <typename S>
GeneratedPair<S> generate_pair(const BoundDenoiser<S>& den, const NoiseSchedule& schedule,
                               const LabelMask& mask, SketchStyle style, const SimParams& params,
                               const GenerationConfig& config) {
  check_generation_inputs(den, schedule, config);
  GeneratedPair<S> out;
  out.sketch = render_sketch<S>(mask, style, params, config);
  Field<S> x0 = normalize(out.sketch);
  Rng fwd_rng(derive_seed(config.seed, 0xA2));
  Field<S> eps = fwd_rng.normal_field<S>(x0.shape, Range::Model11);
  Field<S> x_start = forward_sample(x0, config.t_start, eps, schedule);
  Field<S> generated = sample_chain(den.fn, std::move(x_start), config.t_start, schedule,
                                    derive_seed(config.seed, 0xA3),
                                    SampleOptions{config.variance, config.clamp_x0});
  out.image = denormalize(generated);
  if (config.clamp_output) out.image.v = out.image.v.min(S(1)).max(S(0));
  out.mask = mask;
  return out;
}

struct ManifestEntry {
  std::string image, mask, sketch;  // paths relative to the manifest
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::string format = "s2m-dataset-1";
  std::string created;
  std::string checkpoint_id, schedule_id, style;
  nlohmann::json config, sim;
  std::vector<ManifestEntry> entries;

  nlohmann::json to_json() const {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& entry : entries)
      e.push_back({{"image", entry.image},
                   {"mask", entry.mask},
                   {"sketch", entry.sketch},
                   {"seed", entry.seed}});
    return {{"format", format},       {"created", created}, {"checkpoint_id", checkpoint_id},
            {"schedule_id", schedule_id}, {"style", style},     {"config", config},
            {"sim", sim},             {"entries", e}};
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.format = j.at("format").get<std::string>();
    if (m.format != "s2m-dataset-1")
      throw RuntimeError("unsupported dataset manifest format '" + m.format + "'");
    m.created = j.value("created", "");
    m.checkpoint_id = j.value("checkpoint_id", "");
    m.schedule_id = j.value("schedule_id", "");
    m.style = j.value("style", "");
    m.config = j.value("config", nlohmann::json());
    m.sim = j.value("sim", nlohmann::json());
    for (const auto& e : j.at("entries"))
      m.entries.push_back(ManifestEntry{e.at("image").get<std::string>(),
                                        e.at("mask").get<std::string>(),
                                        e.at("sketch").get<std::string>(),
                                        e.at("seed").get<std::uint64_t>()});
    return m;
  }
};

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string sample_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

// n_samples independent (mask, sketch, image) triples with per-sample seeds
// derived from (config.seed, index); re-running with the same inputs
// reproduces identical files (the manifest timestamp aside). On failure all
// files created by this run are removed.
inline DatasetManifest generate_dataset(const BoundDenoiser<float>& den,
                                        const NoiseSchedule& schedule, const SimParams& sim_params,
                                        SketchStyle style, int n_samples,
                                        const GenerationConfig& config, const fs::path& out_dir,
                                        int jobs = 1) {
  if (n_samples < 1) throw ValidationError("generate_dataset: n_samples must be >= 1");
  check_generation_inputs(den, schedule, config);
  sim_params.validate();
  io::ensure_writable_dir(out_dir);
  io::ensure_writable_dir(out_dir / "images");
  io::ensure_writable_dir(out_dir / "masks");
  io::ensure_writable_dir(out_dir / "sketches");

  DatasetManifest manifest;
  manifest.created = iso8601_now();
  manifest.checkpoint_id = den.id;
  manifest.schedule_id = schedule.id();
  manifest.style = to_string(style);
  manifest.config = generation_config_to_json(config);
  manifest.sim = sim_params_to_json(sim_params);
  manifest.entries.resize(static_cast<std::size_t>(n_samples));

  std::vector<fs::path> written(static_cast<std::size_t>(n_samples) * 3);
  try {
    parallel_for(n_samples, jobs, [&](std::int64_t i) {
      const std::uint64_t seed_i = derive_seed(config.seed, static_cast<std::uint64_t>(i));
      SimParams sim_i = sim_params;
      sim_i.seed = derive_seed(seed_i, 0x73696dull);  // "sim"
      const LabelMask mask = style == SketchStyle::Nuclei ? simulate_nuclei_mask(sim_i)
                                                          : simulate_membrane_mask(sim_i);
      GenerationConfig cfg_i = config;
      cfg_i.seed = seed_i;
      const GeneratedPair<float> pair = generate_pair(den, schedule, mask, style, sim_i, cfg_i);

      const std::string name = sample_name(static_cast<int>(i)) + ".tif";
      const fs::path image_path = out_dir / "images" / name;
      const fs::path mask_path = out_dir / "masks" / name;
      const fs::path sketch_path = out_dir / "sketches" / name;
      io::write_tiff(image_path, pair.image);
      io::write_tiff(mask_path, pair.mask);
      io::write_tiff(sketch_path, pair.sketch.intensity);
      written[static_cast<std::size_t>(i) * 3 + 0] = image_path;
      written[static_cast<std::size_t>(i) * 3 + 1] = mask_path;
      written[static_cast<std::size_t>(i) * 3 + 2] = sketch_path;
      manifest.entries[static_cast<std::size_t>(i)] =
          ManifestEntry{"images/" + name, "masks/" + name, "sketches/" + name, seed_i};
    });
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written)
      if (!p.empty()) fs::remove(p, ec);
    throw;
  }

  io::atomic_write_file(out_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

// Self-contained consumability check of an exported dataset: the manifest
// parses, every referenced file exists, each triple agrees in shape, masks
// are unsigned-integer TIFFs and images/sketches are 32-bit float TIFFs.
inline DatasetManifest verify_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(mpath));
  } catch (const std::exception& e) {
    throw RuntimeError("verify_dataset: bad manifest " + mpath.string() + ": " + e.what());
  }
  DatasetManifest m = DatasetManifest::from_json(j);
  if (m.entries.empty()) throw RuntimeError("verify_dataset: manifest has no entries");
  for (const auto& e : m.entries) {
    const io::TiffInfo image_info = io::probe_tiff(dir / e.image);
    const io::TiffInfo mask_info = io::probe_tiff(dir / e.mask);
    const io::TiffInfo sketch_info = io::probe_tiff(dir / e.sketch);
    if (image_info.shape != mask_info.shape || image_info.shape != sketch_info.shape)
      throw RuntimeError("verify_dataset: shape mismatch in entry " + e.image);
    if (image_info.sample_format != 3 || image_info.bits != 32)
      throw RuntimeError("verify_dataset: image " + e.image + " is not 32-bit float");
    if (sketch_info.sample_format != 3 || sketch_info.bits != 32)
      throw RuntimeError("verify_dataset: sketch " + e.sketch + " is not 32-bit float");
    if (mask_info.sample_format != 1 || mask_info.bits != 16)
      throw RuntimeError("verify_dataset: mask " + e.mask + " is not 16-bit unsigned");
    const LabelMask mask = io::read_tiff_labels(dir / e.mask);
    const Field<float> image = io::read_tiff_float(dir / e.image);
    if (mask.shape != image.shape) throw RuntimeError("verify_dataset: decoded shape mismatch");
    require_finite(image, "verify_dataset(image)");
  }
  return m;
}

}  // namespace s2m::pipeline
