#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"
#include "s2m/diffusion/ops.hpp"
#include "s2m/io/file_util.hpp"
#include "s2m/metrics/metrics.hpp"
#include "s2m/pipeline/generate.hpp"
#include "s2m/util/parallel.hpp"

// The (t_start, sigma) trade-off harness. Per grid cell and reference pair:
// noise both the blurred sketch (domain M) and the paired real image
// (domain I) to t_start and record the histogram intersection of the two
// noisy fields; then run the truncated reverse chain from the sketch side and
// score the generated image against the real reference with PSNR and ZNCC.

namespace s2m {

struct SweepCell {
  int t_start = 0;
  double sigma = 0.0;
  double mean_psnr_db = 0.0;
  double mean_zncc = 0.0;
  double hist_similarity = 0.0;
  int samples = 0;
  bool recommended = false;  // flags the default operating point (400, 1)
};

struct SweepReport {
  std::vector<SweepCell> grid;  // cartesian product, t_start outer
  std::vector<int> t_grid;
  std::vector<double> sigma_grid;
  std::vector<std::uint64_t> seeds;
  int ref_count = 0;
  int bins = 64;
  double hist_lo = -4.0, hist_hi = 4.0;
  std::string checkpoint_id, schedule_id, style;
};

inline SweepReport sweep(const pipeline::BoundDenoiser<float>& den, const NoiseSchedule& schedule,
                         const std::vector<Field<float>>& ref_images,
                         const std::vector<LabelMask>& ref_masks, const SimParams& sketch_params,
                         SketchStyle style, const std::vector<int>& t_grid,
                         const std::vector<double>& sigma_grid,
                         const std::vector<std::uint64_t>& seeds, int jobs = 1) {
  if (ref_images.empty() || ref_images.size() != ref_masks.size())
    throw ValidationError("sweep: need equally many reference images and masks");
  for (std::size_t i = 0; i < ref_images.size(); ++i)
    require_same_shape(ref_images[i], ref_masks[i], "sweep(references)");
  if (t_grid.empty() || sigma_grid.empty()) throw ValidationError("sweep: empty grid");
  if (seeds.empty()) throw ValidationError("sweep: need at least one seed");
  for (int t : t_grid)
    if (t < 1 || t > schedule.steps())
      throw ValidationError("sweep: t_start=" + std::to_string(t) + " outside [1," +
                            std::to_string(schedule.steps()) + "]");
  for (double s : sigma_grid)
    if (s < 0.0) throw ValidationError("sweep: sigma must be >= 0");
  if (den.schedule && !(*den.schedule == schedule.spec()))
    throw ValidationError("sweep: checkpoint schedule " + den.schedule->id() +
                          " does not match supplied schedule " + schedule.spec().id());

  SweepReport report;
  report.t_grid = t_grid;
  report.sigma_grid = sigma_grid;
  report.seeds = seeds;
  report.ref_count = static_cast<int>(ref_images.size());
  report.checkpoint_id = den.id;
  report.schedule_id = schedule.id();
  report.style = to_string(style);

  const std::int64_t cells = static_cast<std::int64_t>(t_grid.size()) * sigma_grid.size();
  const std::int64_t per_cell = static_cast<std::int64_t>(ref_images.size()) * seeds.size();
  const std::int64_t tasks = cells * per_cell;
  struct TaskResult {
    double psnr_db = 0.0, zncc_v = 0.0, hist = 0.0;
  };
  std::vector<TaskResult> results(static_cast<std::size_t>(tasks));

  parallel_for(tasks, jobs, [&](std::int64_t task) {
    const std::int64_t cell = task / per_cell;
    const std::int64_t inner = task % per_cell;
    const std::size_t ref = static_cast<std::size_t>(inner / static_cast<std::int64_t>(seeds.size()));
    const std::size_t seed_i = static_cast<std::size_t>(inner % static_cast<std::int64_t>(seeds.size()));
    const int t = t_grid[static_cast<std::size_t>(cell) / sigma_grid.size()];
    const double sigma = sigma_grid[static_cast<std::size_t>(cell) % sigma_grid.size()];

    const std::uint64_t h = derive_seed(
        derive_seed(derive_seed(0x7377656570ull, seeds[seed_i]), static_cast<std::uint64_t>(cell)),
        static_cast<std::uint64_t>(ref));

    const Sketch<float> sketch = blur_sketch(
        mask_to_sketch<float>(ref_masks[ref], style, sketch_params, derive_seed(h, 1)), sigma);
    const Field<float> x0_sketch = pipeline::normalize(sketch.intensity);
    const Field<float> x0_image = pipeline::normalize(ref_images[ref]);

    Rng rng_m(derive_seed(h, 2)), rng_i(derive_seed(h, 3));
    const Field<float> noisy_sketch =
        forward_sample(x0_sketch, t, rng_m.normal_field<float>(x0_sketch.shape), schedule);
    const Field<float> noisy_image =
        forward_sample(x0_image, t, rng_i.normal_field<float>(x0_image.shape), schedule);
    const double hist = histogram_similarity(noisy_sketch, noisy_image, report.bins,
                                              report.hist_lo, report.hist_hi);

    Field<float> generated =
        sample_chain(den.fn, noisy_sketch, t, schedule, derive_seed(h, 4), SampleOptions{});
    generated = pipeline::denormalize(generated);
    generated.v = generated.v.min(1.f).max(0.f);

    results[static_cast<std::size_t>(task)] =
        TaskResult{psnr(ref_images[ref], generated, 1.0), zncc(ref_images[ref], generated), hist};
  });

  report.grid.resize(static_cast<std::size_t>(cells));
  for (std::int64_t cell = 0; cell < cells; ++cell) {
    SweepCell& c = report.grid[static_cast<std::size_t>(cell)];
    c.t_start = t_grid[static_cast<std::size_t>(cell) / sigma_grid.size()];
    c.sigma = sigma_grid[static_cast<std::size_t>(cell) % sigma_grid.size()];
    c.samples = static_cast<int>(per_cell);
    c.recommended = (c.t_start == 400 && c.sigma == 1.0);
    for (std::int64_t k = 0; k < per_cell; ++k) {
      const TaskResult& r = results[static_cast<std::size_t>(cell * per_cell + k)];
      c.mean_psnr_db += r.psnr_db;
      c.mean_zncc += r.zncc_v;
      c.hist_similarity += r.hist;
    }
    c.mean_psnr_db /= static_cast<double>(per_cell);
    c.mean_zncc /= static_cast<double>(per_cell);
    c.hist_similarity /= static_cast<double>(per_cell);
  }
  return report;
}

inline std::string sweep_csv(const SweepReport& report) {
  std::ostringstream os;
  os.precision(10);
  os << "t_start,sigma,mean_psnr_db,mean_zncc,hist_similarity,samples,recommended\n";
  for (const auto& c : report.grid)
    os << c.t_start << "," << c.sigma << "," << c.mean_psnr_db << "," << c.mean_zncc << ","
       << c.hist_similarity << "," << c.samples << "," << (c.recommended ? 1 : 0) << "\n";
  return os.str();
}

inline nlohmann::json sweep_meta_json(const SweepReport& report) {
  return {{"t_grid", report.t_grid},
          {"sigma_grid", report.sigma_grid},
          {"seeds", report.seeds},
          {"ref_count", report.ref_count},
          {"bins", report.bins},
          {"hist_range", {report.hist_lo, report.hist_hi}},
          {"checkpoint_id", report.checkpoint_id},
          {"schedule_id", report.schedule_id},
          {"style", report.style},
          {"recommended", {{"t_start", 400}, {"sigma", 1.0}}}};
}

inline void write_sweep_report(const SweepReport& report, const std::filesystem::path& dir) {
  io::ensure_writable_dir(dir);
  io::atomic_write_file(dir / "sweep.csv", sweep_csv(report));
  io::atomic_write_file(dir / "sweep.json", sweep_meta_json(report).dump(2) + "\n");
}

}  // namespace s2m
