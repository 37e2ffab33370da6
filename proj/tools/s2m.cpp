// s2m: train a denoising diffusion model on microscopy-style images and
// generate fully-annotated synthetic datasets from simulated structure
// sketches. Subcommands: simulate | train | generate | sweep | evaluate.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/io/file_util.hpp"
#include "s2m/io/png.hpp"
#include "s2m/io/tiff.hpp"
#include "s2m/metrics/metrics.hpp"
#include "s2m/metrics/sweep.hpp"
#include "s2m/net/train.hpp"
#include "s2m/pipeline/generate.hpp"
#include "s2m/pipeline/toy.hpp"
#include "s2m/sim/serialize.hpp"
#include "s2m/util/log.hpp"

namespace fs = std::filesystem;
using namespace s2m;

namespace {

Shape parse_shape(const std::string& text) {
  std::string s = text;
  std::replace(s.begin(), s.end(), 'x', ',');
  Shape shape;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    shape.push_back(std::stoll(item));
  }
  require_valid_shape(shape, "shape");
  return shape;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_integral_v<T>)
      out.push_back(static_cast<T>(std::stoll(item)));
    else
      out.push_back(static_cast<T>(std::stod(item)));
  }
  if (out.empty()) throw ValidationError("empty list: '" + text + "'");
  return out;
}

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string out = "out";
  int jobs = 1;
  std::string log_level = "info";
};

struct SimFlags {
  std::string shape = "128,128";
  std::string instances, radius, ecc, fg, bg;
  double thickness = -1;
  int max_attempts = -1;

  SimParams apply(SimParams p) const {
    p.image_shape = parse_shape(shape);
    auto range = [](const std::string& text, double& lo, double& hi) {
      const auto v = parse_list<double>(text);
      lo = v.front();
      hi = v.size() > 1 ? v[1] : v.front();
    };
    if (!instances.empty()) {
      const auto v = parse_list<int>(instances);
      p.min_instances = v.front();
      p.max_instances = v.size() > 1 ? v[1] : v.front();
    }
    if (!radius.empty()) range(radius, p.radius_min, p.radius_max);
    if (!ecc.empty()) range(ecc, p.ecc_min, p.ecc_max);
    if (!fg.empty()) range(fg, p.fg_min, p.fg_max);
    if (!bg.empty()) range(bg, p.bg_min, p.bg_max);
    if (thickness > 0) p.membrane_thickness = thickness;
    if (max_attempts > 0) p.max_attempts = max_attempts;
    return p;
  }

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--shape", shape, "field shape, e.g. 128x128 or 32x64x64");
    cmd->add_option("--instances", instances, "instance count range MIN,MAX");
    cmd->add_option("--radius", radius, "radius range in px MIN,MAX");
    cmd->add_option("--ecc", ecc, "eccentricity range MIN,MAX");
    cmd->add_option("--fg", fg, "sketch foreground intensity range MIN,MAX");
    cmd->add_option("--bg", bg, "sketch background intensity range MIN,MAX");
    cmd->add_option("--thickness", thickness, "membrane band thickness in px");
    cmd->add_option("--max-attempts", max_attempts, "placement attempts per instance");
  }
};

struct ToyFlags {
  int count = 64;
  std::string shape = "96,96";
  std::string style = "nuclei";

  pipeline::ToyCorpusParams params() const {
    pipeline::ToyCorpusParams p;
    p.count = count;
    p.image_shape = parse_shape(shape);
    p.style = sketch_style_from_string(style);
    return p;
  }

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--toy-count", count, "toy corpus image count");
    cmd->add_option("--toy-shape", shape, "toy corpus image shape");
    cmd->add_option("--toy-style", style, "toy corpus structure style (nuclei|membrane)");
  }
};

void write_loss_outputs(const net::TrainState& state, const fs::path& out_dir) {
  std::ostringstream csv;
  csv << "step,loss\n";
  csv.precision(9);
  for (const auto& [step, loss] : state.loss_history) csv << step << "," << loss << "\n";
  io::atomic_write_file(out_dir / "loss.csv", csv.str());
  if (state.loss_history.size() >= 2) {
    const std::size_t n = state.loss_history.size();
    const std::size_t stride = std::max<std::size_t>(1, n / 2000);
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < n; i += stride) {
      xs.push_back(static_cast<double>(state.loss_history[i].first));
      ys.push_back(state.loss_history[i].second);
    }
    io::plot_lines(out_dir / "loss.png", xs, {{"", ys}});
  }
}

int cmd_simulate(const GlobalOpts& g, const SimFlags& sim_flags, const std::string& style_name,
                 int count, double sigma) {
  if (count < 1) throw ValidationError("simulate: --count must be >= 1");
  const SketchStyle style = sketch_style_from_string(style_name);
  SimParams base = sim_flags.apply(SimParams{});
  base.validate();
  const fs::path out = g.out;
  io::ensure_writable_dir(out / "masks");
  io::ensure_writable_dir(out / "sketches");
  io::ensure_writable_dir(out / "params");

  parallel_for(count, g.jobs, [&](std::int64_t i) {
    SimParams p = base;
    p.seed = derive_seed(g.seed, static_cast<std::uint64_t>(i));
    PlacementInfo info;
    const LabelMask mask = style == SketchStyle::Nuclei ? simulate_nuclei_mask(p, &info)
                                                        : simulate_membrane_mask(p);
    Sketch<float> sketch =
        mask_to_sketch<float>(mask, style, p, derive_seed(p.seed, 0x736bull));
    sketch = blur_sketch(sketch, sigma);
    const std::string name = pipeline::sample_name(static_cast<int>(i));
    io::write_tiff(out / "masks" / (name + ".tif"), mask);
    io::write_tiff(out / "sketches" / (name + ".tif"), sketch.intensity);
    nlohmann::json sidecar = {{"sim", sim_params_to_json(p)},
                              {"style", to_string(style)},
                              {"sigma", sigma},
                              {"seed", p.seed}};
    if (style == SketchStyle::Nuclei)
      sidecar["placement"] = {{"requested", info.requested}, {"placed", info.placed}};
    io::atomic_write_file(out / "params" / (name + ".json"), sidecar.dump(2) + "\n");
  });
  log_info("simulate: wrote " + std::to_string(count) + " mask/sketch pairs to " + out.string());
  return 0;
}

std::vector<Field<float>> load_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("train: --data is not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".tif" || ext == ".tiff") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Field<float>> images;
  int skipped = 0;
  for (const auto& f : files) {
    try {
      images.push_back(io::read_tiff_float(f));
    } catch (const std::exception& e) {
      ++skipped;
      log_warn("skipping unreadable image " + f.string() + ": " + e.what());
    }
  }
  if (images.empty())
    throw RuntimeError("train: no readable TIFF images in " + dir.string() + " (" +
                       std::to_string(skipped) + " unreadable)");
  return images;
}

int cmd_train(const GlobalOpts& g, bool toy_corpus, const ToyFlags& toy, const std::string& data_dir,
              std::int64_t steps, const std::string& resume, const std::string& patch,
              int base_channels, int depth, int time_dim, double lr, int batch, double ema,
              std::int64_t checkpoint_every) {
  const fs::path out = g.out;
  io::ensure_writable_dir(out);

  net::TrainOptions opt;
  opt.adam.lr = lr;
  opt.batch_size = batch;
  opt.ema_decay = ema;
  opt.checkpoint_every = checkpoint_every;

  std::optional<net::Trainer> trainer;
  if (!resume.empty()) {
    trainer.emplace(net::Trainer::load(resume, opt));
    log_info("resumed from " + resume + " at step " + std::to_string(trainer->state().step));
  } else {
    net::DenoiserConfig cfg;
    cfg.patch_shape = parse_shape(patch);
    cfg.rank = static_cast<int>(cfg.patch_shape.size());
    cfg.base_channels = base_channels;
    cfg.depth = depth;
    cfg.time_embed_dim = time_dim;
    trainer.emplace(cfg, build_schedule(ScheduleSpec{}), g.seed, opt);
  }

  std::vector<Field<float>> images;
  if (toy_corpus == !data_dir.empty())
    throw ValidationError("train: pass exactly one of --toy-corpus or --data DIR");
  if (toy_corpus) {
    const auto pairs = pipeline::make_toy_corpus(toy.params(), derive_seed(g.seed, 0x636f7270ull));
    images.reserve(pairs.size());
    for (const auto& p : pairs) images.push_back(pipeline::minmax_normalize(p.image));
  } else {
    for (auto& img : load_image_dir(data_dir)) images.push_back(pipeline::minmax_normalize(img));
  }

  const net::PatchSource<float> source(std::move(images), trainer->net().config().patch_shape);
  const net::TrainState state = trainer->run(source, steps, out);
  write_loss_outputs(state, out);
  log_info("train: finished at step " + std::to_string(state.step) + ", checkpoint " +
           state.checkpoint_path->string());
  return 0;
}

int cmd_generate(const GlobalOpts& g, const std::string& checkpoint, const SimFlags& sim_flags,
                 const std::string& style_name, int n, int t_start, double sigma, bool no_clamp,
                 const std::string& variance) {
  const SketchStyle style = sketch_style_from_string(style_name);
  SimParams sim = sim_flags.apply(SimParams{});
  sim.validate();

  auto loaded = net::load_denoiser(checkpoint);
  const NoiseSchedule schedule = build_schedule(loaded.schedule);
  const auto den = pipeline::bind_denoiser(std::move(loaded));

  pipeline::GenerationConfig config;
  config.t_start = t_start;
  config.sigma = sigma;
  config.seed = g.seed;
  config.clamp_output = !no_clamp;
  config.variance = variance == "beta" ? ReverseVariance::Beta : ReverseVariance::Posterior;

  const auto manifest = pipeline::generate_dataset(den, schedule, sim, style, n, config, g.out, g.jobs);
  log_info("generate: wrote " + std::to_string(manifest.entries.size()) + " samples to " + g.out);
  return 0;
}

int cmd_sweep(const GlobalOpts& g, const std::string& checkpoint, const ToyFlags& toy, int refs,
              const std::string& t_grid_text, const std::string& sigma_grid_text,
              const std::string& seeds_text) {
  auto loaded = net::load_denoiser(checkpoint);
  const NoiseSchedule schedule = build_schedule(loaded.schedule);
  const auto den = pipeline::bind_denoiser(std::move(loaded));

  pipeline::ToyCorpusParams toy_params = toy.params();
  toy_params.count = std::max(refs, 1);
  const auto pairs = pipeline::make_toy_corpus(toy_params, derive_seed(g.seed, 0x72656673ull));
  std::vector<Field<float>> ref_images;
  std::vector<LabelMask> ref_masks;
  for (const auto& p : pairs) {
    ref_images.push_back(p.image);
    ref_masks.push_back(p.mask);
  }

  const auto t_grid = parse_list<int>(t_grid_text);
  const auto sigma_grid = parse_list<double>(sigma_grid_text);
  std::vector<std::uint64_t> seeds;
  if (seeds_text.empty())
    seeds = {g.seed};
  else
    for (auto s : parse_list<std::int64_t>(seeds_text)) seeds.push_back(static_cast<std::uint64_t>(s));

  SimParams sketch_params = toy_params.sim;
  sketch_params.image_shape = toy_params.image_shape;

  const SweepReport report = sweep(den, schedule, ref_images, ref_masks, sketch_params,
                                   toy_params.style, t_grid, sigma_grid, seeds, g.jobs);
  const fs::path out = g.out;
  write_sweep_report(report, out);

  // Heatmaps (rows = t_start, cols = sigma) and per-sigma line plots.
  std::vector<std::string> row_labels, col_labels;
  for (int t : t_grid) row_labels.push_back(std::to_string(t));
  for (double s : sigma_grid) {
    std::ostringstream os;
    os << s;
    col_labels.push_back(os.str());
  }
  const std::map<std::string, double SweepCell::*> metrics = {
      {"psnr", &SweepCell::mean_psnr_db},
      {"zncc", &SweepCell::mean_zncc},
      {"hist", &SweepCell::hist_similarity}};
  for (const auto& [name, member] : metrics) {
    std::vector<std::vector<double>> grid(t_grid.size(), std::vector<double>(sigma_grid.size()));
    for (std::size_t r = 0; r < t_grid.size(); ++r)
      for (std::size_t c = 0; c < sigma_grid.size(); ++c)
        grid[r][c] = report.grid[r * sigma_grid.size() + c].*member;
    io::plot_heatmap(out / ("heatmap_" + name + ".png"), grid, row_labels, col_labels);
    std::vector<double> xs(t_grid.begin(), t_grid.end());
    std::vector<std::pair<std::string, std::vector<double>>> series;
    for (std::size_t c = 0; c < sigma_grid.size(); ++c) {
      std::vector<double> ys;
      for (std::size_t r = 0; r < t_grid.size(); ++r) ys.push_back(grid[r][c]);
      series.emplace_back(col_labels[c], ys);
    }
    io::plot_lines(out / ("lines_" + name + ".png"), xs, series);
  }
  log_info("sweep: wrote report and plots to " + out.string());
  return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& pred_dir, const std::string& truth_dir,
                 double threshold, const std::string& scores_a, const std::string& scores_b) {
  const fs::path out = g.out;
  io::ensure_writable_dir(out);
  nlohmann::json summary;

  if (!pred_dir.empty() || !truth_dir.empty()) {
    if (pred_dir.empty() || truth_dir.empty())
      throw ValidationError("evaluate: need both --pred and --truth");
    std::vector<fs::path> truth_files;
    for (const auto& e : fs::directory_iterator(truth_dir)) {
      const auto ext = e.path().extension().string();
      if (ext == ".tif" || ext == ".tiff") truth_files.push_back(e.path());
    }
    std::sort(truth_files.begin(), truth_files.end());
    if (truth_files.empty()) throw ValidationError("evaluate: no TIFF masks in " + truth_dir);

    std::ostringstream csv;
    csv << "file,mean_iou,truth_instances,matched_at_threshold\n";
    csv.precision(9);
    double total = 0.0;
    int count = 0;
    for (const auto& tf : truth_files) {
      const fs::path pf = fs::path(pred_dir) / tf.filename();
      if (!fs::exists(pf)) {
        log_warn("evaluate: no prediction for " + tf.filename().string() + ", skipping");
        continue;
      }
      const LabelMask truth = io::read_tiff_labels(tf);
      const LabelMask pred = io::read_tiff_labels(pf);
      const InstanceIouResult r = instance_iou(pred, truth, threshold);
      csv << tf.filename().string() << "," << r.mean_iou << "," << r.per_truth.size() << ","
          << r.matched_at_threshold << "\n";
      total += r.mean_iou;
      ++count;
    }
    if (count == 0) throw RuntimeError("evaluate: no prediction/truth pairs found");
    io::atomic_write_file(out / "iou.csv", csv.str());
    summary["mean_iou"] = total / count;
    summary["pairs"] = count;
    std::cout << "mean IoU over " << count << " masks: " << total / count << "\n";
  }

  if (!scores_a.empty() || !scores_b.empty()) {
    if (scores_a.empty() || scores_b.empty())
      throw ValidationError("evaluate: need both --scores-a and --scores-b");
    auto load_scores = [](const std::string& path) {
      std::vector<double> v;
      std::stringstream ss(io::read_file(path));
      std::string line;
      while (std::getline(ss, line)) {
        if (line.empty()) continue;
        v.push_back(std::stod(line));
      }
      if (v.empty()) throw ValidationError("evaluate: empty score file " + path);
      return v;
    };
    const RankSumResult r = rank_sum_test(load_scores(scores_a), load_scores(scores_b));
    summary["rank_sum"] = {{"u", r.u},
                           {"p_two_sided", r.p_two_sided},
                           {"method", r.method == RankSumResult::Method::Exact ? "exact" : "normal-approximation"},
                           {"n", r.n},
                           {"m", r.m}};
    std::cout << "rank-sum: U=" << r.u << " p=" << r.p_two_sided << " ("
              << (r.method == RankSumResult::Method::Exact ? "exact" : "normal approximation")
              << ", n=" << r.n << ", m=" << r.m << ")\n";
  }

  if (summary.empty())
    throw ValidationError("evaluate: nothing to do (pass --pred/--truth and/or --scores-a/--scores-b)");
  io::atomic_write_file(out / "summary.json", summary.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sketch-to-microscopy image synthesis with denoising diffusion"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file (flags override file values)");

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--jobs", g.jobs, "worker threads (0 = hardware)");
  app.add_option("--log-level", g.log_level, "debug|info|warn|error");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "write simulated mask/sketch pairs");
  SimFlags sim_flags;
  sim_flags.add_flags(sim_cmd);
  std::string sim_style = "nuclei";
  int sim_count = 5;
  double sim_sigma = 0.0;
  sim_cmd->add_option("--style", sim_style, "nuclei|membrane");
  sim_cmd->add_option("--count", sim_count, "number of samples");
  sim_cmd->add_option("--sigma", sim_sigma, "Gaussian blur applied to written sketches");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the denoiser");
  bool toy_corpus = false;
  std::string data_dir, resume, patch = "64,64";
  std::int64_t steps = 20000, checkpoint_every = 0;
  int base_channels = 32, depth = 3, time_dim = 128, batch = 4;
  double lr = 1e-4, ema = 0.0;
  ToyFlags toy_flags;
  train_cmd->add_flag("--toy-corpus", toy_corpus, "train on the built-in toy corpus");
  train_cmd->add_option("--data", data_dir, "directory of training TIFF images");
  train_cmd->add_option("--steps", steps, "total training steps");
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_option("--patch", patch, "training patch shape");
  train_cmd->add_option("--base-channels", base_channels, "base channel width");
  train_cmd->add_option("--depth", depth, "down/up levels");
  train_cmd->add_option("--time-dim", time_dim, "time embedding width");
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--batch", batch, "batch size");
  train_cmd->add_option("--ema", ema, "EMA decay (0 = off)");
  train_cmd->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoint interval");
  toy_flags.add_flags(train_cmd);

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "generate an annotated dataset");
  std::string gen_checkpoint, gen_style = "nuclei", gen_variance = "posterior";
  SimFlags gen_sim_flags;
  gen_sim_flags.add_flags(gen_cmd);
  int gen_n = 200, gen_t_start = 400;
  double gen_sigma = 1.0;
  bool gen_no_clamp = false;
  gen_cmd->add_option("--checkpoint", gen_checkpoint, "trained checkpoint")->required();
  gen_cmd->add_option("--style", gen_style, "nuclei|membrane");
  gen_cmd->add_option("--n", gen_n, "number of samples");
  gen_cmd->add_option("--t-start", gen_t_start, "reverse chain start step");
  gen_cmd->add_option("--sigma", gen_sigma, "sketch blur sigma in px");
  gen_cmd->add_flag("--no-clamp", gen_no_clamp, "do not clamp exported images to [0,1]");
  gen_cmd->add_option("--variance", gen_variance, "reverse-step variance: posterior|beta");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "evaluate the (t_start, sigma) grid");
  std::string sweep_checkpoint, t_grid_text = "100,400,1000", sigma_grid_text = "0,1,2", seeds_text;
  int sweep_refs = 3;
  ToyFlags sweep_toy;
  sweep_cmd->add_option("--checkpoint", sweep_checkpoint, "trained checkpoint")->required();
  sweep_cmd->add_option("--t-grid", t_grid_text, "comma-separated t_start values");
  sweep_cmd->add_option("--sigma-grid", sigma_grid_text, "comma-separated sigma values");
  sweep_cmd->add_option("--refs", sweep_refs, "number of toy reference pairs");
  sweep_cmd->add_option("--sweep-seeds", seeds_text, "comma-separated seeds (default: --seed)");
  sweep_toy.add_flags(sweep_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score predicted masks / compare score lists");
  std::string pred_dir, truth_dir, scores_a, scores_b;
  double threshold = 0.5;
  eval_cmd->add_option("--pred", pred_dir, "directory of predicted masks");
  eval_cmd->add_option("--truth", truth_dir, "directory of ground-truth masks");
  eval_cmd->add_option("--match-threshold", threshold, "IoU threshold for the matched count");
  eval_cmd->add_option("--scores-a", scores_a, "score file, one value per line");
  eval_cmd->add_option("--scores-b", scores_b, "score file, one value per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    log_level() = log_level_from_string(g.log_level);
    if (g.jobs < 0) throw ValidationError("--jobs must be >= 0");
    if (sim_cmd->parsed()) return cmd_simulate(g, sim_flags, sim_style, sim_count, sim_sigma);
    if (train_cmd->parsed())
      return cmd_train(g, toy_corpus, toy_flags, data_dir, steps, resume, patch, base_channels,
                       depth, time_dim, lr, batch, ema, checkpoint_every);
    if (gen_cmd->parsed())
      return cmd_generate(g, gen_checkpoint, gen_sim_flags, gen_style, gen_n, gen_t_start,
                          gen_sigma, gen_no_clamp, gen_variance);
    if (sweep_cmd->parsed())
      return cmd_sweep(g, sweep_checkpoint, sweep_toy, sweep_refs, t_grid_text, sigma_grid_text,
                       seeds_text);
    if (eval_cmd->parsed())
      return cmd_evaluate(g, pred_dir, truth_dir, threshold, scores_a, scores_b);
    throw ValidationError("no command");
  } catch (const ValidationError& e) {
    log_error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log_error(e.what());
    return 3;
  }
}
