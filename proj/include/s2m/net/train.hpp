#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"
#include "s2m/diffusion/ops.hpp"
#include "s2m/diffusion/schedule.hpp"
#include "s2m/net/adam.hpp"
#include "s2m/net/checkpoint.hpp"
#include "s2m/net/unet.hpp"
#include "s2m/util/log.hpp"

// Epsilon-prediction training: per batch element draw t ~ U{1..T} and
// eps ~ N(0,1), form x_t by the closed-form forward marginal and minimize
// mean ||eps - eps_theta(x_t, t)||^2.

namespace s2m::net {

// Source of training patches: uniform random image pick + uniform random crop.
// Images must already be normalized to the model range [-1,1].
template <typename S>
class PatchSource {
 public:
  PatchSource(std::vector<Field<S>> images, Shape patch_shape)
      : images_(std::move(images)), patch_(std::move(patch_shape)) {
    require_valid_shape(patch_, "PatchSource.patch_shape");
    if (images_.empty()) throw ValidationError("PatchSource: no images");
    for (const auto& img : images_) {
      if (img.shape.size() != patch_.size())
        throw ValidationError("PatchSource: image rank does not match patch rank");
      for (std::size_t d = 0; d < patch_.size(); ++d)
        if (img.shape[d] < patch_[d])
          throw ValidationError("PatchSource: image " + shape_str(img.shape) +
                                " smaller than patch " + shape_str(patch_));
    }
  }

  const Shape& patch_shape() const { return patch_; }
  std::size_t image_count() const { return images_.size(); }
  const std::vector<Field<S>>& images() const { return images_; }

  Field<S> sample(Rng& rng) const {
    const auto& img = images_[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(images_.size()) - 1))];
    const int rank = static_cast<int>(patch_.size());
    Index off[3] = {0, 0, 0};
    for (int d = 0; d < rank; ++d)
      off[d] = rng.uniform_int(0, img.shape[static_cast<std::size_t>(d)] -
                                      patch_[static_cast<std::size_t>(d)]);
    Field<S> out(patch_, Range::Model11);
    if (rank == 2) {
      for (Index y = 0; y < patch_[0]; ++y)
        for (Index x = 0; x < patch_[1]; ++x)
          out.v[y * patch_[1] + x] = img.v[flat_index(img.shape, off[0] + y, off[1] + x)];
    } else {
      for (Index z = 0; z < patch_[0]; ++z)
        for (Index y = 0; y < patch_[1]; ++y)
          for (Index x = 0; x < patch_[2]; ++x)
            out.v[(z * patch_[1] + y) * patch_[2] + x] =
                img.v[flat_index(img.shape, off[0] + z, off[1] + y, off[2] + x)];
    }
    return out;
  }

 private:
  std::vector<Field<S>> images_;
  Shape patch_;
};

template <typename S>
struct TrainTargets {
  MatX<S> x_t;  // (1 x batch*N)
  MatX<S> eps;
  std::vector<int> ts;
  Shape dims;
  int batch = 0;
};

// Draw order per element: t, then the noise field; keeps streams resumable.
template <typename S>
TrainTargets<S> make_training_targets(const std::vector<Field<S>>& batch_x0,
                                      const NoiseSchedule& schedule, Rng& rng) {
  if (batch_x0.empty()) throw ValidationError("make_training_targets: empty batch");
  const Shape dims = batch_x0.front().shape;
  const Index n = numel(dims);
  TrainTargets<S> tgt;
  tgt.dims = dims;
  tgt.batch = static_cast<int>(batch_x0.size());
  tgt.x_t.resize(1, static_cast<Index>(tgt.batch) * n);
  tgt.eps.resize(1, static_cast<Index>(tgt.batch) * n);
  tgt.ts.resize(batch_x0.size());
  for (std::size_t b = 0; b < batch_x0.size(); ++b) {
    const auto& x0 = batch_x0[b];
    if (x0.shape != dims) throw ValidationError("make_training_targets: ragged batch shapes");
    if ((x0.v < S(-1.0001)).any() || (x0.v > S(1.0001)).any())
      throw ValidationError("make_training_targets: batch values outside [-1,1]");
    const int t = static_cast<int>(rng.uniform_int(1, schedule.steps()));
    tgt.ts[b] = t;
    const S sa = static_cast<S>(std::sqrt(schedule.alpha_bar(t)));
    const S sn = static_cast<S>(std::sqrt(1.0 - schedule.alpha_bar(t)));
    for (Index i = 0; i < n; ++i) {
      const S e = static_cast<S>(rng.normal());
      tgt.eps(0, static_cast<Index>(b) * n + i) = e;
      tgt.x_t(0, static_cast<Index>(b) * n + i) = sa * x0.v[i] + sn * e;
    }
  }
  return tgt;
}

// Mean squared error over every batch element and pixel.
template <typename S>
S eps_loss(const MatX<S>& eps_hat, const MatX<S>& eps) {
  if (eps_hat.rows() != eps.rows() || eps_hat.cols() != eps.cols())
    throw ValidationError("eps_loss: shape mismatch");
  return (eps_hat - eps).array().square().mean();
}

// One optimizer step on a batch; returns the loss before the update.
template <typename S>
S train_step(TimeUnet<S>& net, AdamState<S>& adam, const std::vector<Field<S>>& batch_x0,
             const NoiseSchedule& schedule, Rng& rng, const AdamParams& params = {}) {
  for (const auto& x0 : batch_x0)
    if (x0.shape != net.config().patch_shape)
      throw ValidationError("train_step: batch shape " + shape_str(x0.shape) +
                            " does not match patch shape " +
                            shape_str(net.config().patch_shape));
  TrainTargets<S> tgt = make_training_targets(batch_x0, schedule, rng);
  UnetTrace<S> trace;
  MatX<S> eps_hat = net.forward(tgt.x_t, tgt.dims, tgt.batch, tgt.ts, &trace);
  const S loss = eps_loss(eps_hat, tgt.eps);
  MatX<S> dout = (S(2) / static_cast<S>(eps_hat.size())) * (eps_hat - tgt.eps);
  net.params().zero_grads();
  net.backward(trace, dout);
  adam.step(net.params(), params);
  return loss;
}

struct TrainState {
  std::int64_t step = 0;
  std::vector<std::pair<std::int64_t, double>> loss_history;
  std::optional<std::filesystem::path> checkpoint_path;
  std::uint64_t rng_seed = 0;
};

struct TrainOptions {
  AdamParams adam;
  int batch_size = 4;
  double ema_decay = 0.0;  // 0 disables the parameter EMA
  std::int64_t checkpoint_every = 0;
  std::int64_t log_every = 500;
};

// Owns the network, optimizer and bookkeeping for a training run. Each step s
// derives its RNG from (seed, s), so training can be checkpointed and resumed
// with a bit-identical continuation.
class Trainer {
 public:
  Trainer(const DenoiserConfig& cfg, const NoiseSchedule& schedule, std::uint64_t seed,
          TrainOptions options = {})
      : net_(cfg, seed), adam_(net_.params()), schedule_(schedule), options_(options) {
    state_.rng_seed = seed;
    if (options_.ema_decay > 0.0) init_ema();
  }

  const TimeUnet<float>& net() const { return net_; }
  TimeUnet<float>& net() { return net_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const TrainState& state() const { return state_; }
  const TrainOptions& options() const { return options_; }
  const std::optional<std::vector<MatX<float>>>& ema() const { return ema_; }

  // Runs until `target_steps` total steps have been taken (counting any
  // resumed progress). Writes `ckpt-<step>.ckpt` every checkpoint_every steps
  // and `checkpoint.ckpt` at the end when out_dir is given.
  TrainState run(const PatchSource<float>& source, std::int64_t target_steps,
                 const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    if (target_steps < state_.step)
      throw ValidationError("train: target steps " + std::to_string(target_steps) +
                            " below resumed step " + std::to_string(state_.step));
    while (state_.step < target_steps) {
      const std::int64_t s = state_.step + 1;
      Rng rng(derive_seed(derive_seed(state_.rng_seed, 0x747261696eull), static_cast<std::uint64_t>(s)));
      std::vector<Field<float>> batch;
      batch.reserve(static_cast<std::size_t>(options_.batch_size));
      for (int b = 0; b < options_.batch_size; ++b) batch.push_back(source.sample(rng));
      const float loss = train_step(net_, adam_, batch, schedule_, rng, options_.adam);
      if (!std::isfinite(loss))
        throw RuntimeError("train: non-finite loss at step " + std::to_string(s) +
                           " (lr too high or bad data?)");
      state_.step = s;
      state_.loss_history.emplace_back(s, static_cast<double>(loss));
      if (ema_) {
        const float d = static_cast<float>(options_.ema_decay);
        auto& shadow = *ema_;
        for (std::size_t i = 0; i < shadow.size(); ++i)
          shadow[i] = d * shadow[i] + (1.f - d) * net_.params().entries[i].w;
      }
      if (options_.log_every > 0 && s % options_.log_every == 0) {
        std::ostringstream os;
        os << "step " << s << "/" << target_steps << " loss " << loss;
        log_info(os.str());
      }
      if (out_dir && options_.checkpoint_every > 0 && s % options_.checkpoint_every == 0)
        save(*out_dir / ("ckpt-" + std::to_string(s) + ".ckpt"));
    }
    if (out_dir) {
      const auto final_path = *out_dir / "checkpoint.ckpt";
      save(final_path);
      state_.checkpoint_path = final_path;
    }
    return state_;
  }

  void save(const std::filesystem::path& path) const {
    CheckpointFile f;
    f.meta = {{"format", "S2M-CKPT-v1"},
              {"config", config_to_json(net_.config())},
              {"schedule", schedule_to_json(schedule_.spec())},
              {"train_seed", state_.rng_seed},
              {"step", state_.step},
              {"adam_t", adam_.t()},
              {"ema_decay", options_.ema_decay},
              {"batch_size", options_.batch_size},
              {"lr", options_.adam.lr}};
    for (const auto& e : net_.params().entries) f.tensors.push_back(pack_matrix("param/" + e.name, e.w));
    for (std::size_t i = 0; i < net_.params().entries.size(); ++i) {
      f.tensors.push_back(pack_matrix("adam_m/" + net_.params().entries[i].name, adam_.m()[i]));
      f.tensors.push_back(pack_matrix("adam_v/" + net_.params().entries[i].name, adam_.v()[i]));
    }
    if (ema_)
      for (std::size_t i = 0; i < ema_->size(); ++i)
        f.tensors.push_back(pack_matrix("ema/" + net_.params().entries[i].name, (*ema_)[i]));
    std::vector<std::int64_t> steps;
    MatX<float> losses(1, static_cast<Index>(state_.loss_history.size()));
    for (std::size_t i = 0; i < state_.loss_history.size(); ++i) {
      steps.push_back(state_.loss_history[i].first);
      losses(0, static_cast<Index>(i)) = static_cast<float>(state_.loss_history[i].second);
    }
    f.tensors.push_back(pack_i64("loss/steps", steps));
    f.tensors.push_back(pack_matrix("loss/values", losses));
    f.write(path);
  }

  static Trainer load(const std::filesystem::path& path,
                      const std::optional<TrainOptions>& override_options = std::nullopt) {
    CheckpointFile f = CheckpointFile::read(path);
    const DenoiserConfig cfg = config_from_json(f.meta.at("config"));
    const NoiseSchedule schedule = build_schedule(schedule_from_json(f.meta.at("schedule")));
    TrainOptions opt;
    if (override_options) {
      opt = *override_options;
    } else {
      opt.ema_decay = f.meta.value("ema_decay", 0.0);
      opt.batch_size = f.meta.value("batch_size", 4);
      opt.adam.lr = f.meta.value("lr", 1e-4);
    }
    Trainer tr(cfg, schedule, f.meta.at("train_seed").get<std::uint64_t>(), opt);
    load_params_into(f, "param/", tr.net_.params());
    tr.adam_.set_t(f.meta.at("adam_t").get<std::int64_t>());
    for (std::size_t i = 0; i < tr.net_.params().entries.size(); ++i) {
      const auto& name = tr.net_.params().entries[i].name;
      if (const auto* rec = f.find("adam_m/" + name)) unpack_matrix(*rec, tr.adam_.m()[i]);
      if (const auto* rec = f.find("adam_v/" + name)) unpack_matrix(*rec, tr.adam_.v()[i]);
    }
    if (opt.ema_decay > 0.0 && f.find("ema/" + tr.net_.params().entries.front().name)) {
      tr.init_ema();
      for (std::size_t i = 0; i < tr.net_.params().entries.size(); ++i)
        unpack_matrix(*f.find("ema/" + tr.net_.params().entries[i].name), (*tr.ema_)[i]);
    }
    tr.state_.step = f.meta.at("step").get<std::int64_t>();
    if (const auto* srec = f.find("loss/steps")) {
      const auto steps = unpack_i64(*srec);
      MatX<float> losses;
      unpack_matrix(*f.find("loss/values"), losses);
      for (std::size_t i = 0; i < steps.size(); ++i)
        tr.state_.loss_history.emplace_back(steps[i], static_cast<double>(losses(0, static_cast<Index>(i))));
    }
    return tr;
  }

  static void load_params_into(const CheckpointFile& f, const std::string& prefix,
                               ParamStore<float>& store) {
    for (auto& e : store.entries) {
      const auto* rec = f.find(prefix + e.name);
      if (!rec) throw RuntimeError("checkpoint missing tensor " + prefix + e.name);
      MatX<float> w;
      unpack_matrix(*rec, w);
      if (w.rows() != e.w.rows() || w.cols() != e.w.cols())
        throw RuntimeError("checkpoint tensor " + e.name + " has wrong shape");
      e.w = w;
    }
  }

 private:
  void init_ema() {
    ema_.emplace();
    for (const auto& e : net_.params().entries) ema_->push_back(e.w);
  }

  TimeUnet<float> net_;
  AdamState<float> adam_;
  NoiseSchedule schedule_;
  TrainOptions options_;
  TrainState state_;
  std::optional<std::vector<MatX<float>>> ema_;
};

// Inference-only view of a checkpoint: the network, its bound schedule and a
// stable identity for provenance records.
struct LoadedDenoiser {
  TimeUnet<float> net;
  ScheduleSpec schedule;
  std::string id;
  std::int64_t step = 0;
};

inline LoadedDenoiser load_denoiser(const std::filesystem::path& path, bool use_ema = false) {
  CheckpointFile f = CheckpointFile::read(path);
  const DenoiserConfig cfg = config_from_json(f.meta.at("config"));
  TimeUnet<float> net(cfg, f.meta.at("train_seed").get<std::uint64_t>());
  const std::string prefix = use_ema && f.find("ema/stem.w") ? "ema/" : "param/";
  Trainer::load_params_into(f, prefix, net.params());
  return LoadedDenoiser{std::move(net), schedule_from_json(f.meta.at("schedule")),
                        checkpoint_digest(f.tensors), f.meta.at("step").get<std::int64_t>()};
}

}  // namespace s2m::net
