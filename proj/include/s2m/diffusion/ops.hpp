#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"
#include "s2m/diffusion/schedule.hpp"

// Pure diffusion math on fields: closed-form forward marginal, the algebraic
// x0 inverse, single ancestral reverse steps and the truncated chain. No
// learning, no I/O; everything is a function of its inputs plus an explicit seed.

namespace s2m {

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps; t = 0 returns x0.
template <typename S>
Field<S> forward_sample(const Field<S>& x0, int t, const Field<S>& noise,
                        const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.steps())
    throw ValidationError("forward_sample: t=" + std::to_string(t) + " outside [0," +
                          std::to_string(schedule.steps()) + "]");
  require_same_shape(x0, noise, "forward_sample");
  if (t == 0) return x0;
  const double ab = schedule.alpha_bar(t);
  Field<S> out = x0;
  out.v = x0.v * static_cast<S>(std::sqrt(ab)) + noise.v * static_cast<S>(std::sqrt(1.0 - ab));
  return out;
}

// (x_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t).
// Clamping to [-1,1] is on by default for sampling use; tests pass false to
// keep the algebraic identities exact.
template <typename S>
Field<S> predict_x0(const Field<S>& x_t, const Field<S>& eps_hat, int t,
                    const NoiseSchedule& schedule, bool clamp = true) {
  if (t < 1 || t > schedule.steps())
    throw ValidationError("predict_x0: t=" + std::to_string(t) + " outside [1," +
                          std::to_string(schedule.steps()) + "]");
  require_same_shape(x_t, eps_hat, "predict_x0");
  const double ab = schedule.alpha_bar(t);
  const S inv = static_cast<S>(1.0 / std::sqrt(ab));
  const S c = static_cast<S>(std::sqrt(1.0 - ab));
  Field<S> out = x_t;
  out.v = (x_t.v - c * eps_hat.v) * inv;
  if (clamp) out.v = out.v.min(S(1)).max(S(-1));
  return out;
}

enum class ReverseVariance { Posterior, Beta };

struct ReverseOptions {
  ReverseVariance variance = ReverseVariance::Posterior;
  // Clamp the implied x0 to [-1,1] before forming the step mean (sampling
  // default via SampleOptions; off here so unit identities stay exact).
  bool clamp_x0 = false;
};

// One ancestral step x_t -> x_{t-1}. z is the standard-normal innovation; it
// is ignored at t = 1 (the chain's final step is deterministic).
template <typename S>
Field<S> reverse_step(const Field<S>& x_t, const Field<S>& eps_hat, int t,
                      const NoiseSchedule& schedule, const Field<S>& z,
                      const ReverseOptions& opts = {}) {
  if (t < 1 || t > schedule.steps())
    throw ValidationError("reverse_step: t=" + std::to_string(t) + " outside [1," +
                          std::to_string(schedule.steps()) + "]");
  require_same_shape(x_t, eps_hat, "reverse_step");
  require_same_shape(x_t, z, "reverse_step(z)");

  const double beta = schedule.beta(t);
  const double alpha = schedule.alpha(t);
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);

  Field<S> out = x_t;
  if (opts.clamp_x0) {
    // Posterior mean through the clamped x0:
    //   mu = sqrt(ab_prev)*beta/(1-ab) * x0 + sqrt(alpha)*(1-ab_prev)/(1-ab) * x_t
    Field<S> x0 = predict_x0(x_t, eps_hat, t, schedule, /*clamp=*/true);
    const S c0 = static_cast<S>(std::sqrt(ab_prev) * beta / (1.0 - ab));
    const S c1 = static_cast<S>(std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab));
    out.v = c0 * x0.v + c1 * x_t.v;
  } else {
    // Direct form: (x_t - beta/sqrt(1-ab) * eps_hat) / sqrt(alpha).
    const S c = static_cast<S>(beta / std::sqrt(1.0 - ab));
    const S inv = static_cast<S>(1.0 / std::sqrt(alpha));
    out.v = (x_t.v - c * eps_hat.v) * inv;
  }

  if (t > 1) {
    const double var =
        opts.variance == ReverseVariance::Posterior ? schedule.posterior_variance(t) : beta;
    out.v += static_cast<S>(std::sqrt(var)) * z.v;
  }
  require_finite(out, "reverse_step");
  return out;
}

struct SampleOptions {
  ReverseVariance variance = ReverseVariance::Posterior;
  bool clamp_x0 = true;
};

// Runs the reverse chain from step t_start down to 1. `denoise` is any
// callable (x_t, t) -> eps_hat. Deterministic given (denoise, x_start, seed).
template <typename S, typename Fn>
Field<S> sample_chain(Fn&& denoise, Field<S> x_start, int t_start, const NoiseSchedule& schedule,
                      std::uint64_t seed, const SampleOptions& opts = {}) {
  if (t_start < 1 || t_start > schedule.steps())
    throw ValidationError("sample_chain: t_start=" + std::to_string(t_start) + " outside [1," +
                          std::to_string(schedule.steps()) + "]");
  Rng rng(derive_seed(seed, 0x636861696eull));  // "chain"
  ReverseOptions step_opts{opts.variance, opts.clamp_x0};
  Field<S> x = std::move(x_start);
  Field<S> z = Field<S>::zeros(x.shape, x.range);
  for (int t = t_start; t >= 1; --t) {
    Field<S> eps_hat;
    try {
      eps_hat = denoise(x, t);
    } catch (const std::exception& e) {
      throw RuntimeError("sample_chain: denoiser failed at step t=" + std::to_string(t) + ": " +
                         e.what());
    }
    if (t > 1)
      z.v = rng.normal_array<S>(z.size());
    else
      z.v.setZero();
    x = reverse_step(x, eps_hat, t, schedule, z, step_opts);
  }
  return x;
}

}  // namespace s2m
