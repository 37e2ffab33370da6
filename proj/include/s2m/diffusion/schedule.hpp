#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "s2m/core/errors.hpp"

namespace s2m {

enum class ScheduleKind { Linear, Cosine };

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::Linear ? "linear" : "cosine";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::Linear;
  if (s == "cosine") return ScheduleKind::Cosine;
  throw ValidationError("unknown schedule kind '" + s + "' (expected linear|cosine)");
}

// Construction parameters; also serves as the identity a checkpoint embeds so
// generation can refuse a mismatched schedule.
struct ScheduleSpec {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ScheduleKind kind = ScheduleKind::Linear;

  bool operator==(const ScheduleSpec&) const = default;

  std::string id() const {
    std::ostringstream os;
    os << to_string(kind) << "-T" << T << "-b" << beta_start << "-" << beta_end;
    return os.str();
  }
};

// Precomputed diffusion coefficients beta_t, alpha_t, alpha_bar_t for t=1..T.
// Coefficients are kept in double regardless of the field scalar so the
// cumulative products stay exact to ~1e-16.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleSpec spec, std::vector<double> betas) : spec_(spec), betas_(std::move(betas)) {
    if (spec_.T < 1) throw ValidationError("NoiseSchedule: T must be >= 1");
    if (static_cast<int>(betas_.size()) != spec_.T)
      throw ValidationError("NoiseSchedule: beta count does not match T");
    alphas_.resize(betas_.size());
    alpha_bars_.resize(betas_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      const double b = betas_[i];
      if (!(b > 0.0 && b < 1.0))
        throw ValidationError("NoiseSchedule: beta_" + std::to_string(i + 1) + " out of (0,1)");
      if (spec_.kind == ScheduleKind::Linear && i > 0 && b < betas_[i - 1])
        throw ValidationError("NoiseSchedule: linear betas must be non-decreasing");
      alphas_[i] = 1.0 - b;
      prod *= alphas_[i];
      if (!(prod > 0.0 && prod < 1.0))
        throw ValidationError("NoiseSchedule: alpha_bar left (0,1) at t=" + std::to_string(i + 1));
      if (i > 0 && prod >= alpha_bars_[i - 1])
        throw ValidationError("NoiseSchedule: alpha_bar not strictly decreasing");
      alpha_bars_[i] = prod;
    }
  }

  int steps() const { return spec_.T; }
  const ScheduleSpec& spec() const { return spec_; }
  std::string id() const { return spec_.id(); }

  // t is 1-based; alpha_bar(0) == 1 by convention.
  double beta(int t) const { return betas_[check(t)]; }
  double alpha(int t) const { return alphas_[check(t)]; }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_[check(t)];
  }

  // Posterior variance beta~_t = beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(int t) const {
    check(t);
    return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
  }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  int check(int t) const {
    if (t < 1 || t > spec_.T)
      throw ValidationError("step index t=" + std::to_string(t) + " outside [1," +
                            std::to_string(spec_.T) + "]");
    return t - 1;
  }

  ScheduleSpec spec_;
  std::vector<double> betas_, alphas_, alpha_bars_;
};

inline NoiseSchedule build_schedule(const ScheduleSpec& spec) {
  if (spec.T < 1) throw ValidationError("build_schedule: T must be >= 1");
  if (!(spec.beta_start > 0.0 && spec.beta_start <= spec.beta_end && spec.beta_end < 1.0))
    throw ValidationError("build_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(spec.T));
  if (spec.kind == ScheduleKind::Linear) {
    if (spec.T == 1) {
      betas[0] = spec.beta_start;
    } else {
      const double step = (spec.beta_end - spec.beta_start) / (spec.T - 1);
      for (int t = 0; t < spec.T; ++t) betas[t] = spec.beta_start + step * t;
    }
  } else {
    // alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), s = 0.008,
    // betas clipped to 0.999.
    const double s = 0.008;
    auto f = [&](double t) {
      const double a = ((t / spec.T + s) / (1.0 + s)) * 1.5707963267948966;
      const double c = std::cos(a);
      return c * c;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= spec.T; ++t) {
      const double ab = f(static_cast<double>(t)) / f0;
      double b = 1.0 - ab / prev;
      b = std::min(b, 0.999);
      b = std::max(b, 1e-12);
      betas[t - 1] = b;
      prev *= 1.0 - b;
    }
  }
  return NoiseSchedule(spec, std::move(betas));
}

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end,
                                    ScheduleKind kind = ScheduleKind::Linear) {
  return build_schedule(ScheduleSpec{T, beta_start, beta_end, kind});
}

}  // namespace s2m
