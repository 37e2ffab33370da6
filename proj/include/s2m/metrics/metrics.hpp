#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"

// Quantitative instruments: PSNR (optionally region-masked), ZNCC, histogram
// intersection of value distributions, per-instance IoU with greedy matching,
// and the two-sample rank-sum test with exact small-sample enumeration.

namespace s2m {

// 10*log10(max_val^2 / MSE); +infinity when the (masked) MSE is zero. When a
// region is given the MSE is restricted to region > 0 pixels.
template <typename S>
double psnr(const Field<S>& reference, const Field<S>& test, double max_val,
            const LabelMask* region = nullptr) {
  require_same_shape(reference, test, "psnr");
  if (!(max_val > 0.0)) throw ValidationError("psnr: max_val must be > 0");
  double sum = 0.0;
  Index count = 0;
  if (region) {
    require_same_shape(reference, *region, "psnr(region)");
    for (Index i = 0; i < reference.size(); ++i) {
      if (region->labels[i] <= 0) continue;
      const double d = static_cast<double>(reference.v[i]) - static_cast<double>(test.v[i]);
      sum += d * d;
      ++count;
    }
    if (count == 0) throw ValidationError("psnr: empty evaluation region");
  } else {
    for (Index i = 0; i < reference.size(); ++i) {
      const double d = static_cast<double>(reference.v[i]) - static_cast<double>(test.v[i]);
      sum += d * d;
    }
    count = reference.size();
  }
  const double mse = sum / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

// Zero-normalized cross-correlation: mean of standardized products over the
// region; affine-invariant, in [-1,1]. Zero variance of either operand over
// the region is an error, never a silent 0.
template <typename S>
double zncc(const Field<S>& a, const Field<S>& b, const LabelMask* region = nullptr) {
  require_same_shape(a, b, "zncc");
  if (region) require_same_shape(a, *region, "zncc(region)");
  double sa = 0, sb = 0;
  double min_a = 0, max_a = 0, min_b = 0, max_b = 0;
  Index n = 0;
  for (Index i = 0; i < a.size(); ++i) {
    if (region && region->labels[i] <= 0) continue;
    const double x = static_cast<double>(a.v[i]);
    const double y = static_cast<double>(b.v[i]);
    if (n == 0) {
      min_a = max_a = x;
      min_b = max_b = y;
    } else {
      min_a = std::min(min_a, x);
      max_a = std::max(max_a, x);
      min_b = std::min(min_b, y);
      max_b = std::max(max_b, y);
    }
    sa += x;
    sb += y;
    ++n;
  }
  if (n == 0) throw ValidationError("zncc: empty evaluation region");
  if (min_a == max_a || min_b == max_b) throw ValidationError("zncc: zero-variance operand");
  const double inv = 1.0 / static_cast<double>(n);
  const double ma = sa * inv, mb = sb * inv;
  double va = 0, vb = 0, cov = 0;  // second, centered pass
  for (Index i = 0; i < a.size(); ++i) {
    if (region && region->labels[i] <= 0) continue;
    const double x = static_cast<double>(a.v[i]) - ma;
    const double y = static_cast<double>(b.v[i]) - mb;
    va += x * x;
    vb += y * y;
    cov += x * y;
  }
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

// Histogram intersection sum_k min(p_k, q_k) of the two normalized value
// histograms over a shared binning range. Values outside the range are
// clamped into the edge bins so that identical inputs always score 1.
template <typename S>
double histogram_similarity(const Field<S>& a, const Field<S>& b, int bins, double lo = -4.0,
                            double hi = 4.0) {
  if (bins < 2) throw ValidationError("histogram_similarity: bins must be >= 2");
  if (!(hi > lo)) throw ValidationError("histogram_similarity: empty range");
  if (a.size() == 0 || b.size() == 0) throw ValidationError("histogram_similarity: empty input");
  std::vector<double> pa(static_cast<std::size_t>(bins), 0.0), pb(pa);
  const double scale = bins / (hi - lo);
  auto accumulate = [&](const Field<S>& f, std::vector<double>& p) {
    for (Index i = 0; i < f.size(); ++i) {
      int k = static_cast<int>(std::floor((static_cast<double>(f.v[i]) - lo) * scale));
      k = std::clamp(k, 0, bins - 1);
      p[static_cast<std::size_t>(k)] += 1.0;
    }
    for (double& x : p) x /= static_cast<double>(f.size());
  };
  accumulate(a, pa);
  accumulate(b, pb);
  double s = 0.0;
  for (int k = 0; k < bins; ++k)
    s += std::min(pa[static_cast<std::size_t>(k)], pb[static_cast<std::size_t>(k)]);
  return s;
}

struct InstanceIouResult {
  // (truth id, IoU of its matched prediction), ascending by truth id;
  // unmatched truth instances score 0.
  std::vector<std::pair<int, double>> per_truth;
  double mean_iou = 0.0;
  // Matches whose IoU reached the threshold; informational only — matching
  // and scores are threshold-free (greedy maximal IoU, one-to-one).
  int matched_at_threshold = 0;
};

inline InstanceIouResult instance_iou(const LabelMask& pred, const LabelMask& truth,
                                      double match_threshold = 0.5) {
  require_same_shape(pred, truth, "instance_iou");
  std::unordered_map<int, std::int64_t> area_t, area_p;
  std::unordered_map<std::uint64_t, std::int64_t> inter;
  for (Index i = 0; i < truth.size(); ++i) {
    const int t = truth.labels[i], p = pred.labels[i];
    if (t > 0) ++area_t[t];
    if (p > 0) ++area_p[p];
    if (t > 0 && p > 0)
      ++inter[(static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)) << 32) |
              static_cast<std::uint32_t>(p)];
  }

  struct Pair {
    int t, p;
    double iou;
  };
  std::vector<Pair> pairs;
  pairs.reserve(inter.size());
  for (const auto& [key, cnt] : inter) {
    const int t = static_cast<int>(key >> 32);
    const int p = static_cast<int>(key & 0xffffffffu);
    const double u = static_cast<double>(area_t[t] + area_p[p] - cnt);
    pairs.push_back({t, p, static_cast<double>(cnt) / u});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.t != b.t) return a.t < b.t;
    return a.p < b.p;
  });

  std::unordered_map<int, double> score;
  std::unordered_map<int, char> pred_used;
  InstanceIouResult result;
  for (const Pair& pr : pairs) {
    if (score.count(pr.t) || pred_used.count(pr.p)) continue;
    score[pr.t] = pr.iou;
    pred_used[pr.p] = 1;
    if (pr.iou >= match_threshold) ++result.matched_at_threshold;
  }

  std::vector<int> truth_ids;
  truth_ids.reserve(area_t.size());
  for (const auto& [t, a] : area_t) truth_ids.push_back(t);
  std::sort(truth_ids.begin(), truth_ids.end());
  double sum = 0.0;
  for (int t : truth_ids) {
    const double s = score.count(t) ? score[t] : 0.0;
    result.per_truth.emplace_back(t, s);
    sum += s;
  }
  result.mean_iou = truth_ids.empty() ? 0.0 : sum / static_cast<double>(truth_ids.size());
  return result;
}

struct RankSumResult {
  double u = 0.0;  // Mann-Whitney U of the first sample, midrank ties
  double p_two_sided = 1.0;
  enum class Method { Exact, NormalApprox } method = Method::Exact;
  int n = 0, m = 0;
};

namespace detail {

inline std::vector<double> midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // average of 1-based ranks
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

}  // namespace detail

// Two-sample Mann-Whitney/Wilcoxon rank-sum test, two-sided. Exact p by full
// enumeration of the C(n+m, n) group assignments when n+m <= 20 (ties handled
// by midranks), otherwise a normal approximation with tie and continuity
// corrections. p = min(1, 2*min(tail probabilities)).
inline RankSumResult rank_sum_test(const std::vector<double>& sample_a,
                                   const std::vector<double>& sample_b) {
  const int n = static_cast<int>(sample_a.size());
  const int m = static_cast<int>(sample_b.size());
  if (n < 1 || m < 1) throw ValidationError("rank_sum_test: empty sample");
  const int total = n + m;

  std::vector<double> pooled;
  pooled.reserve(static_cast<std::size_t>(total));
  pooled.insert(pooled.end(), sample_a.begin(), sample_a.end());
  pooled.insert(pooled.end(), sample_b.begin(), sample_b.end());
  const std::vector<double> rank = detail::midranks(pooled);

  double rank_sum_a = 0.0;
  for (int i = 0; i < n; ++i) rank_sum_a += rank[static_cast<std::size_t>(i)];
  const double u_obs = rank_sum_a - 0.5 * n * (n + 1);

  RankSumResult result;
  result.u = u_obs;
  result.n = n;
  result.m = m;

  if (total <= 20) {
    result.method = RankSumResult::Method::Exact;
    // Walk all combinations of n pooled positions assigned to sample A.
    std::vector<int> comb(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) comb[static_cast<std::size_t>(i)] = i;
    std::uint64_t count = 0, count_le = 0, count_ge = 0;
    const double eps = 1e-9;
    while (true) {
      double rs = 0.0;
      for (int i = 0; i < n; ++i) rs += rank[static_cast<std::size_t>(comb[static_cast<std::size_t>(i)])];
      const double u = rs - 0.5 * n * (n + 1);
      ++count;
      if (u <= u_obs + eps) ++count_le;
      if (u >= u_obs - eps) ++count_ge;
      int i = n - 1;
      while (i >= 0 && comb[static_cast<std::size_t>(i)] == total - n + i) --i;
      if (i < 0) break;
      ++comb[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < n; ++j)
        comb[static_cast<std::size_t>(j)] = comb[static_cast<std::size_t>(j - 1)] + 1;
    }
    const double tail = static_cast<double>(std::min(count_le, count_ge));
    result.p_two_sided = std::min(1.0, 2.0 * tail / static_cast<double>(count));
  } else {
    result.method = RankSumResult::Method::NormalApprox;
    const double mean = 0.5 * n * m;
    // Tie correction over groups of equal pooled values.
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double tie_sum = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_sum += t * t * t - t;
      i = j + 1;
    }
    const double nn = static_cast<double>(total);
    const double var = (static_cast<double>(n) * m / 12.0) * ((nn + 1.0) - tie_sum / (nn * (nn - 1.0)));
    if (var <= 0.0) {
      result.p_two_sided = 1.0;  // all observations tied
    } else {
      const double sd = std::sqrt(var);
      const double p_le = detail::normal_cdf((u_obs + 0.5 - mean) / sd);
      const double p_ge = 1.0 - detail::normal_cdf((u_obs - 0.5 - mean) / sd);
      result.p_two_sided = std::min(1.0, 2.0 * std::min(p_le, p_ge));
    }
  }
  return result;
}

}  // namespace s2m
