#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "s2m/core/rng.hpp"
#include "s2m/metrics/metrics.hpp"

using namespace s2m;

namespace {
Field<double> make_field(const Shape& shape, const std::vector<double>& v) {
  Field<double> f(shape);
  for (Index i = 0; i < f.size(); ++i) f.v[i] = v[static_cast<std::size_t>(i)];
  return f;
}
}  // namespace

TEST_CASE("psnr: identical images flag infinite") {
  const auto a = Field<double>::constant({8, 8}, 0.3);
  CHECK(std::isinf(psnr(a, a, 1.0)));
}

TEST_CASE("psnr: uniform error of MSE 0.01 gives exactly 20 dB") {
  const auto ref = Field<double>::zeros({10, 10});
  const auto test = Field<double>::constant({10, 10}, 0.1);
  CHECK(psnr(ref, test, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("psnr: region restricted to matching pixels flags infinite") {
  Field<double> ref = Field<double>::zeros({4, 4});
  Field<double> test = Field<double>::constant({4, 4}, 0.5);
  test.v[0] = 0.0;
  test.v[1] = 0.0;
  LabelMask region({4, 4});
  region.labels[0] = 1;
  region.labels[1] = 1;
  CHECK(std::isinf(psnr(ref, test, 1.0, &region)));
  CHECK(std::isfinite(psnr(ref, test, 1.0)));
}

TEST_CASE("psnr validates its inputs") {
  const auto a = Field<double>::zeros({4, 4});
  const auto b = Field<double>::zeros({4, 5});
  CHECK_THROWS_AS(psnr(a, b, 1.0), ValidationError);
  CHECK_THROWS_AS(psnr(a, a, 0.0), ValidationError);
  LabelMask empty({4, 4});
  CHECK_THROWS_AS(psnr(a, a, 1.0, &empty), ValidationError);
}

TEST_CASE("psnr decreases statistically with larger noise") {
  Rng rng(50);
  Field<double> ref({16, 16});
  for (Index i = 0; i < ref.size(); ++i) ref.v[i] = rng.uniform();
  double mean_small = 0.0, mean_large = 0.0;
  const int trials = 50;
  for (int k = 0; k < trials; ++k) {
    Field<double> small = ref, large = ref;
    for (Index i = 0; i < ref.size(); ++i) {
      small.v[i] += 0.05 * rng.normal();
      large.v[i] += 0.20 * rng.normal();
    }
    mean_small += psnr(ref, small, 1.0);
    mean_large += psnr(ref, large, 1.0);
  }
  CHECK(mean_small / trials > mean_large / trials);
}

TEST_CASE("zncc: self-correlation and affine invariance") {
  Rng rng(51);
  Field<double> x({12, 12});
  for (Index i = 0; i < x.size(); ++i) x.v[i] = rng.uniform();
  CHECK(zncc(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  Field<double> pos = x, neg = x;
  pos.v = 2.0 * x.v + 3.0;
  neg.v = -0.5 * x.v + 1.0;
  CHECK(zncc(x, pos) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(zncc(x, neg) == doctest::Approx(-1.0).epsilon(1e-10));
}

TEST_CASE("zncc matches a direct-formula oracle") {
  const auto a = make_field({2, 2}, {1, 2, 3, 4});
  const auto b = make_field({2, 2}, {2, 4, 1, 3});
  // Direct computation: standardized product mean.
  const double ma = 2.5, mb = 2.5;
  double va = 0, vb = 0, cov = 0;
  const double av[] = {1, 2, 3, 4}, bv[] = {2, 4, 1, 3};
  for (int i = 0; i < 4; ++i) {
    va += (av[i] - ma) * (av[i] - ma) / 4.0;
    vb += (bv[i] - mb) * (bv[i] - mb) / 4.0;
    cov += (av[i] - ma) * (bv[i] - mb) / 4.0;
  }
  const double want = cov / std::sqrt(va * vb);
  CHECK(zncc(a, b) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("zncc is symmetric and bounded") {
  Rng rng(52);
  for (int trial = 0; trial < 20; ++trial) {
    Field<double> a({9, 9}), b({9, 9});
    for (Index i = 0; i < a.size(); ++i) {
      a.v[i] = rng.normal();
      b.v[i] = rng.normal();
    }
    const double ab = zncc(a, b), ba = zncc(b, a);
    CHECK(std::abs(ab - ba) < 1e-12);
    CHECK(ab >= -1.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("zncc reports zero-variance operands") {
  const auto flat = Field<double>::constant({5, 5}, 0.5);
  Field<double> x({5, 5});
  for (Index i = 0; i < x.size(); ++i) x.v[i] = static_cast<double>(i);
  CHECK_THROWS_AS(zncc(flat, x), ValidationError);
  CHECK_THROWS_AS(zncc(x, flat), ValidationError);
}

TEST_CASE("zncc with a region mask") {
  Field<double> a({4, 4}), b({4, 4});
  for (Index i = 0; i < 16; ++i) {
    a.v[i] = static_cast<double>(i);
    b.v[i] = i < 8 ? static_cast<double>(i) : -static_cast<double>(i);
  }
  LabelMask region({4, 4});
  for (Index i = 0; i < 8; ++i) region.labels[i] = 1;
  CHECK(zncc(a, b, &region) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("histogram similarity: identical, disjoint, and bounds") {
  Rng rng(53);
  Field<double> a({16, 16});
  for (Index i = 0; i < a.size(); ++i) a.v[i] = rng.normal();
  CHECK(histogram_similarity(a, a, 64) == doctest::Approx(1.0).epsilon(1e-12));

  const auto lo = Field<double>::constant({8, 8}, -3.0);
  const auto hi = Field<double>::constant({8, 8}, 3.0);
  CHECK(histogram_similarity(lo, hi, 64) == 0.0);

  Field<double> b({16, 16});
  for (Index i = 0; i < b.size(); ++i) b.v[i] = rng.normal();
  const double s = histogram_similarity(a, b, 64);
  CHECK(s >= 0.0);
  CHECK(s <= 1.0);
  CHECK(s == doctest::Approx(histogram_similarity(b, a, 64)).epsilon(1e-12));
}

TEST_CASE("histogram similarity of two large standard-normal fields exceeds 0.97") {
  Rng rng(54);
  Field<double> a({256, 256}), b({256, 256});
  for (Index i = 0; i < a.size(); ++i) {
    a.v[i] = rng.normal();
    b.v[i] = rng.normal();
  }
  CHECK(histogram_similarity(a, b, 64) > 0.97);
}

TEST_CASE("histogram similarity validates parameters") {
  const auto a = Field<double>::zeros({4, 4});
  CHECK_THROWS_AS(histogram_similarity(a, a, 1), ValidationError);
  CHECK_THROWS_AS(histogram_similarity(a, a, 64, 2.0, -2.0), ValidationError);
}

TEST_CASE("instance IoU: exact match and all-background prediction") {
  LabelMask truth({8, 8});
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 3; ++x) truth.labels[y * 8 + x] = 1;
  for (Index y = 5; y < 8; ++y)
    for (Index x = 5; x < 8; ++x) truth.labels[y * 8 + x] = 2;

  const auto same = instance_iou(truth, truth);
  CHECK(same.mean_iou == doctest::Approx(1.0));
  CHECK(same.per_truth.size() == 2);
  for (const auto& [id, iou] : same.per_truth) CHECK(iou == doctest::Approx(1.0));
  CHECK(same.matched_at_threshold == 2);

  const LabelMask empty({8, 8});
  const auto none = instance_iou(empty, truth);
  CHECK(none.mean_iou == 0.0);
  CHECK(none.per_truth.size() == 2);
}

TEST_CASE("instance IoU: 2x2 squares overlapping in 2 pixels score 1/3") {
  LabelMask truth({4, 4}), pred({4, 4});
  // truth square at (0..1, 0..1); pred square shifted one column right
  truth.labels[0] = truth.labels[1] = truth.labels[4] = truth.labels[5] = 1;
  pred.labels[1] = pred.labels[2] = pred.labels[5] = pred.labels[6] = 1;
  const auto r = instance_iou(pred, truth);
  CHECK(r.per_truth.size() == 1);
  CHECK(r.per_truth[0].second == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.mean_iou == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // below the default threshold, so informationally unmatched
  CHECK(r.matched_at_threshold == 0);
}

TEST_CASE("instance IoU: greedy one-to-one matching uses each prediction once") {
  LabelMask truth({1, 6}), pred({1, 6});
  // two truth instances, one prediction covering both
  truth.labels[0] = truth.labels[1] = truth.labels[2] = 1;
  truth.labels[3] = truth.labels[4] = 2;
  pred.labels[1] = pred.labels[2] = pred.labels[3] = 1;
  const auto r = instance_iou(pred, truth);
  // pred 1 overlaps truth 1 with IoU 2/4 and truth 2 with IoU 1/4; it must
  // match truth 1 only.
  CHECK(r.per_truth[0].second == doctest::Approx(0.5));
  CHECK(r.per_truth[1].second == 0.0);
}

TEST_CASE("instance IoU is invariant to label permutations") {
  Rng rng(55);
  LabelMask truth({48, 48}), pred({48, 48});
  // random rectangles
  auto stamp = [&](LabelMask& m, int id, Index y0, Index x0, Index h, Index w) {
    for (Index y = y0; y < std::min<Index>(48, y0 + h); ++y)
      for (Index x = x0; x < std::min<Index>(48, x0 + w); ++x) m.labels[y * 48 + x] = id;
  };
  for (int id = 1; id <= 5; ++id) {
    stamp(truth, id, rng.uniform_int(0, 40), rng.uniform_int(0, 40), 6, 6);
    stamp(pred, id, rng.uniform_int(0, 40), rng.uniform_int(0, 40), 6, 6);
  }
  const double base = instance_iou(pred, truth).mean_iou;
  LabelMask permuted = pred;
  const int perm[] = {0, 4, 1, 5, 2, 3};  // relabel 1..5
  for (Index i = 0; i < permuted.size(); ++i) permuted.labels[i] = perm[permuted.labels[i]];
  CHECK(instance_iou(permuted, truth).mean_iou == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("rank-sum: fully separated samples of size 3") {
  const auto r = rank_sum_test({1, 2, 3}, {4, 5, 6});
  CHECK(r.u == doctest::Approx(0.0));
  CHECK(r.method == RankSumResult::Method::Exact);
  CHECK(r.p_two_sided == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("rank-sum: identical singletons carry no evidence") {
  const auto r = rank_sum_test({5}, {5});
  CHECK(r.p_two_sided == doctest::Approx(1.0));
  CHECK(r.u == doctest::Approx(0.5));
}

TEST_CASE("rank-sum: empty samples are rejected") {
  CHECK_THROWS_AS(rank_sum_test({}, {1.0}), ValidationError);
  CHECK_THROWS_AS(rank_sum_test({1.0}, {}), ValidationError);
}

namespace {
// Independent oracle: enumerate subsets of pooled positions via bitmasks.
double brute_force_p(const std::vector<double>& a, const std::vector<double>& b) {
  const int n = static_cast<int>(a.size()), total = n + static_cast<int>(b.size());
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> rank(pooled.size());
  {  // midranks by counting comparisons (independent of the implementation's sort)
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      double less = 0, equal = 0;
      for (std::size_t j = 0; j < pooled.size(); ++j) {
        if (pooled[j] < pooled[i]) ++less;
        if (pooled[j] == pooled[i]) ++equal;
      }
      rank[i] = less + (equal + 1.0) / 2.0;
    }
  }
  double u_obs = 0;
  for (int i = 0; i < n; ++i) u_obs += rank[static_cast<std::size_t>(i)];
  u_obs -= 0.5 * n * (n + 1);

  long count = 0, le = 0, ge = 0;
  for (unsigned mask = 0; mask < (1u << total); ++mask) {
    if (__builtin_popcount(mask) != n) continue;
    double rs = 0;
    for (int i = 0; i < total; ++i)
      if (mask & (1u << i)) rs += rank[static_cast<std::size_t>(i)];
    const double u = rs - 0.5 * n * (n + 1);
    ++count;
    if (u <= u_obs + 1e-9) ++le;
    if (u >= u_obs - 1e-9) ++ge;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / static_cast<double>(count));
}
}  // namespace

TEST_CASE("rank-sum exact path equals brute-force enumeration for n+m <= 10") {
  Rng rng(56);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 5));
    const int m = static_cast<int>(rng.uniform_int(1, std::min(9, 10 - n)));
    std::vector<double> a, b;
    // small integer support to exercise ties
    for (int i = 0; i < n; ++i) a.push_back(static_cast<double>(rng.uniform_int(0, 6)));
    for (int i = 0; i < m; ++i) b.push_back(static_cast<double>(rng.uniform_int(0, 6)));
    const auto r = rank_sum_test(a, b);
    CHECK(r.method == RankSumResult::Method::Exact);
    CHECK(r.u >= -1e-12);
    CHECK(r.u <= n * m + 1e-12);
    CHECK(r.p_two_sided == doctest::Approx(brute_force_p(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("rank-sum large samples use the normal approximation") {
  Rng rng(57);
  std::vector<double> a, b;
  for (int i = 0; i < 15; ++i) a.push_back(rng.normal());
  for (int i = 0; i < 15; ++i) b.push_back(rng.normal() + 0.2);
  const auto r = rank_sum_test(a, b);
  CHECK(r.method == RankSumResult::Method::NormalApprox);
  CHECK(r.p_two_sided >= 0.0);
  CHECK(r.p_two_sided <= 1.0);
  CHECK(r.n == 15);
  CHECK(r.m == 15);
  // strongly separated samples give a tiny p
  std::vector<double> lo, hi;
  for (int i = 0; i < 15; ++i) {
    lo.push_back(static_cast<double>(i));
    hi.push_back(static_cast<double>(i) + 100.0);
  }
  CHECK(rank_sum_test(lo, hi).p_two_sided < 1e-4);
}

TEST_CASE("rank-sum approximation is continuous with the exact path at the boundary") {
  // n + m = 20 exact vs 21 approximate on similar data: p values comparable.
  Rng rng(58);
  std::vector<double> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(rng.normal());
    b.push_back(rng.normal() + 1.0);
  }
  const auto exact = rank_sum_test(a, b);
  CHECK(exact.method == RankSumResult::Method::Exact);
  b.push_back(rng.normal() + 1.0);
  const auto approx = rank_sum_test(a, b);
  CHECK(approx.method == RankSumResult::Method::NormalApprox);
  CHECK(std::abs(std::log10(std::max(approx.p_two_sided, 1e-12)) -
                 std::log10(std::max(exact.p_two_sided, 1e-12))) < 1.5);
}
