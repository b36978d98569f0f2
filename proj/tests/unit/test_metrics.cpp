#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "cinegen/metrics.hpp"

using namespace cinegen;

namespace {

// Windowed SSIM written out directly from the definition.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, int h, int w, double L) {
  double g[11];
  double gs = 0;
  for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  double total = 0;
  int count = 0;
  for (int y = 0; y + 11 <= h; ++y)
    for (int x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double k = g[i] * g[j] / (gs * gs);
          const double va = a[static_cast<std::size_t>((y + i) * w + x + j)];
          const double vb = b[static_cast<std::size_t>((y + i) * w + x + j)];
          ma += k * va;
          mb += k * vb;
          aa += k * va * va;
          bb += k * vb * vb;
          ab += k * va * vb;
        }
      const double sa = aa - ma * ma, sb = bb - mb * mb, sab = ab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
      ++count;
    }
  return total / count;
}

std::vector<double> random_image(int n, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = u(rng);
  return v;
}

FeatureSet features(int n, int dim, std::uint32_t seed, double shift = 0.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd;
  FeatureSet f;
  for (int i = 0; i < n; ++i) {
    std::vector<double> r(static_cast<std::size_t>(dim));
    for (auto& x : r) x = nd(rng) + shift;
    f.add(r);
  }
  return f;
}

// Brute-force k-NN manifold membership.
double coverage(const FeatureSet& ref, const FeatureSet& probe, int k) {
  auto dist = [](std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  std::vector<double> radius(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < ref.size(); ++j)
      if (j != i) d.push_back(dist(ref.row(i), ref.row(j)));
    std::sort(d.begin(), d.end());
    radius[i] = d[static_cast<std::size_t>(k) - 1];
  }
  int inside = 0;
  for (std::size_t p = 0; p < probe.size(); ++p)
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (dist(probe.row(p), ref.row(i)) <= radius[i]) {
        ++inside;
        break;
      }
  return static_cast<double>(inside) / static_cast<double>(probe.size());
}

}  // namespace

TEST_CASE("ssim identities and the windowed oracle") {
  const auto a = random_image(24 * 20, 1);
  CHECK(ssim(a, a, 24, 20, 1.0) == 1.0);
  const std::vector<double> c(400, 0.3);
  CHECK(ssim(c, c, 20, 20, 1.0) == doctest::Approx(1.0));

  std::vector<double> c2(400, 0.8);
  const double c1 = 0.01 * 0.01;
  CHECK(ssim(c, c2, 20, 20, 1.0) ==
        doctest::Approx((2 * 0.3 * 0.8 + c1) / (0.09 + 0.64 + c1)).epsilon(1e-12));

  const auto b = random_image(24 * 20, 2);
  CHECK(ssim(a, b, 24, 20, 1.0) == doctest::Approx(ssim_oracle(a, b, 24, 20, 1.0)).epsilon(1e-10));
  CHECK_THROWS(ssim(std::vector<double>(100), std::vector<double>(100), 10, 10, 1.0));
}

TEST_CASE("d-SSIM") {
  Volume4D v({4, 16, 16, 3}, {}, VolumeKind::image);
  const auto img = random_image(16 * 16, 3);
  for (int d = 0; d < 4; ++d)
    for (int t = 0; t < 3; ++t)
      for (int h = 0; h < 16; ++h)
        for (int w = 0; w < 16; ++w) v.at(d, h, w, t) = static_cast<float>(img[static_cast<std::size_t>(h * 16 + w)]);
  CHECK(d_ssim(v, 1.0).mean == doctest::Approx(1.0));

  // Checkerboard slices alternating with their inverse.
  Volume4D cb({3, 16, 16, 2}, {}, VolumeKind::image);
  std::vector<double> s0(256), s1(256);
  for (int h = 0; h < 16; ++h)
    for (int w = 0; w < 16; ++w) {
      const double x = (h + w) % 2;
      s0[static_cast<std::size_t>(h * 16 + w)] = x;
      s1[static_cast<std::size_t>(h * 16 + w)] = 1 - x;
      for (int d = 0; d < 3; ++d)
        for (int t = 0; t < 2; ++t) cb.at(d, h, w, t) = static_cast<float>(d % 2 ? 1 - x : x);
    }
  const auto vals = d_ssim_values(cb, 1.0);
  REQUIRE(vals.size() == 4);
  const double want = ssim_oracle(s0, s1, 16, 16, 1.0);
  for (double x : vals) CHECK(x == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("center of mass") {
  std::vector<double> m(30 * 40, 0.0);
  CHECK(!center_of_mass(m, 30, 40).has_value());
  m[20 * 40 + 10] = 1.0;
  const auto p = center_of_mass(m, 30, 40);
  REQUIRE(p.has_value());
  CHECK(p->x == 10.0);
  CHECK(p->y == 20.0);

  std::fill(m.begin(), m.end(), 0.0);
  const double cx = 17.3, cy = 12.6;
  for (int h = 0; h < 30; ++h)
    for (int w = 0; w < 40; ++w)
      if ((w - cx) * (w - cx) + (h - cy) * (h - cy) <= 36.0) m[static_cast<std::size_t>(h * 40 + w)] = 1;
  const auto q = center_of_mass(m, 30, 40);
  CHECK(std::abs(q->x - cx) < 0.5);
  CHECK(std::abs(q->y - cy) < 0.5);
}

TEST_CASE("axis residual") {
  std::vector<std::optional<Point2>> line;
  for (int s = 0; s < 6; ++s) line.push_back(Point2{3.0 + 0.7 * s, 9.0 - 1.3 * s});
  CHECK(ar_ed_from_centers(line) == doctest::Approx(0.0).epsilon(1e-12));

  // x on a line, y alternating ±1. Least squares on s = 0..5 absorbs part of
  // the pattern into the slope (−3/17.5); the remaining residuals average 32/35.
  std::vector<std::optional<Point2>> alt;
  for (int s = 0; s < 6; ++s) alt.push_back(Point2{2.0 + s, s % 2 == 0 ? 1.0 : -1.0});
  const double slope = -3.0 / 17.5;
  double oracle = 0;
  for (int s = 0; s < 6; ++s) oracle += std::abs((s % 2 == 0 ? 1.0 : -1.0) - slope * (s - 2.5));
  oracle /= 6;
  CHECK(oracle == doctest::Approx(32.0 / 35.0));
  CHECK(ar_ed_from_centers(alt) == doctest::Approx(oracle).epsilon(1e-12));

  // Absent centers are skipped; fewer than 3 present is an error.
  alt[2].reset();
  CHECK_NOTHROW(ar_ed_from_centers(alt));
  std::vector<std::optional<Point2>> two{Point2{0, 0}, std::nullopt, Point2{1, 1}};
  CHECK_THROWS(ar_ed_from_centers(two));

  // Adding a linear drift leaves the residuals unchanged.
  std::vector<std::optional<Point2>> drift;
  for (int s = 0; s < 6; ++s) drift.push_back(Point2{2.0 + s + 0.4 * s, (s % 2 == 0 ? 1.0 : -1.0) - 0.9 * s});
  CHECK(ar_ed_from_centers(drift) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("volume curves and EF") {
  Volume4D m({10, 10, 10, 2}, {1, 1, 1, 0.1}, VolumeKind::mask);
  for (int d = 0; d < 10; ++d)
    for (int h = 0; h < 10; ++h)
      for (int w = 0; w < 10; ++w) m.at(d, h, w, 0) = 1;
  const auto curve = lv_volume_curve(m);
  CHECK(curve[0] == doctest::Approx(1.0));
  CHECK(curve[1] == 0.0);

  const std::vector<double> v{100, 80, 40, 70};
  CHECK(ef(v) == doctest::Approx(0.6));
  CHECK(ed_frame(v) == 0);
  CHECK(ef(std::vector<double>{5, 5, 5}) == 0.0);
  const std::vector<double> rescaled{300, 240, 120, 210};
  CHECK(ef(rescaled) == doctest::Approx(ef(v)));
}

TEST_CASE("curve normalization") {
  const std::vector<double> peaked{4, 3, 1, 2};
  const auto n = normalize_curve(peaked, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(n[i] == doctest::Approx(peaked[i] / 4));

  const std::vector<double> c{3, 5, 9, 4, 2, 1, 2, 2.5};
  auto shifted = c;
  std::rotate(shifted.begin(), shifted.begin() + 3, shifted.end());
  CHECK(normalize_curve(c, 20) == normalize_curve(shifted, 20));

  // Triangle wave, peak at 0, resampled 8 -> 32 by periodic linear interpolation.
  const std::vector<double> tri{8, 6, 4, 2, 0, 2, 4, 6};
  const auto r = normalize_curve(tri, 32);
  for (int i = 0; i < 32; ++i) {
    const double pos = i * 8.0 / 32.0;
    const int lo = static_cast<int>(std::floor(pos));
    const double f = pos - lo;
    const double want = (tri[static_cast<std::size_t>(lo)] * (1 - f) + tri[static_cast<std::size_t>((lo + 1) % 8)] * f) / 8.0;
    CHECK(r[static_cast<std::size_t>(i)] == doctest::Approx(want));
  }
}

TEST_CASE("Wasserstein-2 on the line") {
  const std::vector<double> a{0, 0}, b{0, 2};
  CHECK(w2_1d(a, b) == doctest::Approx(std::sqrt(2.0)));
  const std::vector<double> x{0.3, -1.0, 2.5, 0.7};
  CHECK(w2_1d(x, x) == 0.0);
  auto y = x;
  for (auto& v : y) v += 1.5;
  CHECK(w2_1d(x, y) == doctest::Approx(1.5));
  const std::vector<double> z{4.0, 0.1, -0.2};
  CHECK(w2_1d(x, z) == doctest::Approx(w2_1d(z, x)));
  auto xs = x, zs = z;
  for (auto& v : xs) v -= 7;
  for (auto& v : zs) v -= 7;
  CHECK(w2_1d(xs, zs) == doctest::Approx(w2_1d(x, z)));
  CHECK_THROWS(w2_1d(std::vector<double>{}, z));
}

TEST_CASE("Frechet distance") {
  const auto f = features(100, 5, 4);
  CHECK(frechet_distance(f, f) <= 1e-6);
  const auto wide = features(10, 50, 5);
  CHECK(frechet_distance(wide, wide) <= 1e-6);

  // Same centered samples, mean moved by a norm-2 vector.
  FeatureSet g;
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::vector<double> r(f.row(i).begin(), f.row(i).end());
    r[0] += 1.2;
    r[3] -= 1.6;
    g.add(r);
  }
  CHECK(frechet_distance(f, g) == doctest::Approx(4.0).epsilon(1e-6));

  // 1-D: unit sample variance against four times that.
  std::vector<double> s(200);
  std::mt19937 rng(6);
  std::normal_distribution<double> nd;
  for (auto& v : s) v = nd(rng);
  const double m = std::accumulate(s.begin(), s.end(), 0.0) / 200;
  double var = 0;
  for (double v : s) var += (v - m) * (v - m);
  var /= 199;
  FeatureSet a1, b1;
  for (double v : s) {
    const double z = (v - m) / std::sqrt(var);
    a1.add(std::vector<double>{z});
    b1.add(std::vector<double>{2 * z});
  }
  CHECK(frechet_distance(a1, b1) == doctest::Approx(1.0).epsilon(1e-5));

  for (std::uint32_t k = 0; k < 5; ++k)
    CHECK(frechet_distance(features(64, 8, 10 + k), features(64, 8, 20 + k, 0.3)) >= 0.0);
}

TEST_CASE("precision and recall") {
  const auto f = features(30, 4, 7);
  const auto pr = precision_recall(f, f, 3);
  CHECK(pr.precision == 1.0);
  CHECK(pr.recall == 1.0);

  const auto far = features(30, 4, 8, 1000.0);
  const auto sep = precision_recall(f, far, 3);
  CHECK(sep.precision == 0.0);
  CHECK(sep.recall == 0.0);

  const auto g = features(40, 4, 9, 0.5);
  for (int k : {1, 3, 5}) {
    const auto r = precision_recall(f, g, k);
    CHECK(r.precision == doctest::Approx(coverage(f, g, k)));
    CHECK(r.recall == doctest::Approx(coverage(g, f, k)));
  }

  FeatureSet line, one;
  for (int i = 0; i < 5; ++i) line.add(std::vector<double>{static_cast<double>(i)});
  one.add(std::vector<double>{1.5});
  CHECK_THROWS(precision_recall(line, one, 1));
  CHECK_THROWS(precision_recall(line, line, 0));
}

TEST_CASE("k selection") {
  const auto f = features(10, 3, 11);
  const auto dup = select_k_halves(f, f, 0.95);
  CHECK(dup.k == 1);
  CHECK(dup.satisfied);
  CHECK(select_k(features(40, 3, 12), 0.0, 1).k == 1);

  const auto real = features(200, 8, 13);
  const auto sel = select_k(real, 0.95, 2);
  CHECK(sel.satisfied);
  CHECK(sel.k <= 10);
  CHECK(sel.precision >= 0.95);
  CHECK(sel.recall >= 0.95);
  CHECK(select_k(real, 0.95, 2).k == sel.k);
  CHECK_THROWS(select_k(features(6, 3, 14), 0.95, 1));
}

TEST_CASE("k selection agrees with a brute-force scan") {
  const auto a = features(25, 6, 15), b = features(25, 6, 16);
  int k_oracle = 24;
  for (int k = 1; k < 25; ++k)
    if (coverage(a, b, k) >= 0.9 && coverage(b, a, k) >= 0.9) {
      k_oracle = k;
      break;
    }
  CHECK(select_k_halves(a, b, 0.9).k == k_oracle);
}

TEST_CASE("identity-pool features") {
  Volume4D c({6, 40, 40, 16}, {}, VolumeKind::image);
  for (auto& v : c.data()) v = 0.37F;
  const auto fc = identity_pool_features(c);
  CHECK(fc.size() == 4 * 16 * 16 * 8);
  for (double v : fc) CHECK(v == doctest::Approx(0.37));

  // Exactly twice the grid in every axis: each feature is a 2x2x2x2 block mean.
  Volume4D v({8, 32, 32, 16}, {}, VolumeKind::image);
  std::mt19937 rng(17);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& x : v.data()) x = u(rng);
  const auto f = identity_pool_features(v);
  CHECK(identity_pool_features(v) == f);
  for (int i : {0, 1234, 8191}) {
    const int t = i % 8, w = (i / 8) % 16, h = (i / 128) % 16, d = i / 2048;
    double s = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int e = 0; e < 2; ++e)
          for (int g = 0; g < 2; ++g) s += v.at(2 * d + a, 2 * h + b, 2 * w + e, 2 * t + g);
    CHECK(f[static_cast<std::size_t>(i)] == doctest::Approx(s / 16).epsilon(1e-6));
  }
}

TEST_CASE("threshold segmentation") {
  Volume4D v({1, 1, 3, 1}, {}, VolumeKind::image, {0.2F, 0.75F, 0.9F});
  const auto m = threshold_mask(v, 0.75);
  CHECK(m.kind() == VolumeKind::mask);
  CHECK(m.at(0, 0, 0, 0) == 0.0F);
  CHECK(m.at(0, 0, 1, 0) == 0.0F);
  CHECK(m.at(0, 0, 2, 0) == 1.0F);
}
