#include <doctest.h>

#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "cinegen/metrics.hpp"
#include "cinegen/phantom.hpp"

using namespace cinegen;

namespace {

PhantomConfig small(double ef) {
  PhantomConfig c;
  c.dims = {4, 48, 48, 16};
  c.spacing = {8.0, 2.0, 2.0, 0.06};
  c.r_endo_ed = 22.0;
  c.wall_thickness = 6.0;
  c.target_ef = ef;
  return c;
}

}  // namespace

TEST_CASE("contraction ratio") {
  CHECK(solve_contraction(0.5) == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(solve_contraction(0.6) == doctest::Approx(0.63246).epsilon(1e-5));
  CHECK(solve_contraction(0.0) == 1.0);
}

TEST_CASE("waveform endpoints") {
  CHECK(contraction_waveform(0.0, 0.35) == doctest::Approx(0.0));
  CHECK(contraction_waveform(0.35, 0.35) == doctest::Approx(1.0));
  CHECK(contraction_waveform(0.999999, 0.35) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("untilted phantom has identical centers") {
  auto c = small(0.5);
  c.center_x = 1.5;
  const auto rec = make_phantom(c);
  for (const auto& p : rec.truth.centers) CHECK(p == rec.truth.centers.front());
  std::vector<std::optional<Point2>> cs(rec.truth.centers.begin(), rec.truth.centers.end());
  CHECK(ar_ed_from_centers(cs) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("end-diastole is frame 0") {
  const auto rec = make_phantom(small(0.45));
  const auto& v = rec.truth.volume_ml;
  CHECK(std::max_element(v.begin(), v.end()) - v.begin() == 0);
  CHECK(rec.truth.ef == doctest::Approx(0.45).epsilon(1e-9));
}

TEST_CASE("mask-measured EF tracks the target at full resolution") {
  PhantomConfig c;
  c.dims = {6, 128, 128, 32};
  c.target_ef = 0.5;
  const auto rec = make_phantom(c);
  const auto curve = lv_volume_curve(rec.lv_mask);
  CHECK(std::abs(ef(curve) - 0.5) <= 0.02);
  // Voxel-counted volume vs the analytic ellipse volume.
  for (std::size_t t = 0; t < curve.size(); ++t)
    CHECK(std::abs(curve[t] / rec.truth.volume_ml[t] - 1.0) < 0.03);
}

TEST_CASE("cohorts are reproducible and members regenerate alone") {
  CohortDistribution dist;
  dist.base = small(0.5);
  dist.r_endo_ed = {18.0, 22.0};
  dist.center = {-2.0, 2.0};
  const auto a = make_cohort(6, dist, 99);
  const auto b = make_cohort(6, dist, 99);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].lv_mask == b[i].lv_mask);
  }
  const auto one = make_phantom(sample_phantom_config(dist, 99, 4));
  CHECK(one.image == a[4].image);

  const auto single = make_cohort(1, dist, 5);
  CHECK(single[0].image == make_phantom(sample_phantom_config(dist, 5, 0)).image);
}

TEST_CASE("cohort EF mean sits within a Monte-Carlo bound of the range midpoint") {
  CohortDistribution dist;
  dist.base = small(0.5);
  dist.base.dims = {2, 48, 48, 8};
  dist.r_endo_ed = {18.0, 22.0};
  dist.center = {-2.0, 2.0};
  const int n = 50;
  std::vector<double> efs;
  for (int i = 0; i < n; ++i) efs.push_back(sample_phantom_config(dist, 3, i).target_ef);
  const double mean = std::accumulate(efs.begin(), efs.end(), 0.0) / n;
  const double sd = 0.3 / std::sqrt(12.0);  // uniform on a width-0.3 interval
  CHECK(std::abs(mean - 0.5) < 3.0 * sd / std::sqrt(n));
}

TEST_CASE("a cavity outside the field of view is rejected") {
  auto c = small(0.5);
  c.center_x = 20.0;
  CHECK_THROWS_AS(make_phantom(c), std::invalid_argument);
}

TEST_CASE("config JSON round trip and key checking") {
  auto c = small(0.4);
  c.tilt = 0.5;
  c.intensities.myocardium = 0.4;
  std::vector<std::string> problems;
  const auto back = phantom_config_from_json(phantom_config_to_json(c), problems);
  CHECK(problems.empty());
  CHECK(phantom_config_to_json(back) == phantom_config_to_json(c));

  nlohmann::json bad = {{"dims", {1, 2}}, {"tilt", "x"}, {"nope", 1}, {"intensities", {{"red", 1}}}};
  problems.clear();
  (void)phantom_config_from_json(bad, problems);
  CHECK(problems.size() == 4);

  CohortDistribution dist;
  problems.clear();
  const auto d2 = cohort_distribution_from_json(to_json(dist), problems);
  CHECK(problems.empty());
  CHECK(to_json(d2) == to_json(dist));
}
