#pragma once

// Analytic beating left-ventricle phantom.
//
// Each depth slice holds an elliptical blood pool ringed by myocardium. The
// cavity radius follows a raised-cosine contraction that peaks at
// end-systole; every slice scales by the same ratio rho, so the volumetric
// ejection fraction is exactly 1 - rho^2. End-diastole is frame 0.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinegen/volume.hpp"

namespace cinegen {

struct PhantomIntensities {
  double blood = 1.0;
  double myocardium = 0.45;
  double background = 0.05;
};

struct PhantomConfig {
  Dims4 dims{6, 128, 128, 32};
  Spacing spacing{8.0, 1.5, 1.5, 0.03};
  double target_ef = 0.55;
  double r_endo_ed = 25.0;       // mm, along the width axis
  double wall_thickness = 8.0;   // mm at end-diastole
  double systolic_fraction = 0.35;
  double taper_apex = 0.6;       // radius scale at slice 0, rising linearly to 1
  double aspect = 1.0;           // height semi-axis / width semi-axis
  double tilt = 0.0;             // px per slice along the width axis
  double wobble_amp = 0.0;       // px
  double center_x = 0.0;         // offsets from the grid center, px
  double center_y = 0.0;
  double noise_sigma = 0.0;
  PhantomIntensities intensities{};
  std::uint64_t seed = 0;

  void validate() const;
};

struct Point2 {
  double x = 0.0;  // width index
  double y = 0.0;  // height index
  bool operator==(const Point2&) const = default;
};

struct PhantomTruth {
  std::vector<double> volume_ml;  // analytic cavity volume per frame
  double ef = 0.0;
  double rho = 1.0;
  std::vector<Point2> centers;    // per slice, pixel coordinates
};

struct PhantomRecord {
  PhantomConfig config;
  Volume4D image;
  Volume4D lv_mask;
  PhantomTruth truth;
};

/// Radius ratio rho = sqrt(1 - EF) reaching `target_ef` under uniform in-plane scaling.
double solve_contraction(double target_ef);

/// Raised-cosine contraction g(phase), phase in [0, 1): g(0) = 0,
/// g(systolic_fraction) = 1, smooth return to 0 at phase 1.
double contraction_waveform(double phase, double systolic_fraction);

/// Radius scale of slice s (apex at 0, base at d-1).
double taper_scale(const PhantomConfig& cfg, int s);

PhantomRecord make_phantom(const PhantomConfig& cfg);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Sampling ranges for a synthetic cohort. Fields not covered by a range
/// are taken from `base`.
struct CohortDistribution {
  PhantomConfig base{};
  Range ef{0.35, 0.65};
  Range r_endo_ed{22.0, 28.0};
  Range systolic_fraction{0.3, 0.4};
  Range tilt{-1.0, 1.0};
  Range wobble{0.0, 0.0};
  Range noise{0.0, 0.0};
  Range center{-3.0, 3.0};  // applied independently to x and y

  void validate() const;
};

/// Record i is drawn from a stream keyed by (seed, i), so any member can be
/// regenerated on its own and members may be built in parallel.
PhantomConfig sample_phantom_config(const CohortDistribution& dist, std::uint64_t seed, int index);
std::vector<PhantomRecord> make_cohort(int n, const CohortDistribution& dist, std::uint64_t seed);

nlohmann::json truth_to_json(const PhantomRecord& rec);
nlohmann::json phantom_config_to_json(const PhantomConfig& cfg);
nlohmann::json to_json(const CohortDistribution& dist);

/// Fields absent from `j` keep their value in `base`. Unknown or mistyped
/// keys are appended to `problems` with `prefix`.
PhantomConfig phantom_config_from_json(const nlohmann::json& j, std::vector<std::string>& problems,
                                       const std::string& prefix = "",
                                       const PhantomConfig& base = {});
CohortDistribution cohort_distribution_from_json(const nlohmann::json& j,
                                                 std::vector<std::string>& problems,
                                                 const std::string& prefix = "",
                                                 const CohortDistribution& base = {});

}  // namespace cinegen
