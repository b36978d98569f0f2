#pragma once

// Evaluation metrics: through-plane SSIM, LV axis residual, volume curves and
// EF, curve normalization, 1-D Wasserstein-2, Fréchet distance and k-NN
// precision/recall.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cinegen/phantom.hpp"
#include "cinegen/volume.hpp"

namespace cinegen {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> v);

/// Gaussian-window SSIM (11×11, σ = 1.5, C1 = (0.01L)², C2 = (0.03L)²) of two
/// row-major h×w images, averaged over fully contained window positions.
double ssim(std::span<const double> a, std::span<const double> b, int h, int w,
            double data_range);

/// SSIM over every depth-adjacent slice pair at every frame; (d−1)·t values.
std::vector<double> d_ssim_values(const Volume4D& v, double data_range);
MeanStd d_ssim(const Volume4D& v, double data_range);

/// Centroid (x = width index, y = height index) of a row-major h×w mask.
std::optional<Point2> center_of_mass(std::span<const double> mask, int h, int w);

/// Mean Euclidean residual of per-slice centers from independent
/// least-squares lines x(s), y(s). Absent centers are skipped; needs ≥ 3.
double ar_ed_from_centers(std::span<const std::optional<Point2>> centers);
double ar_ed(const Volume4D& mask, int ed_frame);

/// Cavity volume per frame in mL.
std::vector<double> lv_volume_curve(const Volume4D& mask);
double ef(std::span<const double> curve);
int ed_frame(std::span<const double> curve);

/// Rotates the maximum to index 0, resamples periodically (linear) to
/// `t_out` points and divides by the maximum.
std::vector<double> normalize_curve(std::span<const double> curve, int t_out);

/// Quantile-matched W2 on midpoint quantiles of a grid of max(|a|, |b|) points.
double w2_1d(std::span<const double> a, std::span<const double> b);

/// n feature vectors of equal dimension, row-major.
struct FeatureSet {
  std::string extractor;
  std::size_t dim = 0;
  std::vector<double> values;

  [[nodiscard]] std::size_t size() const { return dim == 0 ? 0 : values.size() / dim; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dim, dim};
  }
  void add(std::span<const double> f);
};

/// ‖μa − μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½). When both sets have fewer samples
/// than dimensions the trace term is evaluated exactly through the n×n Gram
/// route (nuclear norm of the centered cross product); otherwise through
/// eigendecompositions with +eps on the covariance diagonals.
double frechet_distance(const FeatureSet& a, const FeatureSet& b, double eps = 1e-6);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& gen, int k);

struct KSelection {
  int k = 1;
  bool satisfied = true;  // false when the cap was returned
  double precision = 0.0, recall = 0.0;
};

/// Smallest k with precision and recall between two halves both ≥ threshold,
/// capped at min(|a|, |b|) − 1.
KSelection select_k_halves(const FeatureSet& a, const FeatureSet& b, double threshold);
/// Seeded random split of `real` into halves, then select_k_halves.
KSelection select_k(const FeatureSet& real, double threshold, std::uint64_t seed);

/// Average-pools a volume to a fixed (4, 16, 16, 8) grid (8192 values).
std::vector<double> identity_pool_features(const Volume4D& v);
inline constexpr Dims4 kIdentityPoolGrid{4, 16, 16, 8};

/// Threshold segmentation of the cavity: value > threshold.
Volume4D threshold_mask(const Volume4D& image, double threshold);

}  // namespace cinegen
