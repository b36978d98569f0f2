#pragma once

// Cohort-level evaluation: per-sample cardiac metrics plus distributional
// comparisons between a real and a generated cohort.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinegen/metrics.hpp"
#include "cinegen/vq.hpp"

namespace cinegen {

struct CohortSample {
  Volume4D image;
  std::optional<Volume4D> mask;  // ground-truth cavity mask, when known
};

enum class MaskSource { truth, threshold };
std::string to_string(MaskSource m);
MaskSource mask_source_from_string(const std::string& s);

inline constexpr const char* kIdentityPool = "identity-pool";
inline constexpr const char* kVqEncoder = "vq-encoder";

struct EvalOptions {
  MaskSource masks = MaskSource::threshold;
  std::string extractor = kIdentityPool;
  const VqModel<float>* vq = nullptr;   // required for the vq-encoder extractor
  double data_range = 1.0;              // SSIM dynamic range
  double seg_threshold = 0.725;         // midway between blood and myocardium
  double k_threshold = 0.95;
  std::uint64_t seed = 0;
  int curve_frames = 32;
};

/// Encoder latents mean-pooled over (d, h, w) at 4 evenly spaced latent frames.
std::vector<double> vq_encoder_features(const Volume4D& v, const VqModel<float>& model);
std::vector<double> extract_features(const Volume4D& v, const std::string& extractor,
                                     const VqModel<float>* vq);

struct CohortStats {
  int n = 0;
  MeanStd d_ssim;        // per-sample means, spread across samples
  MeanStd d_ssim_pairs;  // pooled over every slice pair of every sample
  MeanStd ar_ed;
  int ar_ed_skipped = 0;  // samples with fewer than 3 segmented slices at ED
  MeanStd ef;
  int ef_skipped = 0;     // samples with an empty segmentation
  std::vector<double> efs;
  std::vector<double> sample_d_ssim;
  std::vector<std::vector<double>> curves;  // normalized volume curves
};

CohortStats cohort_stats(const std::vector<CohortSample>& cohort, const EvalOptions& opts);

struct EvalReport {
  std::string extractor;
  double fid = 0.0;
  double precision = 0.0, recall = 0.0;
  int k = 1;
  bool k_satisfied = true;
  double w2 = 0.0;  // NaN when either cohort has no segmentable sample
  CohortStats real, gen;
};

EvalReport evaluate(const std::vector<CohortSample>& real, const std::vector<CohortSample>& gen,
                    const EvalOptions& opts);

nlohmann::json to_json(const CohortStats& s);
nlohmann::json to_json(const EvalReport& r);

}  // namespace cinegen
