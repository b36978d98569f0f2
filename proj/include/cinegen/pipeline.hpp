#pragma once

// End-to-end attention-mask ablation: one phantom cohort, one VQ model, and
// two DiTs that differ only in their attention mask.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinegen/dit.hpp"
#include "cinegen/evaluate.hpp"
#include "cinegen/phantom.hpp"
#include "cinegen/vq.hpp"

namespace cinegen {

struct AblationConfig {
  int n = 32;                       // real cohort size
  int samples = 32;                 // generated volumes per arm
  std::uint64_t seed = 2024;        // cohort seed; VQ and DiT seeds live in their configs
  std::uint64_t sample_seed = 7;
  CohortDistribution cohort;
  VqConfig vq;
  DitConfig dit;                    // shared by both arms, mask overwritten per arm
  std::string extractor = kIdentityPool;
  double seg_threshold = 0.725;
  double k_threshold = 0.95;
  int curve_frames = 32;

  void validate() const;
};

/// Desk-scale defaults: (4,32,32,16) phantoms, f = 4 latents (4,8,8,4)x8,
/// a depth-4 width-64 DiT.
AblationConfig default_ablation_config();

nlohmann::json to_json(const AblationConfig& cfg);
AblationConfig ablation_config_from_json(const nlohmann::json& j, std::vector<std::string>& problems,
                                         const AblationConfig& base = default_ablation_config());

struct AblationArm {
  MaskMode mask = MaskMode::full;
  EvalReport report;
  double final_loss = 0.0;  // smoothed training loss at the last iteration
};

struct AblationResult {
  CohortStats real;
  std::vector<AblationArm> arms;  // full, then slice_factorized
  double vq_mse = 0.0;            // cohort reconstruction MSE, raw intensities
  EvalReport reconstruction;      // real cohort through VQ encode/decode, scored like an arm
  bool dssim_gate = false;        // full arm strictly closer to the real d-SSIM
  bool w2_gate = false;           // full arm EF W2 <= factorized EF W2
};

nlohmann::json to_json(const AblationResult& r);
/// Markdown table, one row per arm, columns FID, Precision, Recall, d-SSIM,
/// AR_ED, EF (Std), W2, plus a row for the VQ reconstruction of the real
/// cohort (the best any arm can do through the decoder); the real cohort's
/// values follow as a reference line.
std::string summary_table(const AblationResult& r);

using Logger = std::function<void(const std::string&)>;

/// Writes cohort/, vq/, latents/, reconstruction/, dit_<mask>/, samples_<mask>/, report_<mask>.json,
/// curves.csv, curves.svg, summary.json and summary.md under `out`.
AblationResult run_ablation(const AblationConfig& cfg, const std::filesystem::path& out,
                            const Logger& log = {});

}  // namespace cinegen
