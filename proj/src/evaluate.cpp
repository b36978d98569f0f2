#include "cinegen/evaluate.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace cinegen {

using nlohmann::json;

std::string to_string(MaskSource m) { return m == MaskSource::truth ? "truth" : "threshold"; }

MaskSource mask_source_from_string(const std::string& s) {
  if (s == "truth") return MaskSource::truth;
  if (s == "threshold") return MaskSource::threshold;
  throw std::invalid_argument("unknown mask source '" + s + "' (expected truth or threshold)");
}

std::vector<double> vq_encoder_features(const Volume4D& v, const VqModel<float>& model) {
  const LatentVolume z = encode_volume(v, model);
  constexpr int kSamples = 4;
  const auto c = static_cast<std::size_t>(z.channels);
  std::vector<double> f(kSamples * c, 0.0);
  const double per = static_cast<double>(z.dims.d) * z.dims.h * z.dims.w;
  for (int k = 0; k < kSamples; ++k) {
    const int t = k * z.dims.t / kSamples;
    for (int d = 0; d < z.dims.d; ++d)
      for (int h = 0; h < z.dims.h; ++h)
        for (int w = 0; w < z.dims.w; ++w)
          for (std::size_t ch = 0; ch < c; ++ch)
            f[static_cast<std::size_t>(k) * c + ch] +=
                z.data[z.index(d, h, w, t, static_cast<int>(ch))] / per;
  }
  return f;
}

std::vector<double> extract_features(const Volume4D& v, const std::string& extractor,
                                     const VqModel<float>* vq) {
  if (extractor == kIdentityPool) return identity_pool_features(v);
  if (extractor == kVqEncoder) {
    if (vq == nullptr) throw std::invalid_argument("vq-encoder features need a VQ checkpoint");
    return vq_encoder_features(v, *vq);
  }
  throw std::invalid_argument("unknown feature extractor '" + extractor + "'");
}

CohortStats cohort_stats(const std::vector<CohortSample>& cohort, const EvalOptions& opts) {
  if (cohort.empty()) throw std::invalid_argument("empty cohort");
  CohortStats s;
  s.n = static_cast<int>(cohort.size());
  const std::size_t n = cohort.size();
  std::vector<std::vector<double>> pairs(n);
  std::vector<std::optional<double>> ars(n), efs(n);
  std::vector<std::vector<double>> curves(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto& c = cohort[i];
    try {
      pairs[i] = d_ssim_values(c.image, opts.data_range);
    } catch (const std::exception& e) {
      errors[i] = "sample " + std::to_string(i) + ": " + e.what();
      continue;
    }
    const Volume4D mask = (opts.masks == MaskSource::truth && c.mask)
                              ? *c.mask
                              : threshold_mask(c.image, opts.seg_threshold);
    const auto curve = lv_volume_curve(mask);
    if (*std::max_element(curve.begin(), curve.end()) > 0.0) {
      efs[i] = ef(curve);
      const int ed = ed_frame(curve);
      try {
        ars[i] = ar_ed(mask, ed);
      } catch (const std::invalid_argument&) {
      }
      try {
        curves[i] = normalize_curve(curve, opts.curve_frames);
      } catch (const std::invalid_argument&) {
      }
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::invalid_argument(e);
  std::vector<double> pooled, ar_vals;
  for (std::size_t i = 0; i < n; ++i) {
    s.sample_d_ssim.push_back(mean_std(pairs[i]).mean);
    pooled.insert(pooled.end(), pairs[i].begin(), pairs[i].end());
    if (ars[i])
      ar_vals.push_back(*ars[i]);
    else
      ++s.ar_ed_skipped;
    if (efs[i])
      s.efs.push_back(*efs[i]);
    else
      ++s.ef_skipped;
    if (!curves[i].empty()) s.curves.push_back(curves[i]);
  }
  s.d_ssim = mean_std(s.sample_d_ssim);
  s.d_ssim_pairs = mean_std(pooled);
  s.ar_ed = mean_std(ar_vals);
  s.ef = mean_std(s.efs);
  return s;
}

EvalReport evaluate(const std::vector<CohortSample>& real, const std::vector<CohortSample>& gen,
                    const EvalOptions& opts) {
  if (real.size() < 2 || gen.size() < 2)
    throw std::invalid_argument("evaluation needs at least 2 samples per cohort");
  EvalReport r;
  r.extractor = opts.extractor;
  r.real = cohort_stats(real, opts);
  r.gen = cohort_stats(gen, opts);

  FeatureSet fr{opts.extractor, 0, {}}, fg{opts.extractor, 0, {}};
  for (const auto& c : real) fr.add(extract_features(c.image, opts.extractor, opts.vq));
  for (const auto& c : gen) fg.add(extract_features(c.image, opts.extractor, opts.vq));
  r.fid = frechet_distance(fr, fg);

  if (fr.size() >= 8) {
    const auto sel = select_k(fr, opts.k_threshold, opts.seed);
    r.k = sel.k;
    r.k_satisfied = sel.satisfied;
  } else {
    r.k = 1;
    r.k_satisfied = false;
  }
  const int k_max = static_cast<int>(std::min(fr.size(), fg.size())) - 1;
  r.k = std::min(r.k, k_max);
  const auto pr = precision_recall(fr, fg, r.k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.w2 = (!r.real.efs.empty() && !r.gen.efs.empty()) ? w2_1d(r.real.efs, r.gen.efs)
                                                      : std::numeric_limits<double>::quiet_NaN();
  return r;
}

json to_json(const CohortStats& s) {
  return json{{"n", s.n},
              {"d-SSIM", {{"mean", s.d_ssim.mean}, {"std", s.d_ssim.std}}},
              {"d-SSIM_pairs", {{"mean", s.d_ssim_pairs.mean}, {"std", s.d_ssim_pairs.std}}},
              {"AR_ED", {{"mean", s.ar_ed.mean}, {"std", s.ar_ed.std}}},
              {"AR_ED_skipped", s.ar_ed_skipped},
              {"EF", {{"mean", s.ef.mean}, {"std", s.ef.std}}},
              {"EF_skipped", s.ef_skipped},
              {"EF_values", s.efs},
              {"d-SSIM_values", s.sample_d_ssim}};
}

json to_json(const EvalReport& r) {
  return json{{"extractor", r.extractor},
              {"FID", r.fid},
              {"Precision", r.precision},
              {"Recall", r.recall},
              {"k", r.k},
              {"k_satisfied", r.k_satisfied},
              {"W2", r.w2},
              {"real", to_json(r.real)},
              {"gen", to_json(r.gen)}};
}

}  // namespace cinegen
