#include "cinegen/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "cinegen/container.hpp"
#include "cinegen/dataset.hpp"
#include "cinegen/json_fields.hpp"
#include "cinegen/plots.hpp"

namespace cinegen {

namespace fs = std::filesystem;
using nlohmann::json;

void AblationConfig::validate() const {
  if (n < 8) throw std::invalid_argument("ablation cohort needs n >= 8");
  if (samples < 2) throw std::invalid_argument("ablation needs at least 2 samples per arm");
  if (extractor != kIdentityPool && extractor != kVqEncoder)
    throw std::invalid_argument("unknown feature extractor '" + extractor + "'");
  if (curve_frames < 2) throw std::invalid_argument("curve_frames must be >= 2");
  cohort.validate();
  vq.validate();
  dit.validate();
}

AblationConfig default_ablation_config() {
  AblationConfig c;
  auto& b = c.cohort.base;
  b.dims = {4, 32, 32, 16};
  b.spacing = {8.0, 3.0, 3.0, 0.06};
  b.wall_thickness = 6.0;
  c.cohort.r_endo_ed = {18.0, 24.0};
  c.cohort.center = {-2.0, 2.0};
  c.cohort.tilt = {-1.0, 1.0};

  c.vq.f = 4;
  c.vq.codebook_size = 256;
  c.vq.emb = 8;
  c.vq.epochs = 30;
  c.vq.widths = {16, 32, 32};
  c.vq.seed = 11;

  c.dit.depth = 4;
  c.dit.width = 64;
  c.dit.heads = 4;
  // 32 values per token. At width 64 the (1,4,4,2) patch carries 256 values
  // and the input projection becomes a rank bottleneck the model cannot fit.
  c.dit.patch = {1, 2, 2, 1};
  c.dit.lr = 3e-4;
  c.dit.iterations = 8000;
  c.dit.batch_size = 4;
  c.dit.log_interval = 500;
  c.dit.checkpoint_interval = 2000;
  c.dit.seed = 13;
  return c;
}

json to_json(const AblationConfig& c) {
  json d = to_json(c.dit);
  d.erase("mask");
  return json{{"n", c.n},
              {"samples", c.samples},
              {"seed", c.seed},
              {"sample_seed", c.sample_seed},
              {"cohort", to_json(c.cohort)},
              {"vq", to_json(c.vq)},
              {"dit", d},
              {"extractor", c.extractor},
              {"seg_threshold", c.seg_threshold},
              {"k_threshold", c.k_threshold},
              {"curve_frames", c.curve_frames}};
}

AblationConfig ablation_config_from_json(const json& j, std::vector<std::string>& problems,
                                         const AblationConfig& base) {
  AblationConfig c = base;
  FieldReader r(j, problems, "");
  r.read("n", c.n);
  r.read("samples", c.samples);
  r.read("seed", c.seed);
  r.read("sample_seed", c.sample_seed);
  if (const auto* v = r.take("cohort"))
    c.cohort = cohort_distribution_from_json(*v, problems, "cohort.", c.cohort);
  if (const auto* v = r.take("vq")) {
    json merged = to_json(c.vq);
    if (v->is_object()) merged.update(*v);
    c.vq = vq_config_from_json(v->is_object() ? merged : *v, problems, "vq.");
  }
  if (const auto* v = r.take("dit")) {
    json merged = to_json(c.dit);
    if (v->is_object()) {
      merged.update(*v);
      if (v->contains("mask")) problems.push_back("dit.mask (set per arm by the ablation)");
    }
    c.dit = dit_config_from_json(v->is_object() ? merged : *v, problems, "dit.");
  }
  r.read("extractor", c.extractor);
  r.read("seg_threshold", c.seg_threshold);
  r.read("k_threshold", c.k_threshold);
  r.read("curve_frames", c.curve_frames);
  return c;
}

namespace {

json mean_std_json(const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; }

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string arm_name(MaskMode m) { return to_string(m); }

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json row_json(const EvalReport& r) {
  return json{{"FID", r.fid},
              {"Precision", r.precision},
              {"Recall", r.recall},
              {"k", r.k},
              {"d-SSIM", mean_std_json(r.gen.d_ssim)},
              {"AR_ED", mean_std_json(r.gen.ar_ed)},
              {"EF", mean_std_json(r.gen.ef)},
              {"W2", r.w2}};
}

std::string row_md(const std::string& name, const EvalReport& r) {
  const auto& g = r.gen;
  std::ostringstream s;
  s << "| " << name << " | " << fmt(r.fid) << " | " << fmt(r.precision, 2) << " | "
    << fmt(r.recall, 2) << " | " << fmt(g.d_ssim.mean, 2) << " ± " << fmt(g.d_ssim.std, 2) << " | "
    << fmt(g.ar_ed.mean, 2) << " ± " << fmt(g.ar_ed.std, 2) << " | " << fmt(100 * g.ef.mean, 1)
    << " (" << fmt(100 * g.ef.std, 1) << ") | " << fmt(100 * r.w2, 2) << " |\n";
  return s.str();
}

}  // namespace

json to_json(const AblationResult& r) {
  json arms = json::array();
  for (const auto& a : r.arms) {
    json row = row_json(a.report);
    row["mask"] = arm_name(a.mask);
    row["final_loss"] = a.final_loss;
    arms.push_back(row);
  }
  return json{{"real",
               {{"d-SSIM", mean_std_json(r.real.d_ssim)},
                {"AR_ED", mean_std_json(r.real.ar_ed)},
                {"EF", mean_std_json(r.real.ef)}}},
              {"arms", arms},
              {"reconstruction", row_json(r.reconstruction)},
              {"vq_mse", r.vq_mse},
              {"dssim_gate", r.dssim_gate},
              {"w2_gate", r.w2_gate}};
}

std::string summary_table(const AblationResult& r) {
  std::ostringstream s;
  s << "| Model | FID | Precision | Recall | d-SSIM | AR_ED | EF (Std) | W2 |\n";
  s << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& a : r.arms) s << row_md(arm_name(a.mask), a.report);
  s << row_md("vq reconstruction", r.reconstruction);
  s << "\nReal cohort: d-SSIM " << fmt(r.real.d_ssim.mean, 2) << " ± " << fmt(r.real.d_ssim.std, 2)
    << ", AR_ED " << fmt(r.real.ar_ed.mean, 2) << " ± " << fmt(r.real.ar_ed.std, 2) << ", EF "
    << fmt(100 * r.real.ef.mean, 1) << " (" << fmt(100 * r.real.ef.std, 1) << ").\n";
  s << "EF and W2 in percent points.\n";
  return s.str();
}

AblationResult run_ablation(const AblationConfig& cfg, const fs::path& out, const Logger& log) {
  cfg.validate();
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  fs::create_directories(out);
  write_json(out / "ablation_config.json", to_json(cfg));

  say("generating " + std::to_string(cfg.n) + " phantoms");
  const auto records = make_cohort(cfg.n, cfg.cohort, cfg.seed);
  write_phantom_dir(out / "cohort", records);
  std::vector<Volume4D> images;
  std::vector<CohortSample> real;
  for (const auto& r : records) {
    images.push_back(r.image);
    real.push_back({r.image, r.lv_mask});
  }

  say("training VQ autoencoder");
  VqTrainHooks vh;
  vh.on_epoch = [&](int epoch, double mse) {
    say("  vq epoch " + std::to_string(epoch) + " mse " + fmt(mse, 6));
  };
  const VqCheckpoint vq_ckpt = train_vq(images, cfg.vq, vh);
  save_vq_checkpoint(out / "vq", vq_ckpt);
  const VqModel<float> vq = vq_ckpt.model();

  AblationResult res;
  for (const auto& v : images) res.vq_mse += reconstruction_mse(v, vq) / static_cast<double>(images.size());
  say("  reconstruction mse " + fmt(res.vq_mse, 6));

  std::vector<LatentVolume> latents;
  for (const auto& v : images) latents.push_back(encode_volume(v, vq, vq_ckpt.codebook_hash));
  write_latent_dir(out / "latents", latents);

  EvalOptions eo;
  eo.extractor = cfg.extractor;
  eo.vq = &vq;
  eo.seg_threshold = cfg.seg_threshold;
  eo.k_threshold = cfg.k_threshold;
  eo.seed = cfg.seed;
  eo.curve_frames = cfg.curve_frames;
  // Real masks come from the phantom; decoded volumes fall back to the
  // threshold segmenter.
  eo.masks = MaskSource::truth;

  say("scoring the VQ reconstruction of the real cohort");
  {
    std::vector<Volume4D> recon;
    std::vector<CohortSample> rec;
    for (const auto& z : latents) {
      recon.push_back(decode_volume(z, vq));
      rec.push_back({recon.back(), std::nullopt});
    }
    write_volume_dir(out / "reconstruction", recon, "sample");
    res.reconstruction = evaluate(real, rec, eo);
    write_json(out / "report_reconstruction.json", to_json(res.reconstruction));
  }

  std::vector<CurveCohort> curves;
  for (const MaskMode mode : {MaskMode::full, MaskMode::slice_factorized}) {
    const std::string name = arm_name(mode);
    DitConfig dc = cfg.dit;
    dc.mask = mode;
    say("training DiT (" + name + ")");
    DitTrainHooks dh;
    dh.on_log = [&](int it, double loss) {
      say("  " + name + " it " + std::to_string(it) + " loss " + fmt(loss, 5));
    };
    const DitCheckpoint ck = train_dit(latents, dc, dh);
    save_dit_checkpoint(out / ("dit_" + name), ck);

    say("sampling " + std::to_string(cfg.samples) + " volumes (" + name + ")");
    const auto sampled = sample_latents(ck, cfg.samples, cfg.sample_seed);
    std::vector<Volume4D> decoded;
    std::vector<CohortSample> gen;
    for (const auto& z : sampled) {
      decoded.push_back(decode_volume(quantize_latent(z, vq), vq));
      gen.push_back({decoded.back(), std::nullopt});
    }
    write_latent_dir(out / ("latents_" + name), sampled, "latent");
    write_volume_dir(out / ("samples_" + name), decoded, "sample");

    AblationArm arm;
    arm.mask = mode;
    arm.report = evaluate(real, gen, eo);
    arm.final_loss = smoothed_loss(ck.loss_history, static_cast<int>(ck.loss_history.size()),
                                   dc.smoothing_window);
    write_json(out / ("report_" + name + ".json"), to_json(arm.report));
    if (curves.empty()) curves.push_back({"real", arm.report.real.curves});
    if (!arm.report.gen.curves.empty()) curves.push_back({name, arm.report.gen.curves});
    res.real = arm.report.real;
    res.arms.push_back(std::move(arm));
  }

  const double real_ds = res.real.d_ssim.mean;
  const auto& full = res.arms[0].report;
  const auto& fact = res.arms[1].report;
  res.dssim_gate =
      std::abs(full.gen.d_ssim.mean - real_ds) < std::abs(fact.gen.d_ssim.mean - real_ds);
  res.w2_gate = full.w2 <= fact.w2;

  emit_plots(curves, out / "curves.csv", out / "curves.svg");
  write_json(out / "summary.json", to_json(res));
  std::ofstream md(out / "summary.md");
  md << summary_table(res);
  return res;
}

}  // namespace cinegen
