// cinegen: command-line front end for the synthesis and evaluation pipeline.

#include <omp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cinegen/container.hpp"
#include "cinegen/dataset.hpp"
#include "cinegen/dit.hpp"
#include "cinegen/evaluate.hpp"
#include "cinegen/json_fields.hpp"
#include "cinegen/phantom.hpp"
#include "cinegen/pipeline.hpp"
#include "cinegen/plots.hpp"
#include "cinegen/vq.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cinegen;

namespace {

constexpr const char* kOutputRootEnv = "CINEGEN_OUTPUT_ROOT";

struct ConfigError : std::runtime_error {
  std::vector<std::string> problems;
  explicit ConfigError(std::vector<std::string> p)
      : std::runtime_error("invalid configuration"), problems(std::move(p)) {}
};

struct Globals {
  int threads = 0;
  std::string device = "cpu";
  bool quiet = false;
};

Globals g;

void info(const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("cannot parse config " + path + ": " + e.what());
  }
}

void check(std::vector<std::string>& problems) {
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

/// Relative output paths land under $CINEGEN_OUTPUT_ROOT when it is set.
fs::path out_path(const std::string& p) {
  fs::path path(p);
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root && path.is_relative())
    return fs::path(root) / path;
  return path;
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

/// Snapshot of everything that determines the outputs. Paths are left out so
/// two runs into different directories produce identical snapshots.
void write_resolved(const fs::path& file, const std::string& command, json params) {
  json j{{"command", command}, {"threads", g.threads}, {"params", std::move(params)}};
  write_json(file, j);
}

template <typename T>
void validate_or_throw(const T& cfg) {
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError({e.what()});
  }
}

// ---------------------------------------------------------------- phantom-gen

struct PhantomGenArgs {
  std::string config, out;
  std::optional<int> n;
  std::optional<std::uint64_t> seed;
  std::vector<int> dims;
  std::vector<double> spacing, ef_range;
};

int run_phantom_gen(const PhantomGenArgs& a) {
  int n = 8;
  std::uint64_t seed = 0;
  CohortDistribution dist;
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    std::vector<std::string> problems;
    {
      FieldReader r(j, problems, "");
      r.read("n", n);
      r.read("seed", seed);
      if (const auto* c = r.take("cohort"))
        dist = cohort_distribution_from_json(*c, problems, "cohort.");
    }
    check(problems);
  }
  if (a.n) n = *a.n;
  if (a.seed) seed = *a.seed;
  if (!a.dims.empty()) dist.base.dims = {a.dims[0], a.dims[1], a.dims[2], a.dims[3]};
  if (!a.spacing.empty())
    dist.base.spacing = {a.spacing[0], a.spacing[1], a.spacing[2], a.spacing[3]};
  if (!a.ef_range.empty()) dist.ef = {a.ef_range[0], a.ef_range[1]};
  if (n < 1) throw ConfigError({"n (must be >= 1)"});
  validate_or_throw(dist);

  const fs::path out = out_path(a.out);
  info("phantom-gen: " + std::to_string(n) + " records -> " + out.string());
  write_phantom_dir(out, make_cohort(n, dist, seed));
  write_resolved(out / "resolved_config.json", "phantom-gen",
                 {{"n", n}, {"seed", seed}, {"cohort", to_json(dist)}});
  return 0;
}

// ------------------------------------------------------------------- vq-train

struct VqTrainArgs {
  std::string config, data, out;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

int run_vq_train(const VqTrainArgs& a) {
  VqConfig cfg;
  if (!a.config.empty()) {
    std::vector<std::string> problems;
    cfg = vq_config_from_json(read_json_file(a.config), problems);
    check(problems);
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  validate_or_throw(cfg);

  const auto data = read_volume_dir(a.data);
  info("vq-train: " + std::to_string(data.size()) + " volumes");
  VqTrainHooks hooks;
  hooks.on_epoch = [](int epoch, double mse) {
    info("  epoch " + std::to_string(epoch) + " mse " + std::to_string(mse));
  };
  const auto ckpt = train_vq(data, cfg, hooks);
  const fs::path out = out_path(a.out);
  save_vq_checkpoint(out, ckpt);
  write_resolved(out / "resolved_config.json", "vq-train", to_json(cfg));
  return 0;
}

// ---------------------------------------------------------- vq-encode/decode

struct VqCodecArgs {
  std::string ckpt, in, out;
  bool no_quantize = false;
};

int run_vq_encode(const VqCodecArgs& a) {
  const auto ckpt = load_vq_checkpoint(a.ckpt);
  const auto model = ckpt.model();
  std::vector<LatentVolume> latents;
  for (const auto& v : read_volume_dir(a.in))
    latents.push_back(encode_volume(v, model, ckpt.codebook_hash));
  const fs::path out = out_path(a.out);
  write_latent_dir(out, latents);
  write_resolved(out / "resolved_config.json", "vq-encode",
                 {{"codebook_hash", ckpt.codebook_hash}, {"count", latents.size()}});
  info("vq-encode: " + std::to_string(latents.size()) + " latents -> " + out.string());
  return 0;
}

int run_vq_decode(const VqCodecArgs& a) {
  const auto ckpt = load_vq_checkpoint(a.ckpt);
  const auto model = ckpt.model();
  std::vector<Volume4D> volumes;
  for (const auto& z : read_latent_dir(a.in)) {
    if (!z.codebook_hash.empty() && z.codebook_hash != ckpt.codebook_hash)
      info("warning: latent codebook hash " + z.codebook_hash + " differs from checkpoint " +
           ckpt.codebook_hash);
    volumes.push_back(decode_volume(a.no_quantize ? z : quantize_latent(z, model), model));
  }
  const fs::path out = out_path(a.out);
  write_volume_dir(out, volumes, "sample");
  write_resolved(out / "resolved_config.json", "vq-decode",
                 {{"codebook_hash", ckpt.codebook_hash},
                  {"quantize", !a.no_quantize},
                  {"count", volumes.size()}});
  info("vq-decode: " + std::to_string(volumes.size()) + " volumes -> " + out.string());
  return 0;
}

// ------------------------------------------------------------------ dit-train

struct DitTrainArgs {
  std::string config, data, out, mask;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
};

int run_dit_train(const DitTrainArgs& a) {
  DitConfig cfg;
  if (!a.config.empty()) {
    std::vector<std::string> problems;
    cfg = dit_config_from_json(read_json_file(a.config), problems);
    check(problems);
  }
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.mask.empty()) cfg.mask = mask_mode_from_string(a.mask);
  validate_or_throw(cfg);

  const auto latents = read_latent_dir(a.data);
  const fs::path out = out_path(a.out);
  info("dit-train: " + std::to_string(latents.size()) + " latents, " +
       std::to_string(cfg.iterations) + " iterations");
  DitTrainHooks hooks;
  hooks.on_log = [](int it, double loss) {
    info("  it " + std::to_string(it) + " loss " + std::to_string(loss));
  };
  hooks.on_checkpoint = [&](const DitCheckpoint& c) { save_dit_checkpoint(out, c); };
  try {
    const auto ckpt = train_dit(latents, cfg, hooks);
    save_dit_checkpoint(out, ckpt);
  } catch (const TrainingDiverged& e) {
    save_dit_checkpoint(out, e.last_good());
    throw;
  }
  write_resolved(out / "resolved_config.json", "dit-train", to_json(cfg));
  return 0;
}

// ----------------------------------------------------------------- dit-sample

struct DitSampleArgs {
  std::string ckpt, out, vq;
  int n = 4;
  std::uint64_t seed = 0;
};

int run_dit_sample(const DitSampleArgs& a) {
  if (a.n < 1) throw ConfigError({"n (must be >= 1)"});
  const auto ckpt = load_dit_checkpoint(a.ckpt);
  info("dit-sample: " + std::to_string(a.n) + " samples, seed " + std::to_string(a.seed));
  const auto latents = sample_latents(ckpt, a.n, a.seed);
  const fs::path out = out_path(a.out);
  write_latent_dir(out, latents);
  json params{{"n", a.n}, {"seed", a.seed}, {"dit", to_json(ckpt.config)}, {"iteration", ckpt.iteration}};
  if (!a.vq.empty()) {
    const auto vq = load_vq_checkpoint(a.vq);
    if (!ckpt.codebook_hash.empty() && ckpt.codebook_hash != vq.codebook_hash)
      throw std::runtime_error("VQ checkpoint codebook " + vq.codebook_hash +
                               " does not match the DiT training latents (" + ckpt.codebook_hash + ")");
    const auto model = vq.model();
    std::vector<Volume4D> volumes;
    for (const auto& z : latents) volumes.push_back(decode_volume(quantize_latent(z, model), model));
    write_volume_dir(out / "samples", volumes, "sample");
    params["codebook_hash"] = vq.codebook_hash;
  }
  write_resolved(out / "resolved_config.json", "dit-sample", params);
  return 0;
}

// ------------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string config, real, gen, masks, extractor, vq, out;
  std::optional<std::uint64_t> seed;
};

EvalOptions eval_options_from_json(const json& j, std::vector<std::string>& problems) {
  EvalOptions o;
  FieldReader r(j, problems, "");
  std::string masks;
  if (r.read("masks", masks)) {
    try {
      o.masks = mask_source_from_string(masks);
    } catch (const std::invalid_argument&) {
      r.problem("masks", "expected truth or threshold");
    }
  }
  r.read("extractor", o.extractor);
  r.read("data_range", o.data_range);
  r.read("seg_threshold", o.seg_threshold);
  r.read("k_threshold", o.k_threshold);
  r.read("seed", o.seed);
  r.read("curve_frames", o.curve_frames);
  return o;
}

json to_json(const EvalOptions& o) {
  return json{{"masks", to_string(o.masks)},       {"extractor", o.extractor},
              {"data_range", o.data_range},         {"seg_threshold", o.seg_threshold},
              {"k_threshold", o.k_threshold},       {"seed", o.seed},
              {"curve_frames", o.curve_frames}};
}

int run_evaluate(const EvaluateArgs& a) {
  EvalOptions o;
  if (!a.config.empty()) {
    std::vector<std::string> problems;
    o = eval_options_from_json(read_json_file(a.config), problems);
    check(problems);
  }
  if (!a.masks.empty()) o.masks = mask_source_from_string(a.masks);
  if (!a.extractor.empty()) o.extractor = a.extractor;
  if (a.seed) o.seed = *a.seed;

  std::optional<VqModel<float>> vq;
  json params = to_json(o);
  if (!a.vq.empty()) {
    const auto ck = load_vq_checkpoint(a.vq);
    vq = ck.model();
    o.vq = &*vq;
    params["codebook_hash"] = ck.codebook_hash;
  }
  const auto real = read_cohort_dir(a.real);
  const auto gen = read_cohort_dir(a.gen);
  info("evaluate: " + std::to_string(real.size()) + " real vs " + std::to_string(gen.size()) +
       " generated, extractor " + o.extractor);
  const auto report = evaluate(real, gen, o);
  const fs::path out = out_path(a.out);
  write_json(out, to_json(report));
  fs::path snap = out;
  snap.replace_extension(".resolved_config.json");
  write_resolved(snap, "evaluate", params);
  std::cout << "FID " << report.fid << "  Precision " << report.precision << "  Recall "
            << report.recall << "  d-SSIM " << report.gen.d_ssim.mean << "  W2 " << report.w2
            << '\n';
  return 0;
}

// --------------------------------------------------------------------- curves

struct CurvesArgs {
  std::vector<std::string> in, out, names;
  std::string masks = "threshold";
  int frames = 32;
  double seg_threshold = 0.725;
};

int run_curves(const CurvesArgs& a) {
  if (a.out.size() != 2) throw ConfigError({"out (expected a .csv and a .svg path)"});
  if (!a.names.empty() && a.names.size() != a.in.size())
    throw ConfigError({"name (one name per --in directory)"});
  EvalOptions o;
  o.masks = mask_source_from_string(a.masks);
  o.curve_frames = a.frames;
  o.seg_threshold = a.seg_threshold;
  std::vector<CurveCohort> cohorts;
  for (std::size_t i = 0; i < a.in.size(); ++i) {
    const auto stats = cohort_stats(read_cohort_dir(a.in[i]), o);
    std::string name = a.names.empty() ? fs::path(a.in[i]).lexically_normal().filename().string()
                                       : a.names[i];
    if (name.empty()) name = fs::path(a.in[i]).lexically_normal().parent_path().filename().string();
    info("curves: " + name + " " + std::to_string(stats.curves.size()) + " curves");
    cohorts.push_back({name, stats.curves});
  }
  fs::path csv = out_path(a.out[0]), svg = out_path(a.out[1]);
  if (csv.extension() == ".svg") std::swap(csv, svg);
  for (const auto& p : {csv, svg})
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  emit_plots(cohorts, csv, svg);
  fs::path snap = csv;
  snap.replace_extension(".resolved_config.json");
  write_resolved(snap, "curves",
                 {{"T", a.frames}, {"masks", a.masks}, {"seg_threshold", a.seg_threshold}});
  return 0;
}

// --------------------------------------------------------- reproduce-ablation

struct AblationArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations, epochs;
};

int run_reproduce_ablation(const AblationArgs& a) {
  AblationConfig cfg = default_ablation_config();
  if (!a.config.empty()) {
    std::vector<std::string> problems;
    cfg = ablation_config_from_json(read_json_file(a.config), problems);
    check(problems);
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.iterations) cfg.dit.iterations = *a.iterations;
  if (a.epochs) cfg.vq.epochs = *a.epochs;
  validate_or_throw(cfg);
  const fs::path out = out_path(a.out);
  write_resolved(out / "resolved_config.json", "reproduce-ablation", to_json(cfg));
  const auto res = run_ablation(cfg, out, [](const std::string& m) { info(m); });
  std::cout << summary_table(res);
  std::cout << "d-SSIM ordering " << (res.dssim_gate ? "holds" : "does not hold") << "; EF W2 ordering "
            << (res.w2_gate ? "holds" : "does not hold") << '\n';
  return 0;
}

void print_error(const std::string& kind, const std::string& message,
                 const std::vector<std::string>& details = {}) {
  json j{{"error", kind}, {"message", message}};
  if (!details.empty()) j["details"] = details;
  std::cerr << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4D cardiac latent diffusion: phantoms, VQ autoencoder, DiT, evaluation"};
  app.require_subcommand(1);
  app.add_option("--threads", g.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_option("--device", g.device, "compute device")->check(CLI::IsMember({"cpu"}));
  app.add_flag("-q,--quiet", g.quiet, "suppress progress output");

  PhantomGenArgs pg;
  auto* c_pg = app.add_subcommand("phantom-gen", "generate a synthetic phantom cohort");
  c_pg->add_option("--config", pg.config, "cohort JSON")->check(CLI::ExistingFile);
  c_pg->add_option("--n", pg.n, "number of records");
  c_pg->add_option("--seed", pg.seed);
  c_pg->add_option("--dims", pg.dims, "d,h,w,t")->delimiter(',')->expected(4);
  c_pg->add_option("--spacing", pg.spacing, "mm,mm,mm,s")->delimiter(',')->expected(4);
  c_pg->add_option("--ef-range", pg.ef_range, "lo,hi")->delimiter(',')->expected(2);
  c_pg->add_option("--out", pg.out)->required();

  VqTrainArgs vt;
  auto* c_vt = app.add_subcommand("vq-train", "train the slice-wise VQ autoencoder");
  c_vt->add_option("--config", vt.config, "VQ config JSON")->check(CLI::ExistingFile);
  c_vt->add_option("--data", vt.data, "directory of image volumes")->required()->check(CLI::ExistingDirectory);
  c_vt->add_option("--out", vt.out, "checkpoint directory")->required();
  c_vt->add_option("--epochs", vt.epochs);
  c_vt->add_option("--seed", vt.seed);

  VqCodecArgs ve, vd;
  auto* c_ve = app.add_subcommand("vq-encode", "encode image volumes to quantized latents");
  c_ve->add_option("--ckpt", ve.ckpt)->required()->check(CLI::ExistingDirectory);
  c_ve->add_option("--in", ve.in)->required()->check(CLI::ExistingDirectory);
  c_ve->add_option("--out", ve.out)->required();
  auto* c_vd = app.add_subcommand("vq-decode", "decode latents to image volumes");
  c_vd->add_option("--ckpt", vd.ckpt)->required()->check(CLI::ExistingDirectory);
  c_vd->add_option("--in", vd.in)->required()->check(CLI::ExistingDirectory);
  c_vd->add_option("--out", vd.out)->required();
  c_vd->add_flag("--no-quantize", vd.no_quantize, "decode latents as given");

  DitTrainArgs dt;
  auto* c_dt = app.add_subcommand("dit-train", "train the latent diffusion transformer");
  c_dt->add_option("--config", dt.config, "DiT config JSON")->check(CLI::ExistingFile);
  c_dt->add_option("--data", dt.data, "directory of latents")->required()->check(CLI::ExistingDirectory);
  c_dt->add_option("--out", dt.out, "checkpoint directory")->required();
  c_dt->add_option("--iterations", dt.iterations);
  c_dt->add_option("--seed", dt.seed);
  c_dt->add_option("--mask", dt.mask)->check(CLI::IsMember({"full", "slice_factorized"}));

  DitSampleArgs ds;
  auto* c_ds = app.add_subcommand("dit-sample", "sample latents (and volumes with --vq)");
  c_ds->add_option("--ckpt", ds.ckpt)->required()->check(CLI::ExistingDirectory);
  c_ds->add_option("--n", ds.n);
  c_ds->add_option("--seed", ds.seed);
  c_ds->add_option("--vq", ds.vq, "VQ checkpoint for decoding")->check(CLI::ExistingDirectory);
  c_ds->add_option("--out", ds.out)->required();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "compare a generated cohort with a real one");
  c_ev->add_option("--config", ev.config, "evaluation options JSON")->check(CLI::ExistingFile);
  c_ev->add_option("--real", ev.real)->required()->check(CLI::ExistingDirectory);
  c_ev->add_option("--gen", ev.gen)->required()->check(CLI::ExistingDirectory);
  c_ev->add_option("--masks", ev.masks)->check(CLI::IsMember({"truth", "threshold"}));
  c_ev->add_option("--extractor", ev.extractor)->check(CLI::IsMember({kIdentityPool, kVqEncoder}));
  c_ev->add_option("--vq", ev.vq, "VQ checkpoint (vq-encoder features)")->check(CLI::ExistingDirectory);
  c_ev->add_option("--seed", ev.seed);
  c_ev->add_option("--out", ev.out, "report JSON")->required();

  CurvesArgs cv;
  auto* c_cv = app.add_subcommand("curves", "normalized LV volume curves as CSV and SVG");
  c_cv->add_option("--in", cv.in, "cohort directories")->required()->check(CLI::ExistingDirectory);
  c_cv->add_option("--name", cv.names, "cohort labels, one per --in");
  c_cv->add_option("--T", cv.frames, "resampled curve length")->check(CLI::PositiveNumber);
  c_cv->add_option("--masks", cv.masks)->check(CLI::IsMember({"truth", "threshold"}));
  c_cv->add_option("--seg-threshold", cv.seg_threshold);
  c_cv->add_option("--out", cv.out, "curves.csv curves.svg")->required()->expected(2);

  AblationArgs ab;
  auto* c_ab = app.add_subcommand("reproduce-ablation",
                                  "full vs slice-factorized attention, end to end");
  c_ab->add_option("--config", ab.config, "ablation config JSON")->check(CLI::ExistingFile);
  c_ab->add_option("--out", ab.out)->required();
  c_ab->add_option("--seed", ab.seed);
  c_ab->add_option("--iterations", ab.iterations, "DiT iterations per arm");
  c_ab->add_option("--epochs", ab.epochs, "VQ epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  if (g.threads > 0) omp_set_num_threads(g.threads);

  try {
    if (*c_pg) return run_phantom_gen(pg);
    if (*c_vt) return run_vq_train(vt);
    if (*c_ve) return run_vq_encode(ve);
    if (*c_vd) return run_vq_decode(vd);
    if (*c_dt) return run_dit_train(dt);
    if (*c_ds) return run_dit_sample(ds);
    if (*c_ev) return run_evaluate(ev);
    if (*c_cv) return run_curves(cv);
    if (*c_ab) return run_reproduce_ablation(ab);
  } catch (const ConfigError& e) {
    print_error("config", e.what(), e.problems);
    return 3;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 1;
}
