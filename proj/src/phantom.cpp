#include "cinegen/phantom.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <type_traits>
#include <string>

#include "cinegen/json_fields.hpp"
#include "cinegen/rng.hpp"

namespace cinegen {

void PhantomConfig::validate() const {
  if (dims.d < 1 || dims.h < 1 || dims.w < 1 || dims.t < 1)
    throw std::invalid_argument("phantom dims must be >= 1");
  if (!(target_ef > 0.0 && target_ef < 1.0))
    throw std::invalid_argument("target_ef must lie in (0, 1)");
  if (!(r_endo_ed > 0.0)) throw std::invalid_argument("r_endo_ed must be > 0");
  if (!(wall_thickness > 0.0)) throw std::invalid_argument("wall_thickness must be > 0");
  if (!(systolic_fraction > 0.0 && systolic_fraction < 1.0))
    throw std::invalid_argument("systolic_fraction must lie in (0, 1)");
  if (!(taper_apex > 0.0)) throw std::invalid_argument("taper_apex must be > 0");
  if (!(aspect > 0.0)) throw std::invalid_argument("aspect must be > 0");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (!(intensities.blood > intensities.myocardium &&
        intensities.myocardium > intensities.background))
    throw std::invalid_argument("intensities must satisfy blood > myocardium > background");
}

double solve_contraction(double target_ef) {
  if (!(target_ef >= 0.0 && target_ef < 1.0))
    throw std::invalid_argument("target_ef must lie in [0, 1)");
  return std::sqrt(1.0 - target_ef);
}

double contraction_waveform(double phase, double systolic_fraction) {
  using std::numbers::pi;
  phase -= std::floor(phase);
  if (phase <= systolic_fraction) return 0.5 * (1.0 - std::cos(pi * phase / systolic_fraction));
  return 0.5 * (1.0 + std::cos(pi * (phase - systolic_fraction) / (1.0 - systolic_fraction)));
}

double taper_scale(const PhantomConfig& cfg, int s) {
  if (cfg.dims.d == 1) return 1.0;
  const double u = static_cast<double>(s) / (cfg.dims.d - 1);
  return cfg.taper_apex + (1.0 - cfg.taper_apex) * u;
}

PhantomRecord make_phantom(const PhantomConfig& cfg) {
  using std::numbers::pi;
  cfg.validate();
  const Dims4 dims = cfg.dims;
  const Spacing sp = cfg.spacing;
  const double rho = solve_contraction(cfg.target_ef);

  PhantomRecord rec;
  rec.config = cfg;
  rec.image = Volume4D(dims, sp, VolumeKind::image);
  rec.lv_mask = Volume4D(dims, sp, VolumeKind::mask);
  rec.truth.rho = rho;
  rec.truth.ef = 1.0 - rho * rho;
  rec.truth.volume_ml.assign(static_cast<std::size_t>(dims.t), 0.0);

  const double base_x = 0.5 * (dims.w - 1) + cfg.center_x;
  const double base_y = 0.5 * (dims.h - 1) + cfg.center_y;
  for (int s = 0; s < dims.d; ++s) {
    const double cx = base_x + cfg.tilt * s +
                      cfg.wobble_amp * std::sin(2.0 * pi * s / static_cast<double>(dims.d));
    rec.truth.centers.push_back({cx, base_y});
  }

  const auto& in = cfg.intensities;
  for (int s = 0; s < dims.d; ++s) {
    const double scale = taper_scale(cfg, s);
    const double a_ed = scale * cfg.r_endo_ed;  // mm, width axis
    const double b_ed = a_ed * cfg.aspect;
    // Incompressible wall: the myocardial area of the slice is conserved.
    const double k_ed = 1.0 + cfg.wall_thickness / a_ed;
    const double myo_area = a_ed * b_ed * (k_ed * k_ed - 1.0);
    const Point2 c = rec.truth.centers[static_cast<std::size_t>(s)];

    const double reach_x = k_ed * a_ed / sp.w;
    const double reach_y = k_ed * b_ed / sp.h;
    if (c.x - reach_x < 0.0 || c.x + reach_x > dims.w - 1 || c.y - reach_y < 0.0 ||
        c.y + reach_y > dims.h - 1)
      throw std::invalid_argument("phantom cavity exceeds the field of view at slice " +
                                  std::to_string(s));

    for (int i = 0; i < dims.t; ++i) {
      const double g = contraction_waveform(static_cast<double>(i) / dims.t, cfg.systolic_fraction);
      const double shrink = 1.0 - (1.0 - rho) * g;
      const double a = a_ed * shrink;
      const double b = b_ed * shrink;
      const double k2 = 1.0 + myo_area / (a * b);
      rec.truth.volume_ml[static_cast<std::size_t>(i)] += pi * a * b * sp.d / 1000.0;
      for (int y = 0; y < dims.h; ++y) {
        const double dy = (y - c.y) * sp.h / b;
        for (int x = 0; x < dims.w; ++x) {
          const double dx = (x - c.x) * sp.w / a;
          const double r2 = dx * dx + dy * dy;
          double value = in.background;
          if (r2 <= 1.0) {
            value = in.blood;
            rec.lv_mask.at(s, y, x, i) = 1.0F;
          } else if (r2 <= k2) {
            value = in.myocardium;
          }
          rec.image.at(s, y, x, i) = static_cast<float>(value);
        }
      }
    }
  }

  if (cfg.noise_sigma > 0.0) {
    Stream noise({cfg.seed, 0x6e6f697365ULL});
    for (float& v : rec.image.data()) v += static_cast<float>(cfg.noise_sigma * noise.normal());
  }
  return rec;
}

void CohortDistribution::validate() const {
  auto check = [](const Range& r, const char* name) {
    if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
      throw std::invalid_argument(std::string("degenerate cohort range for ") + name);
  };
  check(ef, "ef");
  check(r_endo_ed, "r_endo_ed");
  check(systolic_fraction, "systolic_fraction");
  check(tilt, "tilt");
  check(wobble, "wobble");
  check(noise, "noise");
  check(center, "center");
  if (!(ef.lo > 0.0 && ef.hi < 1.0)) throw std::invalid_argument("ef range must lie in (0, 1)");
  if (!(r_endo_ed.lo > 0.0)) throw std::invalid_argument("r_endo_ed range must be positive");
  if (!(systolic_fraction.lo > 0.0 && systolic_fraction.hi < 1.0))
    throw std::invalid_argument("systolic_fraction range must lie in (0, 1)");
  if (noise.lo < 0.0) throw std::invalid_argument("noise range must be non-negative");
}

PhantomConfig sample_phantom_config(const CohortDistribution& dist, std::uint64_t seed, int index) {
  Stream rng({seed, static_cast<std::uint64_t>(index)});
  PhantomConfig cfg = dist.base;
  cfg.target_ef = rng.uniform(dist.ef.lo, dist.ef.hi);
  cfg.r_endo_ed = rng.uniform(dist.r_endo_ed.lo, dist.r_endo_ed.hi);
  cfg.systolic_fraction = rng.uniform(dist.systolic_fraction.lo, dist.systolic_fraction.hi);
  cfg.tilt = rng.uniform(dist.tilt.lo, dist.tilt.hi);
  cfg.wobble_amp = rng.uniform(dist.wobble.lo, dist.wobble.hi);
  cfg.noise_sigma = rng.uniform(dist.noise.lo, dist.noise.hi);
  cfg.center_x = rng.uniform(dist.center.lo, dist.center.hi);
  cfg.center_y = rng.uniform(dist.center.lo, dist.center.hi);
  cfg.seed = stream_key({seed, static_cast<std::uint64_t>(index), 1});
  return cfg;
}

std::vector<PhantomRecord> make_cohort(int n, const CohortDistribution& dist, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("cohort size must be >= 1");
  dist.validate();
  std::vector<PhantomConfig> configs;
  for (int i = 0; i < n; ++i) configs.push_back(sample_phantom_config(dist, seed, i));
  std::vector<PhantomRecord> out(static_cast<std::size_t>(n));
  std::vector<std::string> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k] = make_phantom(configs[k]);
    } catch (const std::exception& e) {
      errors[k] = "record " + std::to_string(i) + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::invalid_argument(e);
  return out;
}

nlohmann::json phantom_config_to_json(const PhantomConfig& cfg) {
  nlohmann::json j;
  j["dims"] = {cfg.dims.d, cfg.dims.h, cfg.dims.w, cfg.dims.t};
  j["spacing"] = {cfg.spacing.d, cfg.spacing.h, cfg.spacing.w, cfg.spacing.t};
  j["target_ef"] = cfg.target_ef;
  j["r_endo_ed"] = cfg.r_endo_ed;
  j["wall_thickness"] = cfg.wall_thickness;
  j["systolic_fraction"] = cfg.systolic_fraction;
  j["taper_apex"] = cfg.taper_apex;
  j["aspect"] = cfg.aspect;
  j["tilt"] = cfg.tilt;
  j["wobble_amp"] = cfg.wobble_amp;
  j["center_x"] = cfg.center_x;
  j["center_y"] = cfg.center_y;
  j["noise_sigma"] = cfg.noise_sigma;
  j["intensities"] = {{"blood", cfg.intensities.blood},
                      {"myocardium", cfg.intensities.myocardium},
                      {"background", cfg.intensities.background}};
  j["seed"] = cfg.seed;
  return j;
}

nlohmann::json truth_to_json(const PhantomRecord& rec) {
  nlohmann::json j;
  j["ef"] = rec.truth.ef;
  j["rho"] = rec.truth.rho;
  j["volume_ml"] = rec.truth.volume_ml;
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& c : rec.truth.centers) centers.push_back({c.x, c.y});
  j["centers"] = centers;
  j["config"] = phantom_config_to_json(rec.config);
  return j;
}

nlohmann::json to_json(const CohortDistribution& dist) {
  auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
  return nlohmann::json{{"base", phantom_config_to_json(dist.base)},
                        {"ef", range(dist.ef)},
                        {"r_endo_ed", range(dist.r_endo_ed)},
                        {"systolic_fraction", range(dist.systolic_fraction)},
                        {"tilt", range(dist.tilt)},
                        {"wobble", range(dist.wobble)},
                        {"noise", range(dist.noise)},
                        {"center", range(dist.center)}};
}

namespace {

template <typename Tuple4>
void read4(FieldReader& r, const std::string& key, Tuple4& dst) {
  using V = std::remove_cvref_t<decltype(dst.d)>;
  std::vector<V> v;
  if (!r.read(key, v)) return;
  if (v.size() != 4) {
    r.problem(key, "expected 4 values");
    return;
  }
  dst.d = v[0];
  dst.h = v[1];
  dst.w = v[2];
  dst.t = v[3];
}

void read_range(FieldReader& r, const std::string& key, Range& dst) {
  std::vector<double> v;
  if (!r.read(key, v)) return;
  if (v.size() != 2) {
    r.problem(key, "expected [lo, hi]");
    return;
  }
  dst = {v[0], v[1]};
}

}  // namespace

PhantomConfig phantom_config_from_json(const nlohmann::json& j, std::vector<std::string>& problems,
                                       const std::string& prefix, const PhantomConfig& base) {
  PhantomConfig c = base;
  FieldReader r(j, problems, prefix);
  read4(r, "dims", c.dims);
  read4(r, "spacing", c.spacing);
  r.read("target_ef", c.target_ef);
  r.read("r_endo_ed", c.r_endo_ed);
  r.read("wall_thickness", c.wall_thickness);
  r.read("systolic_fraction", c.systolic_fraction);
  r.read("taper_apex", c.taper_apex);
  r.read("aspect", c.aspect);
  r.read("tilt", c.tilt);
  r.read("wobble_amp", c.wobble_amp);
  r.read("center_x", c.center_x);
  r.read("center_y", c.center_y);
  r.read("noise_sigma", c.noise_sigma);
  if (const auto* in = r.take("intensities")) {
    FieldReader ri(*in, problems, prefix + "intensities.");
    ri.read("blood", c.intensities.blood);
    ri.read("myocardium", c.intensities.myocardium);
    ri.read("background", c.intensities.background);
  }
  r.read("seed", c.seed);
  return c;
}

CohortDistribution cohort_distribution_from_json(const nlohmann::json& j,
                                                 std::vector<std::string>& problems,
                                                 const std::string& prefix,
                                                 const CohortDistribution& base) {
  CohortDistribution c = base;
  FieldReader r(j, problems, prefix);
  if (const auto* b = r.take("base")) c.base = phantom_config_from_json(*b, problems, prefix + "base.", c.base);
  read_range(r, "ef", c.ef);
  read_range(r, "r_endo_ed", c.r_endo_ed);
  read_range(r, "systolic_fraction", c.systolic_fraction);
  read_range(r, "tilt", c.tilt);
  read_range(r, "wobble", c.wobble);
  read_range(r, "noise", c.noise);
  read_range(r, "center", c.center);
  return c;
}

}  // namespace cinegen
