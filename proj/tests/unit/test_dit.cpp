#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

#include "cinegen/dit.hpp"
#include "cinegen/tokenizer.hpp"

using namespace cinegen;

namespace {

DitConfig tiny(int depth = 2, int width = 16) {
  DitConfig c;
  c.depth = depth;
  c.width = width;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.freq_dim = 16;
  c.patch = {1, 2, 2, 1};
  c.timesteps = 50;
  c.lr = 1e-3;
  c.batch_size = 2;
  c.log_interval = 10;
  c.checkpoint_interval = 0;
  c.smoothing_window = 10;
  return c;
}

const Dims4 kLatent{2, 4, 4, 2};
constexpr int kChannels = 2;

std::vector<float> random_tokens(std::size_t n, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

std::vector<LatentVolume> random_latents(int n, std::uint32_t seed) {
  std::vector<LatentVolume> out;
  for (int i = 0; i < n; ++i) {
    LatentVolume z(kLatent, kChannels);
    z.data = random_tokens(z.data.size(), seed + static_cast<std::uint32_t>(i));
    out.push_back(z);
  }
  return out;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  for (int depth : {1, 3}) {
    for (int width : {16, 32}) {
      auto c = tiny(depth, width);
      c.mlp_ratio = 3;
      DitModel<float> m(c, kLatent, kChannels);
      CHECK(m.parameter_count() == dit_parameter_count(c, m.patch_values()));
    }
  }
  DitConfig d8 = tiny(8, 32), d16 = tiny(16, 32);
  CHECK(dit_parameter_count(d16, 64) > dit_parameter_count(d8, 64));
}

TEST_CASE("timestep sinusoids") {
  const auto s0 = timestep_sinusoid(0, 32);
  for (int j = 0; j < 16; ++j) {
    CHECK(s0[static_cast<std::size_t>(j)] == 0.0);
    CHECK(s0[static_cast<std::size_t>(16 + j)] == 1.0);
  }
  std::set<std::vector<double>> seen;
  for (int t = 0; t <= 300; ++t) seen.insert(timestep_sinusoid(t, 64));
  CHECK(seen.size() == 301);
}

TEST_CASE("adaLN-Zero initialization gives an exactly zero output") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    DitModel<float> m(tiny(), kLatent, kChannels);
    m.init(seed);
    DitWorkspace<float> ws;
    const auto x = random_tokens(m.numel(), static_cast<std::uint32_t>(seed) + 100);
    std::vector<float> out(m.numel(), 1.0F);
    m.forward(x, static_cast<int>(seed * 7 + 1), out, ws);
    CHECK(std::all_of(out.begin(), out.end(), [](float v) { return v == 0.0F; }));
  }
}

TEST_CASE("forward is deterministic and shape preserving") {
  DitModel<float> m(tiny(), kLatent, kChannels);
  m.init_random(3, 0.1);
  DitWorkspace<float> ws;
  const auto x = random_tokens(m.numel(), 5);
  std::vector<float> a(m.numel()), b(m.numel());
  m.forward(x, 17, a, ws);
  m.forward(x, 17, b, ws);
  CHECK(a == b);
  CHECK(m.numel() == kLatent.count() * kChannels);
}

TEST_CASE("slice-factorized attention isolates depth slices") {
  for (MaskMode mode : {MaskMode::slice_factorized, MaskMode::full}) {
    auto c = tiny();
    c.mask = mode;
    DitModel<double> m(c, kLatent, kChannels);
    m.init_random(9, 0.2);
    DitWorkspace<double> ws;
    std::vector<double> x(m.numel());
    std::mt19937 rng(1);
    std::normal_distribution<double> nd;
    for (auto& v : x) v = nd(rng);
    std::vector<double> y0(m.numel()), y1(m.numel());
    m.forward(x, 10, y0, ws);
    // Tokens are d-major: the first half of the sequence is slice 0.
    const std::size_t half = m.numel() / 2;
    for (std::size_t i = 0; i < half; ++i) x[i] += 1.0;
    m.forward(x, 10, y1, ws);
    bool slice1_same = true;
    for (std::size_t i = half; i < m.numel(); ++i) slice1_same = slice1_same && (y0[i] == y1[i]);
    CHECK(slice1_same == (mode == MaskMode::slice_factorized));
  }
}

TEST_CASE("analytic gradients agree with central differences") {
  GradCheckOptions o;
  o.samples = 200;
  const auto good = grad_check(tiny(), kLatent, kChannels, o);
  CHECK(good.checked >= 200);
  CHECK(good.max_rel_error < 1e-4);
  o.corrupt_attention_grad = true;
  const auto bad = grad_check(tiny(), kLatent, kChannels, o);
  CHECK(bad.max_rel_error > 1e-2);
}

TEST_CASE("zero iterations leave the initialization untouched") {
  auto c = tiny();
  c.iterations = 0;
  c.seed = 4;
  const auto latents = random_latents(3, 1);
  const auto ck = train_dit(latents, c);
  DitModel<float> m(c, kLatent, kChannels);
  m.init(4);
  const auto fresh = m.params().to_tensors();
  REQUIRE(ck.params.size() == fresh.size());
  for (std::size_t i = 0; i < fresh.size(); ++i) CHECK(ck.params[i].values == fresh[i].values);
}

TEST_CASE("training lowers the loss and checkpoints round trip") {
  auto c = tiny();
  c.iterations = 300;
  c.seed = 2;
  const auto latents = random_latents(2, 7);
  const auto ck = train_dit(latents, c);
  CHECK(ck.loss_history.size() == 300);
  CHECK(smoothed_loss(ck.loss_history, 300, 50) < smoothed_loss(ck.loss_history, 50, 50));
  CHECK(evaluate_dit_loss(ck, latents, 16, 3) == evaluate_dit_loss(ck, latents, 16, 3));

  const auto dir = std::filesystem::temp_directory_path() / "cinegen_test_dit_ckpt";
  std::filesystem::remove_all(dir);
  save_dit_checkpoint(dir, ck);
  const auto back = load_dit_checkpoint(dir);
  CHECK(back.iteration == ck.iteration);
  CHECK(back.latent_dims == ck.latent_dims);
  CHECK(back.latent_shift == ck.latent_shift);
  CHECK(back.latent_scale == ck.latent_scale);
  CHECK(back.x0_clip == ck.x0_clip);
  double widest = 0.0;
  for (const auto& z : latents)
    for (float v : z.data) widest = std::max(widest, std::abs((v - ck.latent_shift) / ck.latent_scale));
  CHECK(ck.x0_clip == doctest::Approx(widest).epsilon(1e-5));
  REQUIRE(back.params.size() == ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) CHECK(back.params[i].values == ck.params[i].values);

  const auto s1 = sample_latents(ck, 2, 5);
  const auto s2 = sample_latents(back, 2, 5);
  REQUIRE(s1.size() == 2);
  CHECK(s1[0].dims == kLatent);
  CHECK(s1[0].data == s2[0].data);
  CHECK(s1[1].data == s2[1].data);
  CHECK(s1[0].data != s1[1].data);
  for (float v : s1[0].data)
    CHECK(std::abs((v - ck.latent_shift) / ck.latent_scale) <= ck.x0_clip + 1e-3);

  c.clip_x0 = false;
  c.iterations = 1;
  CHECK(train_dit(latents, c).x0_clip == 0.0);
}

TEST_CASE("smoothed loss is a trailing mean") {
  const std::vector<double> h{4, 3, 2, 1, 0};
  CHECK(smoothed_loss(h, 5, 2) == doctest::Approx(0.5));
  CHECK(smoothed_loss(h, 2, 10) == doctest::Approx(3.5));
}

TEST_CASE("config JSON rejects unknown keys") {
  std::vector<std::string> problems;
  const auto back = dit_config_from_json(to_json(tiny()), problems);
  CHECK(problems.empty());
  CHECK(to_json(back) == to_json(tiny()));
  nlohmann::json j = to_json(tiny());
  j["depthh"] = 3;
  j["mask"] = "sideways";
  j["patch"] = {1, 2};
  problems.clear();
  (void)dit_config_from_json(j, problems);
  CHECK(problems.size() == 3);
}
