#include "cinegen/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cinegen/rng.hpp"

namespace cinegen {

namespace {

constexpr std::uint64_t kInitialTag = 0x78545fULL;
constexpr std::uint64_t kTrainTag = 0x747261696eULL;

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

}  // namespace

void NoiseSchedule::validate() const {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (alphabar.size() != static_cast<std::size_t>(steps) + 1)
    throw std::invalid_argument("schedule table size mismatch");
  if (alphabar[0] != 1.0) throw std::invalid_argument("alphabar_0 must be 1");
  for (int t = 1; t <= steps; ++t) {
    if (!(alphabar[t] < alphabar[t - 1]) || !(alphabar[t] > 0.0))
      throw std::invalid_argument("alphabar must be strictly decreasing in (0, 1]");
    if (!(beta[t] > 0.0 && beta[t] < 1.0))
      throw std::invalid_argument("beta must lie in (0, 1)");
  }
}

NoiseSchedule cosine_schedule(int steps, double s_offset) {
  using std::numbers::pi;
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!(s_offset > 0.0)) throw std::invalid_argument("cosine offset must be > 0");
  auto f = [&](double t) {
    const double c = std::cos(((t / steps + s_offset) / (1.0 + s_offset)) * pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.steps = steps;
  s.s_offset = s_offset;
  const auto n = static_cast<std::size_t>(steps) + 1;
  s.alphabar.assign(n, 1.0);
  s.alpha.assign(n, 1.0);
  s.beta.assign(n, 0.0);
  s.posterior_variance.assign(n, 0.0);
  const double f0 = f(0.0);
  for (int t = 1; t <= steps; ++t) {
    const double ratio = (f(t) / f0) / (f(t - 1.0) / f0);
    s.beta[t] = std::min(1.0 - ratio, 0.999);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alphabar[t] = s.alphabar[t - 1] * s.alpha[t];
    s.posterior_variance[t] = s.beta[t] * (1.0 - s.alphabar[t - 1]) / (1.0 - s.alphabar[t]);
  }
  s.validate();
  return s;
}

void q_sample(std::span<const float> x0, int t, std::span<const float> eps,
              const NoiseSchedule& schedule, std::span<float> out) {
  check_same(x0.size(), eps.size(), "x0 vs eps");
  check_same(x0.size(), out.size(), "x0 vs output");
  if (t < 0 || t > schedule.steps) throw std::out_of_range("timestep out of range");
  const double a = std::sqrt(schedule.alphabar[t]);
  const double b = std::sqrt(1.0 - schedule.alphabar[t]);
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
}

void ddpm_step(std::span<const float> x_t, std::span<const float> eps_hat, int t,
               const NoiseSchedule& schedule, std::span<const float> noise, std::span<float> out) {
  if (t < 1 || t > schedule.steps) throw std::out_of_range("timestep out of range");
  check_same(x_t.size(), eps_hat.size(), "x_t vs eps_hat");
  check_same(x_t.size(), out.size(), "x_t vs output");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
  const double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alphabar[t]);
  const double sigma = std::sqrt(schedule.posterior_variance[t]);
  const bool add_noise = sigma > 0.0;
  if (add_noise) check_same(x_t.size(), noise.size(), "x_t vs noise");
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    double v = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
    if (add_noise) v += sigma * noise[i];
    out[i] = static_cast<float>(v);
  }
}

std::vector<float> initial_noise(std::size_t numel, const NoiseSchedule& schedule,
                                 std::uint64_t seed, std::uint64_t index) {
  Stream rng({seed, index, static_cast<std::uint64_t>(schedule.steps) + 1, kInitialTag});
  std::vector<float> x(numel);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  return x;
}

std::vector<float> sample(const Denoiser& denoiser, std::size_t numel,
                          const NoiseSchedule& schedule, std::uint64_t seed, std::uint64_t index,
                          double x0_clip) {
  if (x0_clip < 0.0) throw std::invalid_argument("x0_clip must be >= 0");
  std::vector<float> x = initial_noise(numel, schedule, seed, index);
  std::vector<float> eps_hat(numel), noise(numel), next(numel);
  for (int t = schedule.steps; t >= 1; --t) {
    denoiser(x, t, eps_hat);
    if (x0_clip > 0.0 && schedule.alphabar[t] < 1.0) {
      const double a = std::sqrt(schedule.alphabar[t]);
      const double b = std::sqrt(1.0 - schedule.alphabar[t]);
      for (std::size_t i = 0; i < numel; ++i) {
        const double x0 = std::clamp((x[i] - b * eps_hat[i]) / a, -x0_clip, x0_clip);
        eps_hat[i] = static_cast<float>((x[i] - a * x0) / b);
      }
    }
    if (t > 1) {
      Stream rng({seed, index, static_cast<std::uint64_t>(t)});
      for (auto& v : noise) v = static_cast<float>(rng.normal());
    }
    ddpm_step(x, eps_hat, t, schedule, noise, next);
    for (float v : next)
      if (!std::isfinite(v))
        throw SamplingError(t, "non-finite sampler state at step t=" + std::to_string(t));
    x.swap(next);
  }
  return x;
}

TrainingDraw training_draw(std::uint64_t seed, std::uint64_t index, std::size_t numel, int steps) {
  Stream rng({seed, index, kTrainTag});
  TrainingDraw d;
  d.t = static_cast<int>(rng.integer(1, steps));
  d.eps.resize(numel);
  for (auto& v : d.eps) v = static_cast<float>(rng.normal());
  return d;
}

double training_loss(const Denoiser& denoiser, std::span<const std::vector<float>> x0_batch,
                     const NoiseSchedule& schedule, std::uint64_t seed) {
  if (x0_batch.empty()) throw std::invalid_argument("empty training batch");
  double total = 0.0;
  for (std::size_t i = 0; i < x0_batch.size(); ++i) {
    const auto& x0 = x0_batch[i];
    const auto draw = training_draw(seed, i, x0.size(), schedule.steps);
    std::vector<float> xt(x0.size()), eps_hat(x0.size());
    q_sample(x0, draw.t, draw.eps, schedule, xt);
    denoiser(xt, draw.t, eps_hat);
    double s = 0.0;
    for (std::size_t k = 0; k < x0.size(); ++k) {
      const double e = static_cast<double>(draw.eps[k]) - eps_hat[k];
      s += e * e;
    }
    total += s / static_cast<double>(x0.size());
  }
  const double loss = total / static_cast<double>(x0_batch.size());
  if (!std::isfinite(loss)) throw std::runtime_error("non-finite training loss");
  return loss;
}

}  // namespace cinegen
