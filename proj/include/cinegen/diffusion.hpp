#pragma once

// Gaussian diffusion in latent space: cosine schedule, forward noising,
// epsilon-prediction objective and the ancestral DDPM sampler.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace cinegen {

struct NoiseSchedule {
  int steps = 0;                    // T
  double s_offset = 0.008;
  std::vector<double> alphabar;     // index 0..T, alphabar[0] = 1
  std::vector<double> alpha;        // index 1..T (alpha[0] = 1 unused)
  std::vector<double> beta;         // index 1..T (beta[0] = 0 unused)
  std::vector<double> posterior_variance;  // beta tilde, index 1..T

  void validate() const;
};

/// alphabar_t = f(t)/f(0), f(t) = cos²(((t/T + s)/(1 + s))·π/2), accumulated
/// from per-step betas clipped at 0.999.
NoiseSchedule cosine_schedule(int steps, double s_offset = 0.008);

/// x_t = sqrt(ab_t)·x0 + sqrt(1 - ab_t)·eps, 0 <= t <= T.
void q_sample(std::span<const float> x0, int t, std::span<const float> eps,
              const NoiseSchedule& schedule, std::span<float> out);

/// One ancestral step x_t -> x_{t-1}; `noise` is ignored at t = 1 where sigma is 0.
void ddpm_step(std::span<const float> x_t, std::span<const float> eps_hat, int t,
               const NoiseSchedule& schedule, std::span<const float> noise, std::span<float> out);

/// eps_hat = denoiser(x_t, t)
using Denoiser = std::function<void(std::span<const float> x_t, int t, std::span<float> eps_hat)>;

class SamplingError : public std::runtime_error {
 public:
  SamplingError(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
  [[nodiscard]] int step() const { return step_; }

 private:
  int step_;
};

/// Initial draw x_T for sample `index` (stream keyed by seed, index, T + 1).
std::vector<float> initial_noise(std::size_t numel, const NoiseSchedule& schedule,
                                 std::uint64_t seed, std::uint64_t index);

/// Ancestral sampling from x_T ~ N(0, I) down to x_0. Noise at step t comes
/// from the stream keyed by (seed, index, t).
///
/// With x0_clip > 0 the x_0 implied by each eps_hat is clamped to
/// [-x0_clip, x0_clip] and eps_hat is recomputed from it before the step.
/// Near t = T the cosine schedule has alphabar ~ 1e-8 and 1/sqrt(alpha_T) ~ 32,
/// so small eps errors otherwise blow the state up by orders of magnitude.
std::vector<float> sample(const Denoiser& denoiser, std::size_t numel,
                          const NoiseSchedule& schedule, std::uint64_t seed, std::uint64_t index,
                          double x0_clip = 0.0);

/// The (t, eps) pair used for sample `index` of a training batch keyed by `seed`.
struct TrainingDraw {
  int t = 1;
  std::vector<float> eps;
};
TrainingDraw training_draw(std::uint64_t seed, std::uint64_t index, std::size_t numel, int steps);

/// Mean over the batch of ‖eps - eps_hat(x_t, t)‖² / numel.
double training_loss(const Denoiser& denoiser, std::span<const std::vector<float>> x0_batch,
                     const NoiseSchedule& schedule, std::uint64_t seed);

}  // namespace cinegen
