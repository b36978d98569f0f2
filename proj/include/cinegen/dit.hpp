#pragma once

// 4D diffusion transformer with adaLN-Zero blocks.
//
//   tokens ─ linear ─ + posenc ─┬─ block × depth ─ adaptive norm ─ linear ─ eps_hat
//   t ─ sinusoid ─ MLP ─ c ─────┘  (scale/shift/gate from SiLU(c))
//
// Forward and backward passes are written out by hand and templated on the
// scalar type: float for training and sampling, double for gradient checks.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinegen/diffusion.hpp"
#include "cinegen/params.hpp"
#include "cinegen/tokenizer.hpp"
#include "cinegen/volume.hpp"

namespace cinegen {

struct DitConfig {
  int depth = 4;
  int width = 64;        // embedding width e
  int heads = 4;
  int mlp_ratio = 4;
  int freq_dim = 64;     // raw timestep sinusoid width
  PatchSpec patch{1, 4, 4, 2};
  MaskMode mask = MaskMode::full;
  int timesteps = 300;
  double schedule_offset = 0.008;
  double lr = 1e-4;
  double weight_decay = 0.0;
  int iterations = 5000;
  int batch_size = 4;
  int log_interval = 50;
  int checkpoint_interval = 1000;
  int smoothing_window = 50;
  std::uint64_t seed = 0;
  bool clip_x0 = true;  // sample with x_0 clamped to the training range

  void validate() const;
};

nlohmann::json to_json(const DitConfig& cfg);
/// Unknown keys are appended to `unknown` (prefixed with `prefix`).
DitConfig dit_config_from_json(const nlohmann::json& j, std::vector<std::string>& unknown,
                               const std::string& prefix = "");

/// Closed-form parameter count for a config and a patch value count P:
///   depth·((10 + 2r)e² + (11 + r)e)            blocks
///   + P·e + e                                  token embedding
///   + F·e + e + e² + e                         timestep MLP
///   + 2e² + 2e + e·P + P                       final adaptive norm and head
std::size_t dit_parameter_count(const DitConfig& cfg, std::size_t patch_values);

/// Raw sinusoid of a scalar timestep (same frequency law as the 1D positional block).
std::vector<double> timestep_sinusoid(int t, int dim);

template <typename T>
struct DitWorkspace;

namespace detail {
/// Offsets of a dense layer y = x·W + b with W stored [in × out].
struct LinearRef {
  std::size_t w = 0, b = 0;
  int in = 0, out = 0;
};
}  // namespace detail

template <typename T>
class DitModel {
 public:
  /// Parameters are zero until one of the init functions is called.
  DitModel(const DitConfig& cfg, const Dims4& latent_dims, int channels);

  /// adaLN-Zero initialization: Xavier linears, zero modulation and head.
  void init(std::uint64_t seed);
  /// Every parameter drawn from N(0, scale²); used for gradient checks.
  void init_random(std::uint64_t seed, double scale);

  [[nodiscard]] const DitConfig& config() const { return cfg_; }
  [[nodiscard]] const Dims4& grid() const { return grid_; }
  [[nodiscard]] std::size_t tokens() const { return n_; }
  [[nodiscard]] std::size_t patch_values() const { return p_; }
  [[nodiscard]] std::size_t numel() const { return n_ * p_; }
  [[nodiscard]] const AttentionMask& mask() const { return mask_; }
  void set_mask(MaskMode mode);
  /// Drops positional encodings (permutation-equivariance checks).
  void disable_positional_encoding();

  ParamStore<T>& params() { return params_; }
  [[nodiscard]] const ParamStore<T>& params() const { return params_; }
  [[nodiscard]] std::size_t parameter_count() const { return params_.size(); }

  /// Embedded timestep c = MLP(sinusoid(t)), width e.
  [[nodiscard]] std::vector<T> timestep_embed(int t) const;

  /// tokens, out: N × P. The workspace keeps activations for backward.
  void forward(std::span<const T> tokens, int t, std::span<T> out, DitWorkspace<T>& ws) const;

  /// Accumulates parameter gradients for the last forward pass held in `ws`.
  void backward(std::span<const T> tokens, std::span<const T> out_grad, DitWorkspace<T>& ws,
                std::span<T> grad) const;

  /// Mean epsilon-prediction MSE over a batch of clean token sequences, with
  /// (t, eps) drawn by training_draw(seed, i, ...). Accumulates gradients
  /// when `grad` is non-empty.
  double batch_loss(std::span<const std::vector<T>> x0_tokens, const NoiseSchedule& schedule,
                    std::uint64_t seed, std::span<T> grad, DitWorkspace<T>& ws) const;

  /// Loss (and optionally gradient, scaled by `grad_scale`) for one clean
  /// token sequence under a fixed (t, eps) draw.
  double draw_loss(std::span<const T> x0_tokens, const TrainingDraw& draw,
                   const NoiseSchedule& schedule, double grad_scale, std::span<T> grad,
                   DitWorkspace<T>& ws) const;

  /// Test-only fault: drops the softmax Jacobian correction in backward.
  void set_corrupt_attention_grad(bool on) { corrupt_attention_grad_ = on; }

 private:
  using Linear = detail::LinearRef;
  struct Block {
    Linear ada, qkv, proj, fc1, fc2;
  };

  Linear add_linear(const std::string& name, int in, int out);

  DitConfig cfg_;
  Dims4 latent_dims_;
  int channels_;
  Dims4 grid_;
  std::size_t n_ = 0, p_ = 0;
  ParamStore<T> params_;
  Linear x_embed_, t_fc1_, t_fc2_, final_ada_, head_;
  std::vector<Block> blocks_;
  std::vector<T> posenc_;
  AttentionMask mask_;
  bool corrupt_attention_grad_ = false;
};

template <typename T>
struct DitWorkspace {
  struct BlockCache {
    std::vector<T> x_in, ln1, rstd1, m1, qkv, probs, attn, a, x_mid, ln2, rstd2, m2, h, g, f, mod;
  };
  std::vector<T> traw, th1, ta1, c, sc;
  std::vector<BlockCache> blocks;
  std::vector<T> x_final, lnf, rstdf, mf, fmod;
  // Scratch for backward.
  std::vector<T> dx, dtmp, dmod, dsc, dqkv, dattn, dh, dln, head_q, head_k, head_v, head_o, dprob;
};

/// Max relative error of analytic vs central-difference gradients:
///   |g_a − g_n| / max(|g_a|, |g_n|, denom_floor)
/// The floor keeps parameters whose true gradient is ~0 (e.g. key biases,
/// which softmax ignores) from reporting pure round-off as error.
struct GradCheckOptions {
  int samples = 200;
  double step = 1e-5;
  double init_scale = 0.1;
  double denom_floor = 1e-5;
  int batch = 2;
  std::uint64_t seed = 1;
  bool corrupt_attention_grad = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

GradCheckResult grad_check(const DitConfig& cfg, const Dims4& latent_dims, int channels,
                           const GradCheckOptions& opts);

/// Trained model plus everything needed to sample from it.
struct DitCheckpoint {
  DitConfig config;
  Dims4 latent_dims{};
  int latent_channels = 1;
  double latent_shift = 0.0;
  double latent_scale = 1.0;
  double x0_clip = 0.0;  // max |normalized latent| seen in training; 0 = no clamp
  int iteration = 0;
  std::vector<double> loss_history;  // per-iteration batch loss
  Spacing latent_spacing{};
  int latent_factor = 1;
  std::string codebook_hash;
  std::vector<NamedTensor> params;

  [[nodiscard]] DitModel<float> model() const;
};

void save_dit_checkpoint(const std::filesystem::path& dir, const DitCheckpoint& ckpt);
DitCheckpoint load_dit_checkpoint(const std::filesystem::path& dir);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int iteration, DitCheckpoint last_good)
      : std::runtime_error("training diverged (non-finite loss) at iteration " +
                           std::to_string(iteration)),
        iteration_(iteration),
        last_good_(std::move(last_good)) {}
  [[nodiscard]] int iteration() const { return iteration_; }
  [[nodiscard]] const DitCheckpoint& last_good() const { return last_good_; }

 private:
  int iteration_;
  DitCheckpoint last_good_;
};

struct DitTrainHooks {
  std::function<void(int iteration, double smoothed_loss)> on_log;
  std::function<void(const DitCheckpoint&)> on_checkpoint;
};

/// Trailing-window mean of `history` ending at 1-based iteration `it`.
double smoothed_loss(std::span<const double> history, int it, int window);

/// Normalization applied to latents before diffusion: (z - shift) / scale.
std::pair<double, double> latent_normalization(std::span<const LatentVolume> latents);

DitCheckpoint train_dit(std::span<const LatentVolume> latents, const DitConfig& cfg,
                        const DitTrainHooks& hooks = {});

/// Deterministic evaluation of the training objective over `draws` fixed
/// (sample, t, eps) draws keyed by `seed`.
double evaluate_dit_loss(const DitCheckpoint& ckpt, std::span<const LatentVolume> latents,
                         int draws, std::uint64_t seed);

/// Ancestral sampling of `n` latents; sample i uses noise streams keyed by (seed, i).
std::vector<LatentVolume> sample_latents(const DitCheckpoint& ckpt, int n, std::uint64_t seed);

}  // namespace cinegen
