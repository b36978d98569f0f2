#pragma once

// Slice-wise spatiotemporal VQ autoencoder. One depth slice (h, w, t) is a
// single-channel 3D grid; the encoder downsamples all three axes by f and
// the bottleneck snaps each latent vector to its nearest codebook entry.
// Whole volumes are encoded slice by slice and stacked along depth.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cinegen/kernels.hpp"
#include "cinegen/params.hpp"
#include "cinegen/volume.hpp"

namespace cinegen {

struct VqConfig {
  int f = 4;                     // per-axis compression, power of two
  int codebook_size = 256;
  int emb = 8;
  double beta = 0.25;            // commitment weight
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 4;            // depth slices per optimizer step
  std::vector<int> widths{16, 32, 32};  // channels per resolution level, finest first
  std::uint64_t seed = 0;

  void validate() const;
  /// log2(f)
  [[nodiscard]] int levels() const;
  /// Channel width at resolution level i (0 = input resolution).
  [[nodiscard]] int width(int level) const;
};

nlohmann::json to_json(const VqConfig& cfg);
VqConfig vq_config_from_json(const nlohmann::json& j, std::vector<std::string>& problems,
                             const std::string& prefix = "");

template <typename T>
struct QuantizeResult {
  std::vector<int> indices;
  double codebook_loss = 0.0;    // mean over positions of ‖sg(z_e) − z_q‖²
  double commitment_loss = 0.0;  // mean over positions of ‖z_e − sg(z_q)‖²
};

/// Nearest-entry quantization. z_e, z_q: [positions × emb]; codebook [K × emb].
/// Ties go to the lowest index.
template <typename T>
QuantizeResult<T> vq_quantize(std::span<const T> z_e, std::span<const T> codebook, int emb,
                              std::span<T> z_q);

/// Spatial extents of one depth slice.
struct SliceDims {
  int h = 1, w = 1, t = 1;
  [[nodiscard]] std::size_t count() const { return static_cast<std::size_t>(h) * w * t; }
};

template <typename T>
struct VqWorkspace {
  struct LayerCache {
    std::vector<T> in, pre, col;
    SliceDims dims;
  };
  std::vector<LayerCache> enc, dec;
  std::vector<T> a, b, scratch;
  std::vector<T> z_e, z_q, dz, x_hat;
};

template <typename T>
class VqModel {
 public:
  explicit VqModel(const VqConfig& cfg);

  void init(std::uint64_t seed);

  [[nodiscard]] const VqConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  [[nodiscard]] const ParamStore<T>& params() const { return params_; }

  std::span<T> codebook();
  [[nodiscard]] std::span<const T> codebook() const;

  /// Intensity range used to normalize inputs and clamp decoder outputs.
  void set_range(double lo, double hi);
  [[nodiscard]] double range_lo() const { return lo_; }
  [[nodiscard]] double range_hi() const { return hi_; }

  [[nodiscard]] SliceDims latent_dims(const SliceDims& s) const;

  /// Encoder output for one slice, channels last: [latent positions × emb].
  void encode_slice(std::span<const T> x, const SliceDims& s, std::vector<T>& z_e,
                    VqWorkspace<T>& ws) const;
  /// Decoder output in the normalized intensity domain (no clamp).
  void decode_slice(std::span<const T> z_q, const SliceDims& latent, std::vector<T>& x_hat,
                    VqWorkspace<T>& ws) const;

  /// Straight-through objective as a function of the encoder output with the
  /// quantization offset held fixed:
  ///   L(z_e) = mse(dec(z_e + c), x) + beta·mean‖z_e − z_q0‖²,  c = z_q0 − z_e0.
  /// Returns L, stores the reconstruction term in `recon` when non-null and
  /// writes grad_scale·dL/dz_e when `dz_e` is non-null. Decoder parameter
  /// gradients (also scaled) are accumulated into `grad` when non-empty.
  double st_loss(std::span<const T> x, const SliceDims& s, std::span<const T> z_e,
                 std::span<const T> offset, std::span<const T> z_q0, double* recon,
                 std::vector<T>* dz_e, std::span<T> grad, double grad_scale,
                 VqWorkspace<T>& ws) const;

  struct StepStats {
    double recon = 0.0, codebook = 0.0, commitment = 0.0;
    std::vector<int> indices;
  };

  /// Full loss for one normalized slice; accumulates parameter gradients
  /// (scaled by `grad_scale`) into `grad`.
  StepStats slice_step(std::span<const T> x, const SliceDims& s, std::span<T> grad,
                       double grad_scale, VqWorkspace<T>& ws) const;

  /// Normalized ↔ raw intensity.
  [[nodiscard]] T normalize(T v) const;
  [[nodiscard]] T denormalize(T v) const;

 private:
  struct Layer {
    bool up = false;  // kernel-2 stride-2 transposed convolution
    int cin = 1, cout = 1, kernel = 3, stride = 1;
    std::size_t w = 0, b = 0;
    bool act = true;  // SiLU after this layer
  };
  using Cache = typename VqWorkspace<T>::LayerCache;

  void run_forward(const std::vector<Layer>& stack, std::span<const T> in, SliceDims dims,
                   std::vector<Cache>& cache, std::vector<T>& out) const;
  /// `dout` is consumed; writes the input gradient into `din` if non-null.
  void run_backward(const std::vector<Layer>& stack, std::vector<T>& dout, SliceDims dims,
                    std::vector<Cache>& cache, std::span<T> grad, std::vector<T>* din,
                    VqWorkspace<T>& ws) const;

  void add_conv(std::vector<Layer>& stack, const std::string& name, int cin, int cout, int k,
                int stride, bool act);
  void add_up(std::vector<Layer>& stack, const std::string& name, int cin, int cout, bool act);

  VqConfig cfg_;
  ParamStore<T> params_;
  std::vector<Layer> enc_, dec_;
  std::size_t codebook_offset_ = 0;
  double lo_ = 0.0, hi_ = 1.0;
};

struct VqCheckpoint {
  VqConfig config;
  double range_lo = 0.0, range_hi = 1.0;
  int epoch = 0;
  std::vector<double> mse_history;  // per-epoch mean reconstruction MSE
  std::vector<std::int64_t> usage;  // per-entry use count in the last epoch
  std::string codebook_hash;
  std::vector<NamedTensor> params;

  [[nodiscard]] VqModel<float> model() const;
};

std::string codebook_hash(std::span<const float> codebook);

struct VqTrainHooks {
  std::function<void(int epoch, double mse)> on_epoch;
};

/// mse_history is measured on normalized intensities ([lo, hi] mapped to [-1, 1]).
VqCheckpoint train_vq(std::span<const Volume4D> data, const VqConfig& cfg,
                      const VqTrainHooks& hooks = {});

/// Quantized latents of every depth slice stacked along depth.
LatentVolume encode_volume(const Volume4D& v, const VqModel<float>& model,
                           const std::string& hash = "");
Volume4D decode_volume(const LatentVolume& z, const VqModel<float>& model);

/// Snaps every latent vector to its nearest codebook entry.
LatentVolume quantize_latent(const LatentVolume& z, const VqModel<float>& model);

/// Mean squared error between a volume and its reconstruction (raw intensities).
double reconstruction_mse(const Volume4D& v, const VqModel<float>& model);

void save_vq_checkpoint(const std::filesystem::path& dir, const VqCheckpoint& ckpt);
VqCheckpoint load_vq_checkpoint(const std::filesystem::path& dir);

}  // namespace cinegen
