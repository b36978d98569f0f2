#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cinegen {

enum class VolumeKind { image, mask };

std::string to_string(VolumeKind k);
VolumeKind volume_kind_from_string(const std::string& s);

/// Extents of a (depth, height, width, time) grid.
struct Dims4 {
  int d = 1, h = 1, w = 1, t = 1;

  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(d) * h * w * t;
  }
  bool operator==(const Dims4&) const = default;
};

/// mm per depth step, mm per row, mm per column, seconds per frame.
struct Spacing {
  double d = 1.0, h = 1.0, w = 1.0, t = 1.0;
  bool operator==(const Spacing&) const = default;
};

/// Dense single-channel 4D grid, row-major with t fastest.
class Volume4D {
 public:
  Volume4D() = default;
  Volume4D(Dims4 dims, Spacing spacing, VolumeKind kind);
  Volume4D(Dims4 dims, Spacing spacing, VolumeKind kind, std::vector<float> data);

  [[nodiscard]] const Dims4& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] VolumeKind kind() const { return kind_; }
  void set_spacing(Spacing s);

  [[nodiscard]] std::size_t index(int d, int h, int w, int t) const {
    return ((static_cast<std::size_t>(d) * dims_.h + h) * dims_.w + w) * dims_.t + t;
  }
  float& at(int d, int h, int w, int t) { return data_[index(d, h, w, t)]; }
  [[nodiscard]] float at(int d, int h, int w, int t) const { return data_[index(d, h, w, t)]; }

  [[nodiscard]] std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  /// One depth slice laid out (h, w, t), t fastest.
  [[nodiscard]] std::vector<float> slice(int d) const;
  void set_slice(int d, std::span<const float> values);
  /// The (h, w) image of depth d at frame t.
  [[nodiscard]] std::vector<double> frame_image(int d, int t) const;

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;

  bool operator==(const Volume4D&) const = default;

 private:
  Dims4 dims_{};
  Spacing spacing_{};
  VolumeKind kind_ = VolumeKind::image;
  std::vector<float> data_;
};

/// 4D grid of emb-channel latent vectors, row-major (d, h, w, t, c).
struct LatentVolume {
  Dims4 dims{};
  int channels = 1;
  Spacing spacing{};
  std::vector<float> data;
  // Provenance of the encoder that produced it.
  int factor = 1;
  std::string codebook_hash;

  LatentVolume() = default;
  LatentVolume(Dims4 dims, int channels);

  [[nodiscard]] std::size_t index(int d, int h, int w, int t, int c) const {
    return (((static_cast<std::size_t>(d) * dims.h + h) * dims.w + w) * dims.t + t) * channels +
           c;
  }
  [[nodiscard]] std::size_t numel() const { return dims.count() * channels; }
  void validate() const;
  bool operator==(const LatentVolume&) const = default;
};

}  // namespace cinegen
