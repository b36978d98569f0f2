#pragma once

// 4D patchification, sine-cosine positional tables, and attention masks.
//
// Token order is d-major with t fastest over the patch grid. Inside a token
// the values are nested (pd, ph, pw, pt, channel), channel fastest.

#include <cstddef>
#include <string>
#include <vector>

#include "cinegen/volume.hpp"

namespace cinegen {

struct PatchSpec {
  int d = 1, h = 4, w = 4, t = 2;

  [[nodiscard]] int volume() const { return d * h * w * t; }
  bool operator==(const PatchSpec&) const = default;
};

struct TokenSequence {
  Dims4 grid{};             // patch-grid extents
  std::size_t width = 0;    // values per token
  std::vector<float> tokens;  // N × width, row-major

  [[nodiscard]] std::size_t count() const { return grid.count(); }
};

/// Patch-grid extents for a latent of `dims`; throws on non-divisibility.
Dims4 patch_grid(const Dims4& dims, const PatchSpec& spec);

TokenSequence patchify(const LatentVolume& z, const PatchSpec& spec);

/// Exact inverse of patchify for a latent of the given dims/channels.
LatentVolume unpatchify(const TokenSequence& tok, const PatchSpec& spec, const Dims4& dims,
                        int channels);

/// Standard 1D table: [sin(pos·ω_j) for j] ++ [cos(pos·ω_j) for j],
/// ω_j = 10000^(-2j/dim), j < dim/2.
std::vector<double> sincos_1d(double pos, int dim);

/// N × e table, e split into four e/4 blocks ordered (d, h, w, t), each the
/// 1D encoding of the patch coordinate along that axis.
std::vector<double> posenc_4d(const Dims4& grid, int e);

enum class MaskMode { full, slice_factorized };

std::string to_string(MaskMode m);
MaskMode mask_mode_from_string(const std::string& s);

/// Boolean N × N relation (row = query). Under slice_factorized, token i may
/// attend to token j iff they share the depth coordinate.
struct AttentionMask {
  std::size_t n = 0;
  MaskMode mode = MaskMode::full;
  std::vector<unsigned char> allowed;

  [[nodiscard]] bool at(std::size_t i, std::size_t j) const { return allowed[i * n + j] != 0; }
  [[nodiscard]] std::size_t allowed_count() const;
};

AttentionMask build_attention_mask(const Dims4& grid, MaskMode mode);

}  // namespace cinegen
