#include "cinegen/tokenizer.hpp"

#include <cmath>
#include <stdexcept>

namespace cinegen {

Dims4 patch_grid(const Dims4& dims, const PatchSpec& spec) {
  if (spec.d < 1 || spec.h < 1 || spec.w < 1 || spec.t < 1)
    throw std::invalid_argument("patch extents must be >= 1");
  if (dims.d % spec.d != 0 || dims.h % spec.h != 0 || dims.w % spec.w != 0 ||
      dims.t % spec.t != 0)
    throw std::invalid_argument("patch spec does not divide the latent extents");
  return {dims.d / spec.d, dims.h / spec.h, dims.w / spec.w, dims.t / spec.t};
}

namespace {

// Calls fn(token, offset_in_token, latent_index) for every latent value.
template <typename Fn>
void for_each_patch_element(const Dims4& dims, int channels, const PatchSpec& spec,
                            const Dims4& grid, Fn&& fn) {
  std::size_t token = 0;
  for (int gd = 0; gd < grid.d; ++gd)
    for (int gh = 0; gh < grid.h; ++gh)
      for (int gw = 0; gw < grid.w; ++gw)
        for (int gt = 0; gt < grid.t; ++gt, ++token) {
          std::size_t off = 0;
          for (int pd = 0; pd < spec.d; ++pd)
            for (int ph = 0; ph < spec.h; ++ph)
              for (int pw = 0; pw < spec.w; ++pw)
                for (int pt = 0; pt < spec.t; ++pt) {
                  const std::size_t base =
                      ((static_cast<std::size_t>(gd * spec.d + pd) * dims.h + gh * spec.h + ph) *
                           dims.w +
                       gw * spec.w + pw) *
                          dims.t +
                      gt * spec.t + pt;
                  for (int c = 0; c < channels; ++c, ++off)
                    fn(token, off, base * channels + c);
                }
        }
}

}  // namespace

TokenSequence patchify(const LatentVolume& z, const PatchSpec& spec) {
  TokenSequence seq;
  seq.grid = patch_grid(z.dims, spec);
  seq.width = static_cast<std::size_t>(spec.volume()) * z.channels;
  seq.tokens.resize(seq.count() * seq.width);
  for_each_patch_element(z.dims, z.channels, spec, seq.grid,
                         [&](std::size_t tok, std::size_t off, std::size_t idx) {
                           seq.tokens[tok * seq.width + off] = z.data[idx];
                         });
  return seq;
}

LatentVolume unpatchify(const TokenSequence& tok, const PatchSpec& spec, const Dims4& dims,
                        int channels) {
  const Dims4 grid = patch_grid(dims, spec);
  if (!(grid == tok.grid))
    throw std::invalid_argument("token grid does not match the latent dims and patch spec");
  const std::size_t width = static_cast<std::size_t>(spec.volume()) * channels;
  if (tok.width != width || tok.tokens.size() != grid.count() * width)
    throw std::invalid_argument("token sequence size is inconsistent with dims and spec");
  LatentVolume z(dims, channels);
  for_each_patch_element(dims, channels, spec, grid,
                         [&](std::size_t t, std::size_t off, std::size_t idx) {
                           z.data[idx] = tok.tokens[t * width + off];
                         });
  return z;
}

std::vector<double> sincos_1d(double pos, int dim) {
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (int j = 0; j < half; ++j) {
    const double omega = std::pow(10000.0, -2.0 * j / dim);
    out[static_cast<std::size_t>(j)] = std::sin(pos * omega);
    out[static_cast<std::size_t>(half + j)] = std::cos(pos * omega);
  }
  return out;
}

std::vector<double> posenc_4d(const Dims4& grid, int e) {
  if (e <= 0 || e % 8 != 0)
    throw std::invalid_argument("positional encoding width must be divisible by 8");
  const int q = e / 4;
  std::vector<double> table(grid.count() * static_cast<std::size_t>(e));
  std::size_t row = 0;
  for (int d = 0; d < grid.d; ++d)
    for (int h = 0; h < grid.h; ++h)
      for (int w = 0; w < grid.w; ++w)
        for (int t = 0; t < grid.t; ++t, ++row) {
          const int coords[4] = {d, h, w, t};
          for (int axis = 0; axis < 4; ++axis) {
            const auto block = sincos_1d(coords[axis], q);
            std::copy(block.begin(), block.end(),
                      table.begin() + static_cast<std::ptrdiff_t>(row * e + axis * q));
          }
        }
  return table;
}

std::string to_string(MaskMode m) { return m == MaskMode::full ? "full" : "slice_factorized"; }

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "full") return MaskMode::full;
  if (s == "slice_factorized") return MaskMode::slice_factorized;
  throw std::invalid_argument("unknown mask mode '" + s + "'");
}

std::size_t AttentionMask::allowed_count() const {
  std::size_t c = 0;
  for (auto v : allowed) c += v != 0;
  return c;
}

AttentionMask build_attention_mask(const Dims4& grid, MaskMode mode) {
  AttentionMask m;
  m.n = grid.count();
  m.mode = mode;
  m.allowed.assign(m.n * m.n, 1);
  if (mode == MaskMode::slice_factorized) {
    const std::size_t per_slice = static_cast<std::size_t>(grid.h) * grid.w * grid.t;
    for (std::size_t i = 0; i < m.n; ++i)
      for (std::size_t j = 0; j < m.n; ++j)
        m.allowed[i * m.n + j] = (i / per_slice) == (j / per_slice) ? 1 : 0;
  }
  return m;
}

}  // namespace cinegen
