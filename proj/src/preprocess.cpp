#include "cinegen/preprocess.hpp"

#include <stdexcept>

namespace cinegen {

Volume4D cyclic_time_resample(const Volume4D& v, int t_target) {
  if (t_target < 1) throw std::invalid_argument("t_target must be >= 1");
  const Dims4 in = v.dims();
  Volume4D out({in.d, in.h, in.w, t_target}, v.spacing(), v.kind());
  for (int d = 0; d < in.d; ++d)
    for (int h = 0; h < in.h; ++h)
      for (int w = 0; w < in.w; ++w)
        for (int i = 0; i < t_target; ++i) out.at(d, h, w, i) = v.at(d, h, w, i % in.t);
  return out;
}

namespace {

// Offset of the output window inside the input (negative when padding).
int window_offset(int in, int out) {
  if (in >= out) return (in - out) / 2;
  return -((out - in) / 2);
}

}  // namespace

Volume4D crop_or_pad(const Volume4D& v, int d, int h, int w) {
  if (d < 1 || h < 1 || w < 1) throw std::invalid_argument("crop_or_pad target dims must be >= 1");
  const Dims4 in = v.dims();
  const int od = window_offset(in.d, d);
  const int oh = window_offset(in.h, h);
  const int ow = window_offset(in.w, w);
  Volume4D out({d, h, w, in.t}, v.spacing(), v.kind());
  for (int z = 0; z < d; ++z) {
    const int sz = z + od;
    if (sz < 0 || sz >= in.d) continue;
    for (int y = 0; y < h; ++y) {
      const int sy = y + oh;
      if (sy < 0 || sy >= in.h) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x + ow;
        if (sx < 0 || sx >= in.w) continue;
        for (int t = 0; t < in.t; ++t) out.at(z, y, x, t) = v.at(sz, sy, sx, t);
      }
    }
  }
  return out;
}

}  // namespace cinegen
