#pragma once

#include "cinegen/volume.hpp"

namespace cinegen {

/// Standardizes the frame count by cyclic repetition: out frame i = in frame (i mod t).
Volume4D cyclic_time_resample(const Volume4D& v, int t_target);

/// Symmetric center crop / zero pad of (d, h, w); t untouched. An odd
/// surplus or deficit puts the extra element on the high-index side.
Volume4D crop_or_pad(const Volume4D& v, int d, int h, int w);

}  // namespace cinegen
