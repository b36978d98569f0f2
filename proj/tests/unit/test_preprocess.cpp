#include <doctest.h>

#include "cinegen/preprocess.hpp"

using namespace cinegen;

namespace {

// Value encodes its own coordinates so any index mix-up is visible.
Volume4D coded(Dims4 dims) {
  Volume4D v(dims, {}, VolumeKind::image);
  for (int d = 0; d < dims.d; ++d)
    for (int h = 0; h < dims.h; ++h)
      for (int w = 0; w < dims.w; ++w)
        for (int t = 0; t < dims.t; ++t)
          v.at(d, h, w, t) = static_cast<float>(((d * 1000 + h) * 1000 + w) * 100 + t + 1);
  return v;
}

}  // namespace

TEST_CASE("cyclic time resampling") {
  const auto v32 = coded({1, 2, 2, 32});
  CHECK(cyclic_time_resample(v32, 32) == v32);

  for (int t_in : {16, 20}) {
    const auto v = coded({1, 2, 2, t_in});
    const auto r = cyclic_time_resample(v, 32);
    REQUIRE(r.dims().t == 32);
    for (int i = 0; i < 32; ++i) CHECK(r.at(0, 1, 0, i) == v.at(0, 1, 0, i % t_in));
  }
}

TEST_CASE("center crop 300 -> 256 keeps rows and cols [22, 278)") {
  const auto v = coded({1, 300, 300, 1});
  const auto c = crop_or_pad(v, 1, 256, 256);
  REQUIRE(c.dims() == Dims4{1, 256, 256, 1});
  for (int h : {0, 100, 255})
    for (int w : {0, 17, 255}) CHECK(c.at(0, h, w, 0) == v.at(0, h + 22, w + 22, 0));
}

TEST_CASE("symmetric pad 200 -> 256 adds 28 zero rows and cols per side") {
  const auto v = coded({1, 200, 200, 1});
  const auto c = crop_or_pad(v, 1, 256, 256);
  CHECK(c.at(0, 27, 100, 0) == 0.0F);
  CHECK(c.at(0, 228, 100, 0) == 0.0F);
  CHECK(c.at(0, 100, 27, 0) == 0.0F);
  CHECK(c.at(0, 100, 228, 0) == 0.0F);
  CHECK(c.at(0, 28, 28, 0) == v.at(0, 0, 0, 0));
  CHECK(c.at(0, 227, 227, 0) == v.at(0, 199, 199, 0));
}

TEST_CASE("odd depth deficit pads on the high side") {
  const auto v = coded({5, 2, 2, 1});
  const auto c = crop_or_pad(v, 6, 2, 2);
  for (int d = 0; d < 5; ++d) CHECK(c.at(d, 1, 1, 0) == v.at(d, 1, 1, 0));
  CHECK(c.at(5, 1, 1, 0) == 0.0F);
}
