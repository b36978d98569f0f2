#include "cinegen/volume.hpp"

#include <cmath>
#include <stdexcept>

namespace cinegen {

std::string to_string(VolumeKind k) { return k == VolumeKind::mask ? "mask" : "image"; }

VolumeKind volume_kind_from_string(const std::string& s) {
  if (s == "image") return VolumeKind::image;
  if (s == "mask") return VolumeKind::mask;
  throw std::invalid_argument("unknown volume kind '" + s + "'");
}

namespace {

void check_dims(const Dims4& dims) {
  if (dims.d < 1 || dims.h < 1 || dims.w < 1 || dims.t < 1)
    throw std::invalid_argument("volume dimensions must all be >= 1");
}

void check_spacing(const Spacing& s) {
  if (!(s.d > 0 && s.h > 0 && s.w > 0 && s.t > 0))
    throw std::invalid_argument("volume spacing components must be > 0");
}

}  // namespace

Volume4D::Volume4D(Dims4 dims, Spacing spacing, VolumeKind kind)
    : dims_(dims), spacing_(spacing), kind_(kind) {
  check_dims(dims_);
  check_spacing(spacing_);
  data_.assign(dims_.count(), 0.0F);
}

Volume4D::Volume4D(Dims4 dims, Spacing spacing, VolumeKind kind, std::vector<float> data)
    : dims_(dims), spacing_(spacing), kind_(kind), data_(std::move(data)) {
  validate();
}

void Volume4D::set_spacing(Spacing s) {
  check_spacing(s);
  spacing_ = s;
}

std::vector<float> Volume4D::slice(int d) const {
  const std::size_t n = static_cast<std::size_t>(dims_.h) * dims_.w * dims_.t;
  const auto begin = data_.begin() + static_cast<std::ptrdiff_t>(d * n);
  return {begin, begin + static_cast<std::ptrdiff_t>(n)};
}

void Volume4D::set_slice(int d, std::span<const float> values) {
  const std::size_t n = static_cast<std::size_t>(dims_.h) * dims_.w * dims_.t;
  if (values.size() != n) throw std::invalid_argument("slice size mismatch");
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(d * n));
}

std::vector<double> Volume4D::frame_image(int d, int t) const {
  std::vector<double> img(static_cast<std::size_t>(dims_.h) * dims_.w);
  for (int y = 0; y < dims_.h; ++y)
    for (int x = 0; x < dims_.w; ++x)
      img[static_cast<std::size_t>(y) * dims_.w + x] = at(d, y, x, t);
  return img;
}

void Volume4D::validate() const {
  check_dims(dims_);
  check_spacing(spacing_);
  if (data_.size() != dims_.count())
    throw std::invalid_argument("volume payload size does not match its dimensions");
  for (float v : data_) {
    if (!std::isfinite(v)) throw std::invalid_argument("volume contains non-finite values");
    if (kind_ == VolumeKind::mask && v != 0.0F && v != 1.0F)
      throw std::invalid_argument("mask volume contains a value outside {0, 1}");
  }
}

LatentVolume::LatentVolume(Dims4 d, int c) : dims(d), channels(c) {
  if (c < 1) throw std::invalid_argument("latent channel count must be >= 1");
  check_dims(dims);
  data.assign(numel(), 0.0F);
}

void LatentVolume::validate() const {
  check_dims(dims);
  if (channels < 1) throw std::invalid_argument("latent channel count must be >= 1");
  if (data.size() != numel())
    throw std::invalid_argument("latent payload size does not match its dimensions");
  for (float v : data)
    if (!std::isfinite(v)) throw std::invalid_argument("latent contains non-finite values");
}

}  // namespace cinegen
