#include "cinegen/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cinegen::kernels {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColTile = 512;

// C rows [i0, i0+rb) over column tile [j0, j1); a(i, p) = a[i*ars + p*acs].
template <typename T>
inline void gemm_tile(std::size_t i0, std::size_t rb, std::size_t j0, std::size_t j1,
                      std::size_t n, std::size_t k, const T* a, std::size_t ars, std::size_t acs,
                      const T* b, T* c) {
  if (rb == kRowBlock) {
    T* c0 = c + (i0 + 0) * n;
    T* c1 = c + (i0 + 1) * n;
    T* c2 = c + (i0 + 2) * n;
    T* c3 = c + (i0 + 3) * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a0 = a[(i0 + 0) * ars + p * acs];
      const T a1 = a[(i0 + 1) * ars + p * acs];
      const T a2 = a[(i0 + 2) * ars + p * acs];
      const T a3 = a[(i0 + 3) * ars + p * acs];
      const T* br = b + p * n;
#pragma omp simd
      for (std::size_t j = j0; j < j1; ++j) {
        const T bv = br[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
    return;
  }
  for (std::size_t r = 0; r < rb; ++r) {
    T* cr = c + (i0 + r) * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[(i0 + r) * ars + p * acs];
      const T* br = b + p * n;
#pragma omp simd
      for (std::size_t j = j0; j < j1; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename T>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t ars,
                  std::size_t acs, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  const auto blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rb = std::min(kRowBlock, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kColTile) {
      gemm_tile(i0, rb, j0, std::min(n, j0 + kColTile), n, k, a, ars, acs, b, c);
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, k, 1, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, 1, m, b, c, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_strided(m, n, k, a, k, 1, bt.data(), c, accumulate);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t tile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
      const std::size_t r1 = std::min(rows, r0 + tile);
      const std::size_t c1 = std::min(cols, c0 + tile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) out[cc * rows + r] = in[r * cols + cc];
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
  const int ox = g.out_x(), oy = g.out_y(), oz = g.out_z();
  const std::size_t nout = g.out_voxels();
  const int kk = g.kernel;
  const auto rows = static_cast<std::ptrdiff_t>(g.patch_size());
#pragma omp parallel for schedule(static) if (nout * rows > 65536)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    const int c = static_cast<int>(row / (kk * kk * kk));
    const int rem = static_cast<int>(row % (kk * kk * kk));
    const int kx = rem / (kk * kk), ky = (rem / kk) % kk, kz = rem % kk;
    const T* src = in + static_cast<std::size_t>(c) * g.in_voxels();
    T* dst = col + static_cast<std::size_t>(row) * nout;
    std::size_t o = 0;
    for (int x = 0; x < ox; ++x) {
      const int ix = x * g.stride - g.pad + kx;
      for (int y = 0; y < oy; ++y) {
        const int iy = y * g.stride - g.pad + ky;
        const bool row_ok = ix >= 0 && ix < g.in_x && iy >= 0 && iy < g.in_y;
        const T* line = row_ok ? src + (static_cast<std::size_t>(ix) * g.in_y + iy) * g.in_z
                               : nullptr;
        for (int z = 0; z < oz; ++z, ++o) {
          const int iz = z * g.stride - g.pad + kz;
          dst[o] = (row_ok && iz >= 0 && iz < g.in_z) ? line[iz] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* in_grad) {
  const int ox = g.out_x(), oy = g.out_y(), oz = g.out_z();
  const std::size_t nout = g.out_voxels();
  const int kk = g.kernel;
  const int k3 = kk * kk * kk;
  std::fill(in_grad, in_grad + g.in_voxels() * g.in_channels, T(0));
  // Channels are independent: parallel over channels keeps writes disjoint.
#pragma omp parallel for schedule(static) if (g.in_channels > 1)
  for (int c = 0; c < g.in_channels; ++c) {
    T* dst = in_grad + static_cast<std::size_t>(c) * g.in_voxels();
    for (int rem = 0; rem < k3; ++rem) {
      const int kx = rem / (kk * kk), ky = (rem / kk) % kk, kz = rem % kk;
      const T* src = col + (static_cast<std::size_t>(c) * k3 + rem) * nout;
      std::size_t o = 0;
      for (int x = 0; x < ox; ++x) {
        const int ix = x * g.stride - g.pad + kx;
        for (int y = 0; y < oy; ++y) {
          const int iy = y * g.stride - g.pad + ky;
          if (ix < 0 || ix >= g.in_x || iy < 0 || iy >= g.in_y) {
            o += static_cast<std::size_t>(oz);
            continue;
          }
          T* line = dst + (static_cast<std::size_t>(ix) * g.in_y + iy) * g.in_z;
          for (int z = 0; z < oz; ++z, ++o) {
            const int iz = z * g.stride - g.pad + kz;
            if (iz >= 0 && iz < g.in_z) line[iz] += src[o];
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out,
                    std::vector<T>& scratch) {
  const std::size_t nout = g.out_voxels();
  scratch.resize(g.patch_size() * nout);
  im2col(g, in, scratch.data());
  gemm_nn(static_cast<std::size_t>(g.out_channels), nout, g.patch_size(), weight, scratch.data(),
          out, false);
  if (bias != nullptr) {
    for (int co = 0; co < g.out_channels; ++co) {
      T* row = out + static_cast<std::size_t>(co) * nout;
      const T bv = bias[co];
      for (std::size_t o = 0; o < nout; ++o) row[o] += bv;
    }
  }
}

template <typename T>
void conv3d_backward(const ConvGeometry& g, const T* col, const T* weight, const T* out_grad,
                     T* weight_grad, T* bias_grad, T* in_grad, std::vector<T>& scratch) {
  const std::size_t nout = g.out_voxels();
  const std::size_t patch = g.patch_size();
  const auto cout = static_cast<std::size_t>(g.out_channels);
  if (bias_grad != nullptr) {
    for (std::size_t co = 0; co < cout; ++co) {
      T s = 0;
      const T* row = out_grad + co * nout;
      for (std::size_t o = 0; o < nout; ++o) s += row[o];
      bias_grad[co] += s;
    }
  }
  // dW[cout×patch] += dOut[cout×nout] · colᵀ, computed as (col · dOutᵀ)ᵀ.
  std::vector<T> dout_t(nout * cout);
  transpose(cout, nout, out_grad, dout_t.data());
  std::vector<T> dw_t(patch * cout);
  gemm_nn(patch, cout, nout, col, dout_t.data(), dw_t.data(), false);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t p = 0; p < patch; ++p) weight_grad[co * patch + p] += dw_t[p * cout + co];
  if (in_grad != nullptr) {
    scratch.resize(patch * nout);
    gemm_tn(patch, nout, cout, weight, out_grad, scratch.data(), false);
    col2im(g, scratch.data(), in_grad);
  }
}

template <typename T>
void upconv2_forward(int cin, int cout, int x, int y, int z, const T* in, const T* weight,
                     const T* bias, T* out, std::vector<T>& scratch) {
  const std::size_t nin = static_cast<std::size_t>(x) * y * z;
  const std::size_t rows = static_cast<std::size_t>(cout) * 8;
  scratch.resize(rows * nin);
  gemm_nn(rows, nin, static_cast<std::size_t>(cin), weight, in, scratch.data(), false);
  const int ox = 2 * x, oy = 2 * y, oz = 2 * z;
  const std::size_t nout = static_cast<std::size_t>(ox) * oy * oz;
#pragma omp parallel for schedule(static) if (cout > 1)
  for (int co = 0; co < cout; ++co) {
    T* dst = out + static_cast<std::size_t>(co) * nout;
    const T bv = bias != nullptr ? bias[co] : T(0);
    for (int off = 0; off < 8; ++off) {
      const int a = off >> 2, b = (off >> 1) & 1, c = off & 1;
      const T* src = scratch.data() + (static_cast<std::size_t>(co) * 8 + off) * nin;
      std::size_t i = 0;
      for (int ix = 0; ix < x; ++ix)
        for (int iy = 0; iy < y; ++iy) {
          T* line = dst + (static_cast<std::size_t>(2 * ix + a) * oy + (2 * iy + b)) * oz + c;
          for (int iz = 0; iz < z; ++iz, ++i) line[2 * iz] = src[i] + bv;
        }
    }
  }
}

template <typename T>
void upconv2_backward(int cin, int cout, int x, int y, int z, const T* in, const T* weight,
                      const T* out_grad, T* weight_grad, T* bias_grad, T* in_grad,
                      std::vector<T>& scratch) {
  const std::size_t nin = static_cast<std::size_t>(x) * y * z;
  const std::size_t rows = static_cast<std::size_t>(cout) * 8;
  const int oy = 2 * y, oz = 2 * z;
  const std::size_t nout = static_cast<std::size_t>(2 * x) * oy * oz;
  scratch.resize(rows * nin);
  for (int co = 0; co < cout; ++co) {
    const T* src = out_grad + static_cast<std::size_t>(co) * nout;
    if (bias_grad != nullptr) {
      T s = 0;
      for (std::size_t o = 0; o < nout; ++o) s += src[o];
      bias_grad[co] += s;
    }
    for (int off = 0; off < 8; ++off) {
      const int a = off >> 2, b = (off >> 1) & 1, c = off & 1;
      T* dst = scratch.data() + (static_cast<std::size_t>(co) * 8 + off) * nin;
      std::size_t i = 0;
      for (int ix = 0; ix < x; ++ix)
        for (int iy = 0; iy < y; ++iy) {
          const T* line =
              src + (static_cast<std::size_t>(2 * ix + a) * oy + (2 * iy + b)) * oz + c;
          for (int iz = 0; iz < z; ++iz, ++i) dst[i] = line[2 * iz];
        }
    }
  }
  // dW[rows×cin] += G[rows×nin] · inᵀ
  gemm_nt(rows, static_cast<std::size_t>(cin), nin, scratch.data(), in, weight_grad, true);
  if (in_grad != nullptr) {
    gemm_tn(static_cast<std::size_t>(cin), nin, rows, weight, scratch.data(), in_grad, false);
  }
}

template <typename T>
void masked_softmax_rows(std::size_t rows, std::size_t cols, T* scores,
                         std::span<const unsigned char> allowed) {
  const bool masked = !allowed.empty();
#pragma omp parallel for schedule(static) if (rows * cols > 65536)
  for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(rows); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    T* row = scores + r * cols;
    const unsigned char* ok = masked ? allowed.data() + r * cols : nullptr;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (!masked || ok[c]) mx = std::max(mx, row[c]);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (masked && !ok[c]) {
        row[c] = 0;
        continue;
      }
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const T inv = T(1) / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out) {
  const int ox = g.out_x(), oy = g.out_y(), oz = g.out_z();
  const int kk = g.kernel;
  for (int co = 0; co < g.out_channels; ++co)
    for (int x = 0; x < ox; ++x)
      for (int y = 0; y < oy; ++y)
        for (int z = 0; z < oz; ++z) {
          T s = bias != nullptr ? bias[co] : T(0);
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int kx = 0; kx < kk; ++kx)
              for (int ky = 0; ky < kk; ++ky)
                for (int kz = 0; kz < kk; ++kz) {
                  const int ix = x * g.stride - g.pad + kx;
                  const int iy = y * g.stride - g.pad + ky;
                  const int iz = z * g.stride - g.pad + kz;
                  if (ix < 0 || ix >= g.in_x || iy < 0 || iy >= g.in_y || iz < 0 ||
                      iz >= g.in_z)
                    continue;
                  const std::size_t widx =
                      ((static_cast<std::size_t>(co) * g.in_channels + ci) * kk + kx) * kk * kk +
                      static_cast<std::size_t>(ky) * kk + kz;
                  const std::size_t iidx =
                      ((static_cast<std::size_t>(ci) * g.in_x + ix) * g.in_y + iy) * g.in_z + iz;
                  s += weight[widx] * in[iidx];
                }
          out[((static_cast<std::size_t>(co) * ox + x) * oy + y) * oz + z] = s;
        }
}

template <typename T>
void masked_softmax_rows(std::size_t rows, std::size_t cols, T* scores,
                         std::span<const unsigned char> allowed) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = scores + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (allowed.empty() || allowed[r * cols + c]) mx = std::max(mx, row[c]);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const bool ok = allowed.empty() || allowed[r * cols + c];
      row[c] = ok ? std::exp(row[c] - mx) : T(0);
      sum += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
}

}  // namespace reference

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

#define CINEGEN_INSTANTIATE(T)                                                              \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,     \
                           bool);                                                             \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,     \
                           bool);                                                             \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,     \
                           bool);                                                             \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);                         \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                 \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                 \
  template void conv3d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*,      \
                                  std::vector<T>&);                                           \
  template void conv3d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*, \
                                   T*, std::vector<T>&);                                      \
  template void upconv2_forward<T>(int, int, int, int, int, const T*, const T*, const T*, T*, \
                                   std::vector<T>&);                                          \
  template void upconv2_backward<T>(int, int, int, int, int, const T*, const T*, const T*,    \
                                    T*, T*, T*, std::vector<T>&);                             \
  template void masked_softmax_rows<T>(std::size_t, std::size_t, T*,                          \
                                       std::span<const unsigned char>);                       \
  template void reference::gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*,        \
                                      const T*, T*, bool);                                    \
  template void reference::gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*,        \
                                      const T*, T*, bool);                                    \
  template void reference::gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*,        \
                                      const T*, T*, bool);                                    \
  template void reference::conv3d_forward<T>(const ConvGeometry&, const T*, const T*,         \
                                             const T*, T*);                                   \
  template void reference::masked_softmax_rows<T>(std::size_t, std::size_t, T*,               \
                                                  std::span<const unsigned char>);

CINEGEN_INSTANTIATE(float)
CINEGEN_INSTANTIATE(double)

#undef CINEGEN_INSTANTIATE

}  // namespace cinegen::kernels
