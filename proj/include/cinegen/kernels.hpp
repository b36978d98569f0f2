#pragma once

// Dense compute kernels shared by the autoencoder and the transformer.
//
// Every kernel in `kernels::` is OpenMP-parallel over independent output
// rows: each output element is produced by exactly one thread with a fixed
// summation order, so results do not depend on the thread count. The
// `kernels::reference` namespace holds straightforward serial versions used
// by the tests and the benchmark as the ground truth.
//
// All matrices are row-major and contiguous.

#include <cstddef>
#include <span>
#include <vector>

namespace cinegen::kernels {

/// C[m×n] (+)= A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// C[m×n] (+)= A[k×m]ᵀ · B[k×n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// C[m×n] (+)= A[m×k] · B[n×k]ᵀ
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// out[cols×rows] = in[rows×cols]ᵀ
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

/// Geometry of a cubic-kernel 3D convolution over a channels-first
/// [C][X][Y][Z] grid.
struct ConvGeometry {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int in_x = 1, in_y = 1, in_z = 1;

  [[nodiscard]] int out_x() const { return (in_x + 2 * pad - kernel) / stride + 1; }
  [[nodiscard]] int out_y() const { return (in_y + 2 * pad - kernel) / stride + 1; }
  [[nodiscard]] int out_z() const { return (in_z + 2 * pad - kernel) / stride + 1; }
  [[nodiscard]] std::size_t in_voxels() const {
    return static_cast<std::size_t>(in_x) * in_y * in_z;
  }
  [[nodiscard]] std::size_t out_voxels() const {
    return static_cast<std::size_t>(out_x()) * out_y() * out_z();
  }
  [[nodiscard]] std::size_t patch_size() const {
    return static_cast<std::size_t>(in_channels) * kernel * kernel * kernel;
  }
};

/// col[patch_size × out_voxels] gathered from in[C][X][Y][Z]; zero outside.
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col);

/// Scatter-add of col back onto in-grid gradients (adjoint of im2col).
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* in_grad);

/// out[Cout][out voxels] = W[Cout × patch] · im2col(in) + bias.
/// `scratch` is resized as needed and keeps the column matrix for backward.
template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out,
                    std::vector<T>& scratch);

/// Accumulates weight/bias gradients and writes (not accumulates) the input
/// gradient if `in_grad` is non-null. `col` must be the forward scratch.
template <typename T>
void conv3d_backward(const ConvGeometry& g, const T* col, const T* weight, const T* out_grad,
                     T* weight_grad, T* bias_grad, T* in_grad, std::vector<T>& scratch);

/// Transposed convolution with kernel 2 and stride 2 (non-overlapping
/// upsampling). weight layout [Cout·8 × Cin], row index = co·8 + (a·4+b·2+c).
template <typename T>
void upconv2_forward(int cin, int cout, int x, int y, int z, const T* in, const T* weight,
                     const T* bias, T* out, std::vector<T>& scratch);

template <typename T>
void upconv2_backward(int cin, int cout, int x, int y, int z, const T* in, const T* weight,
                      const T* out_grad, T* weight_grad, T* bias_grad, T* in_grad,
                      std::vector<T>& scratch);

/// Row-wise masked softmax of scores[rows×cols] in place. A zero entry in
/// `allowed` (when non-empty) forces probability exactly 0.
template <typename T>
void masked_softmax_rows(std::size_t rows, std::size_t cols, T* scores,
                         std::span<const unsigned char> allowed);

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);

/// Direct (loop-nest) convolution, no im2col.
template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out);

template <typename T>
void masked_softmax_rows(std::size_t rows, std::size_t cols, T* scores,
                         std::span<const unsigned char> allowed);

}  // namespace reference

int max_threads();
void set_threads(int n);

}  // namespace cinegen::kernels
